"""Row gather/scatter, column standardization, cross-correlation and Shuffled-DBN"""
