"""Cross-correlation and negative-sampling losses"""
