"""Raw and filtered link prediction evaluation"""
