"""
Test package for the labp laboratory.
"""
