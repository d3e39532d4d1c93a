"""
Pipeline modules for training and evaluation campaigns.
"""
