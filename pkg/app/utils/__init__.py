"""
Configuration, reporting and random number helpers
"""
