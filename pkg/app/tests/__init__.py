"""
Test suite for DeepNTK
"""
