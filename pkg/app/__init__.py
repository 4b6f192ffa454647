"""
DeepNTK - depth behaviour of the ReLU neural tangent kernel
"""

__version__ = "0.1.0"
