"""
Core modules: sphere geometry, closed-form kernels, regression and finite-width networks
"""
