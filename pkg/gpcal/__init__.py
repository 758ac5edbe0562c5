"""
Gaussian-process calibration of linearized computer models
Universal Kriging with REML hyper-parameters, GLS / Bayesian calibration,
prediction and K-fold cross-validation
"""

__version__ = '1.0.0'
