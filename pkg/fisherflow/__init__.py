"""
FisherFlow - minimizing-movement solver for generalized Fisher information flows
under nonlinear-mobility transport distances, with diagnostics for the scheme's
a priori estimates.
"""

__version__ = '1.0.0'
