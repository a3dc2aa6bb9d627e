"""Core orchestration: the minimizing-movement scheme and the regularization cascade"""
