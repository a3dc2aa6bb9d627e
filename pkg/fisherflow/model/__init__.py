"""Model modules: mobilities, the spatial grid and the energy functionals"""
