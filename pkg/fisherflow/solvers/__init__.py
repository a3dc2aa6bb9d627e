"""Solver modules for the transport distance and the reference integrator"""
