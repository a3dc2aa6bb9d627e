"""Configuration package for the solver and the experiment runner"""
