"""Storage modules for run tables, manifests and path dumps"""
