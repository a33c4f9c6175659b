"""
Per-mode Helmholtz resolvent laboratory.
"""
