"""Passive-scalar advection by Ornstein-Uhlenbeck-driven random velocity
fields on the torus, and its effective (eddy-diffusion) limit.

Modules
-------
spectral
    Fourier representation, Sobolev norms, dealiased products.
velocity
    Divergence-free velocity families, eddy diffusivity, generator ``A``.
ou
    Exact Ornstein-Uhlenbeck path sampling and iterated integrals.
solvers
    Pathwise and effective pseudo-spectral solvers.
diagnostics
    Mixing errors, Hoelder functionals, dissipation and transfer checks.
harness
    Configuration, ensembles, sweeps, validation, reports and CLI.
"""
__version__ = "0.1.0"
