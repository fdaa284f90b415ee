"""Compressible barotropic flow on a periodic box: pseudo-spectral solver,
energy-spectrum diagnostics, and a vanishing-viscosity sweep harness."""

__version__ = "0.1.0"
