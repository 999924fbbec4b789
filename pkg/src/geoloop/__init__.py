"""Decoupled finite element solver for non-isothermal Navier-Stokes/Darcy flow
in a closed-loop geothermal channel with random porous-media conductivity."""

__version__ = "0.1.0"
