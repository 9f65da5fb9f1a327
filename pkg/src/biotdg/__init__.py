"""Space-time discontinuous Galerkin solvers for quasi-static Biot poroelasticity."""
__version__ = "0.1.0"
