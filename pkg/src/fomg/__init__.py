"""First-order multigrid for bound-constrained convex problems on nested
square finite-element meshes."""

__version__ = '0.1.0'

from .hierarchy import build_hierarchy
from .problems import make_problem
from .multigrid import VCycleConfig, Multigrid, solve

__all__ = ['build_hierarchy', 'make_problem', 'VCycleConfig', 'Multigrid', 'solve']
