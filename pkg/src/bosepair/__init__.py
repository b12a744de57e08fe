"""Numerical laboratory for the pair-excitation correction to mean-field dynamics
of bosons with 3-body interactions."""

__version__ = "0.1.0"

from .coherent import SymplecticBlocks, apply_exp, coherent_state, op_A, op_B, quad_from_blocks
from .commutators import closed_form, nested_oracle, verify_lemma
from .experiment import EstimateReport, RunConfig, run_sweep
from .fock import FockOperator, FockSpace, assemble_H, evolve
from .hartree import solve_hartree
from .lattice import Grid, build_potential, make_grid
from .pairex import solve_pairex

__all__ = [
    "__version__",
    "Grid",
    "make_grid",
    "build_potential",
    "FockSpace",
    "FockOperator",
    "assemble_H",
    "evolve",
    "op_A",
    "op_B",
    "SymplecticBlocks",
    "quad_from_blocks",
    "apply_exp",
    "coherent_state",
    "closed_form",
    "nested_oracle",
    "verify_lemma",
    "solve_hartree",
    "solve_pairex",
    "RunConfig",
    "EstimateReport",
    "run_sweep",
]
