"""Hamilton-Jacobi value functions through Lipschitz parameterizations of conjugate epigraphs."""
from __future__ import annotations

from .convex_core import Ball, Polygon, PointCloudBody, hausdorff, steiner_point
from .hamiltonian import HamiltonianModel, builtin, builtin_names, conjugate, shifted
from .representation import AuditRecord, parameterize, parameterize_many
from .tube_invariance import Tube, invariance_audit, simulate_inclusion, tangency_probe
from .value_function import (
    ControlSignal, Trajectory, ValueField, solve_control, solve_hj_fd, solve_variational, terminal_cost,
)

__version__ = "0.1.0"

__all__ = [
    "AuditRecord", "Ball", "ControlSignal", "HamiltonianModel", "PointCloudBody", "Polygon", "Trajectory",
    "Tube", "ValueField", "builtin", "builtin_names", "conjugate", "hausdorff", "invariance_audit",
    "parameterize", "parameterize_many", "shifted", "simulate_inclusion", "solve_control", "solve_hj_fd",
    "solve_variational", "steiner_point", "tangency_probe", "terminal_cost",
]
