"""Closed-form optimal steady-state dispatch and cost metrics.

The steady-state problem (minimize quadratic adjustment cost subject to
power balance) has the KKT solution C_i u_i* = C_j u_j* for all node
pairs, i.e. a common marginal value lambda. It is independent of the line
topology because the balance constraint only fixes the total.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .model import PowerGrid


@dataclass(frozen=True)
class DispatchResult:
    u_star: np.ndarray      # optimal per-node control, p.u.
    lam: float              # common weighted value C_j * u_j*
    cost_paper: float       # sum_j C_j u_j*^2  (the convention used in reports)
    cost_quadratic: float   # sum_j (1/2) C_j u_j*^2 (the optimization objective)


def optimal_dispatch(grid: PowerGrid, p_star: np.ndarray) -> DispatchResult:
    """Optimal control for steady fixed powers p_star.

    lambda = -(sum p*) / (sum 1/C);  u_j* = lambda / C_j.
    """
    if grid.n_nodes == 0:
        raise ValueError("empty node set")
    p_star = np.asarray(p_star, dtype=float)
    if p_star.shape != (grid.n_nodes,):
        raise ValueError(f"p_star must have length {grid.n_nodes}, got {p_star.shape}")
    cost = grid.cost()
    lam = -p_star.sum() / np.sum(1.0 / cost)
    u_star = lam / cost
    cp, cq = cost_of(grid, u_star)
    return DispatchResult(u_star=u_star, lam=float(lam), cost_paper=cp, cost_quadratic=cq)


def cost_of(grid: PowerGrid, u: np.ndarray) -> Tuple[float, float]:
    """Both cost conventions for a control vector: (sum C u^2, sum C u^2 / 2)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_nodes,):
        raise ValueError(f"u must have length {grid.n_nodes}, got {u.shape}")
    weighted = grid.cost() * u * u
    total = float(weighted.sum())
    return total, 0.5 * total
