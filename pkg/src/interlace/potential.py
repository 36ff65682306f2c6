"""Equilibrium measure and capacity of finite vertex sets.

The weight of x in K is deg(x) times the probability that a walk from x
never returns to K; one harmonic solve per K serves every member (the
no-return probability is the neighbor average of the escape field).
Capacities feed the soup intensity, so they ride on the deterministic
bracketed solver rather than Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graphs import Graph
from .walk import DEFAULT_TOL, escape_field

__all__ = ["Equilibrium", "equilibrium", "capacity"]


@dataclass(frozen=True)
class Equilibrium:
    base: tuple
    weights: dict
    cap: float
    tol: float
    radius_used: int
    tail_gap: float

    def start_distribution(self):
        """(vertices, probabilities) for drawing trajectory entry points."""
        verts = list(self.base)
        probs = [self.weights[v] / self.cap for v in verts]
        return verts, probs


def equilibrium(g: Graph, K, tol: float | None = None) -> Equilibrium:
    """Equilibrium weights and capacity of a finite nonempty K."""
    if not g.transient:
        raise ValueError(f"{g.spec_str} is recurrent; capacity degenerates")
    if tol is None:
        tol = DEFAULT_TOL[g.kind]
    K = sorted(set(K), key=lambda w: (len(w), w))
    deg = g.degree
    field, radius, gap = escape_field(g, K, tol=tol)
    weights = {}
    for x in K:
        w = deg * field.escape_from_member(x)
        if not -1e-12 <= w <= deg + 1e-12:
            raise AssertionError(f"weight out of range at {x!r}: {w}")
        weights[x] = min(max(w, 0.0), float(deg))
    cap = sum(weights.values())
    return Equilibrium(tuple(K), weights, cap, tol, radius, gap)


def capacity(g: Graph, K, tol: float | None = None) -> float:
    return equilibrium(g, K, tol=tol).cap
