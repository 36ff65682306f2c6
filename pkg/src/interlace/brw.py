"""2-type branching tree and the induced branching random walk.

Offspring table: circle nodes beget exactly two bullet children and
Poisson(u deg^2) circle children; bullet nodes beget one bullet child and
Poisson(u deg^2) circle children.  Generation zero is Poisson(u deg^2)
circle nodes.  Each child's graph position is an independent uniform
neighbor of its parent's position, which on these graphs is exactly the
label construction (every degree divides deg!), so the label machinery is
not implemented.

Generation-size batches use the collapsed chain |T_n^o| ~ Poisson(q |T_{n-1}|),
|T_n^*| = 2 |T_{n-1}^o| + |T_{n-1}^*| -- the exact law of the size process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .graphs import Graph, build_patch, distance, neighbors
from .walk import spectral_radius_closed_form

__all__ = [
    "GwNode",
    "BrwRun",
    "branching_rate",
    "sample_brw",
    "expected_generation_sizes",
    "generation_size_batch",
    "hit_probability",
]


@dataclass(frozen=True)
class GwNode:
    id: int
    parent: int              # -1 for generation zero
    node_type: str           # "circle" | "bullet"
    generation: int


@dataclass(frozen=True)
class BrwRun:
    nodes: tuple             # GwNode records, truncated at n_max
    positions: dict          # node id -> vertex
    gen_sizes: tuple         # |T_n| for n <= n_max
    gen_sizes_circle: tuple
    truncated: bool          # node budget hit before n_max


def branching_rate(g: Graph, u: float) -> float:
    """q = u deg^2, the circle-offspring mean (and the initial mean)."""
    return u * g.degree * g.degree


def sample_brw(g: Graph, x: bytes, u: float, n_max: int, seed: int,
               node_budget: int = 200_000, sample_index: int = 0,
               with_positions: bool = True) -> BrwRun:
    """Explicit tree sample (python-level; batches use the kernels)."""
    q = branching_rate(g, u)
    st = engine.rng_state(seed, engine.stream_label("brw-explicit"),
                          sample_index)
    nodes = []
    positions = {}
    truncated = False
    frontier = []  # (id, type)
    n0 = engine.rng_poisson(st, q)
    for _ in range(n0):
        nid = len(nodes)
        nodes.append(GwNode(nid, -1, "circle", 0))
        if with_positions:
            positions[nid] = x
        frontier.append(nid)
    for gen in range(1, n_max + 1):
        nxt = []
        for pid in frontier:
            parent = nodes[pid]
            kids = []
            if parent.node_type == "circle":
                kids = ["bullet", "bullet"]
            else:
                kids = ["bullet"]
            kids += ["circle"] * engine.rng_poisson(st, q)
            for t in kids:
                nid = len(nodes)
                nodes.append(GwNode(nid, pid, t, gen))
                if with_positions:
                    nbrs = neighbors(g, positions[pid])
                    positions[nid] = nbrs[engine.rng_below(st, len(nbrs))]
                nxt.append(nid)
            if len(nodes) > node_budget:
                truncated = True
                break
        frontier = nxt
        if truncated:
            break
    sizes = [0] * (n_max + 1)
    csizes = [0] * (n_max + 1)
    for nd in nodes:
        sizes[nd.generation] += 1
        if nd.node_type == "circle":
            csizes[nd.generation] += 1
    return BrwRun(tuple(nodes), positions, tuple(sizes), tuple(csizes),
                  truncated)


def expected_generation_sizes(u: float, deg: int, n_max: int) -> dict:
    """Exact E|T_n| from the offspring recursion, plus the geometric
    envelope c (1+2q)^n that the growth never exceeds."""
    q = u * deg * deg
    tot = np.zeros(n_max + 1)
    circ = np.zeros(n_max + 1)
    if n_max >= 0:
        tot[0] = circ[0] = q
    if n_max >= 1:
        tot[1] = (2.0 + q) * q
        circ[1] = q * q
    for n in range(2, n_max + 1):
        tot[n] = (1.0 + q) * tot[n - 1] + q * tot[n - 2]
        circ[n] = q * tot[n - 1]
    c_env = max(q, q * (2.0 + q) / (1.0 + 2.0 * q)) if q > 0 else 0.0
    env = c_env * (1.0 + 2.0 * q) ** np.arange(n_max + 1)
    return {"total": tot, "circle": circ, "envelope": env,
            "envelope_c": c_env, "q": q}


def expected_generation_sizes_matrix(u: float, deg: int, n_max: int):
    """Independent oracle: mean-offspring matrix powers on (circle, bullet)
    expectations."""
    q = u * deg * deg
    M = np.array([[q, q], [2.0, 1.0]])
    v = np.array([q, 0.0])
    out = [v.sum()]
    for _ in range(n_max):
        v = M @ v
        out.append(v.sum())
    return np.array(out)


def generation_size_batch(g: Graph, u: float, n_max: int, n: int, seed: int,
                          node_budget: int = 1_000_000,
                          label: str = "brw-sizes", idx0: int = 0):
    """Tallies |T_n|, |T_n^o| for n trees; -1 marks generations cut by the
    node budget (supercritical growth is expected; the budget is the
    guard)."""
    q = branching_rate(g, u)
    out_tot = np.zeros((n, n_max + 1), dtype=np.int64)
    out_circ = np.zeros((n, n_max + 1), dtype=np.int64)
    out_flag = np.zeros(n, dtype=np.uint8)
    engine.brw_sizes_batch(seed, engine.stream_label(label), idx0, n, q,
                           n_max, node_budget, out_tot, out_circ, out_flag)
    return out_tot, out_circ, out_flag


def hit_probability(g: Graph, x: bytes, y: bytes, u: float, n_max: int,
                    n_samples: int, seed: int,
                    node_budget: int = 500_000,
                    label: str = "brw-hit", idx0: int = 0) -> dict:
    """Monte Carlo estimate of P[some member of the walk lands on y],
    trees truncated at n_max generations.

    The reported truncation envelope is the geometric tail
    (rho (1+2q))^n_max of the heat-kernel bound; estimates are only
    trustworthy when that is small.  Warns (in the result) when u is at or
    above the disconnection threshold (1/(2 deg^2)) (1/rho - 1).
    """
    if x != g.origin():
        raise ValueError("hit probability is sampled from the origin; "
                         "use transitivity to recenter")
    q = branching_rate(g, u)
    rho = spectral_radius_closed_form(g)
    u0 = (1.0 / (2.0 * g.degree ** 2)) * (1.0 / rho - 1.0)
    dist = distance(g, x, y)
    patch = build_patch(g, dist + 1)
    target = patch.index()[y]
    out_hit = np.zeros(n_samples, dtype=np.uint8)
    out_flag = np.zeros(n_samples, dtype=np.uint8)
    engine.brw_hit_batch(patch.pack, seed, engine.stream_label(label),
                         idx0, n_samples, q, n_max, node_budget, target,
                         out_hit, out_flag)
    p = float(out_hit.mean())
    sigma = math.sqrt(max(p * (1 - p), 1e-300) / n_samples)
    envelope = (rho * (1.0 + 2.0 * q)) ** n_max
    return {
        "estimate": p,
        "sigma": sigma,
        "ci3": 3.0 * sigma,
        "n": n_samples,
        "distance": dist,
        "tail_envelope": envelope,
        "budget_truncated": int(out_flag.sum()),
        "supercritical_warning": u >= u0,
        "u0": u0,
    }
