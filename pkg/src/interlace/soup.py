"""Trajectory-soup sampler: the interlacement set inside a finite window.

A draw conditioned to meet a finite base set K consists of Poisson(u cap K)
forward walks started from the equilibrium distribution of K and truncated
once they leave the kill surface.  Backward parts never re-enter K by
construction; for K = window.members they cannot touch the window at all,
so the window trace of the forward-only sampler is exact.  For general
K strictly inside the window the omitted backward parts can re-enter
window minus K, and the sample carries a truncation-bias flag instead of
silently returning a biased trace.

Batch experiments come back as per-sample bitmaps over the recording
patch, which downstream modules mask to the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import engine
from .graphs import Ball, Graph, Patch, ball, build_patch, distance
from .potential import Equilibrium, equilibrium
from .walk import _BallField

__all__ = [
    "SoupConfig",
    "SoupSample",
    "default_kill_radius",
    "reentry_estimate",
    "make_config",
    "sample",
    "sample_full_window",
    "SoupBatch",
    "batch",
    "layered_batch",
    "layered_sample",
    "invariance_check",
    "estimate_product_intensities",
    "product_decomposition_batch",
    "product_decomposition_sample",
]

# Poisson intensities beyond this are a config error, not a sampling job
MAX_POISSON_MEAN = 1e7


@dataclass(frozen=True)
class SoupConfig:
    u: float
    base: tuple
    window: Ball
    kill_radius: int
    reentry_eps: float = 1e-3

    def __post_init__(self):
        if self.u < 0:
            raise ValueError("intensity u must be >= 0")
        if not set(self.base) <= self.window.member_set:
            raise ValueError("base set must lie inside the window")
        if self.kill_radius < self.window.radius:
            raise ValueError("kill radius must cover the window")
        if not 0.0 < self.reentry_eps < 1.0:
            raise ValueError("reentry_eps must be in (0,1)")


@dataclass(frozen=True)
class SoupSample:
    config: SoupConfig
    trajectories: tuple          # per-trajectory visited-vertex tuples
    trajectory_count: int
    trace: frozenset             # union of ranges, clipped to the window
    vacant: frozenset
    bias_flag: bool              # re-entry estimate exceeded reentry_eps
    budget_truncations: int


def _max_center_depth(g: Graph, window: Ball) -> int:
    # kill surfaces are origin-anchored: tree depth (tree/product kinds)
    # or L1 norm (lattices)
    o = g.origin()
    return max(distance(g, o, v) for v in window.members)


@lru_cache(maxsize=64)
def _lattice_reentry(g: Graph, window: Ball, kill_radius: int) -> float:
    fld = _BallField(g, list(window.members), kill_radius + 10)
    o = g.origin()
    worst = 0.0
    for v in fld.index:
        if distance(g, o, v) == kill_radius:
            worst = max(worst, 1.0 - fld.value(v))
    return min(1.0, 1.5 * worst)


def reentry_estimate(g: Graph, window: Ball, kill_radius: int) -> float:
    """Estimated probability that a killed walk would have re-entered the
    window: closed form through the transient tree coordinate, harmonic
    estimate on lattices."""
    dmax = _max_center_depth(g, window)
    if g.kind in ("tree", "product"):
        return (1.0 / (g.tree_degree - 1)) ** max(kill_radius - dmax, 0)
    # lattice: max hit probability over the kill shell, from one harmonic
    # solve with a safety factor for its own truncation
    return _lattice_reentry(g, window, kill_radius)


def default_kill_radius(g: Graph, window: Ball,
                        reentry_eps: float = 1e-3) -> int:
    """Smallest origin-anchored kill surface with re-entry below eps.

    Closed form on trees and products; on lattices the polynomial tail
    makes eps-level truncation surfaces astronomically large, so the
    default caps at window + 24 and samples carry the bias flag instead.
    """
    dmax = _max_center_depth(g, window)
    if g.kind in ("tree", "product"):
        need = math.ceil(-math.log(reentry_eps) / math.log(g.tree_degree - 1))
        return dmax + max(need, 2)
    return dmax + 24


def make_config(g: Graph, u: float, base, window: Ball,
                kill_radius: int | None = None,
                reentry_eps: float = 1e-3) -> SoupConfig:
    if kill_radius is None:
        kill_radius = default_kill_radius(g, window, reentry_eps)
    return SoupConfig(u, tuple(sorted(set(base), key=lambda w: (len(w), w))),
                      window, kill_radius, reentry_eps)


def _recording_patch(g: Graph, window: Ball) -> Patch:
    return build_patch(g, _max_center_depth(g, window) + 1)


def _start_arrays(patch: Patch, eq: Equilibrium):
    idx = patch.index()
    verts, probs = eq.start_distribution()
    starts = np.array([idx[v] for v in verts], dtype=np.int64)
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
    cdf[-1] = 1.0
    return cdf, starts


def _maxsteps(g: Graph, kill: int) -> int:
    if g.kind == "lattice":
        return max(20000, 60 * kill * kill)
    return max(20000, 400 * kill)


def _check_mean(lam: float):
    if lam > MAX_POISSON_MEAN:
        raise ValueError(f"Poisson mean {lam:.3g} exceeds the overflow "
                         f"guard {MAX_POISSON_MEAN:.0e}")


def _exact_full_window(cfg: SoupConfig) -> bool:
    return set(cfg.base) == cfg.window.member_set


def sample(g: Graph, cfg: SoupConfig, eq: Equilibrium, seed: int,
           sample_index: int = 0) -> SoupSample:
    """One draw with full (truncated) trajectories attached.

    The recording patch covers the kill ball so every visited vertex can
    be reported; batch experiments use the leaner bitmap path instead.
    """
    if tuple(eq.base) != tuple(cfg.base):
        raise ValueError("equilibrium was computed for a different base set")
    lam = cfg.u * eq.cap
    _check_mean(lam)
    patch = build_patch(g, cfg.kill_radius)
    idx = patch.index()
    label = engine.stream_label(f"soup/{sample_index}")
    st = engine.rng_state(seed, label, sample_index)
    ntraj = engine.rng_poisson(st, lam)
    verts, probs = eq.start_distribution()
    cdf = np.cumsum(probs)
    budget = _maxsteps(g, cfg.kill_radius)
    rdist = patch.pdist
    trajs = []
    truncs = 0
    out_path = np.full(budget + 2, -1, dtype=np.int32)
    for t in range(ntraj):
        r = engine.rng_uniform(st)
        j = int(np.searchsorted(cdf, r))
        j = min(j, len(verts) - 1)
        steps, exited = engine.walk_record(
            patch.pack, seed, engine.stream_label(f"soup-traj/{sample_index}"),
            t, idx[verts[j]], rdist, cfg.kill_radius - 1, budget, out_path)
        steps = int(steps)
        if not exited:
            truncs += 1
        path = tuple(patch.verts[int(i)] for i in out_path[:steps + 1]
                     if i >= 0)
        trajs.append(path)
    wset = cfg.window.member_set
    trace = frozenset(v for p in trajs for v in p if v in wset)
    bias = (not _exact_full_window(cfg)) or \
        reentry_estimate(g, cfg.window, cfg.kill_radius) > cfg.reentry_eps
    return SoupSample(cfg, tuple(trajs), ntraj, trace,
                      frozenset(wset - trace), bias, truncs)


def sample_full_window(g: Graph, u: float, window: Ball, seed: int,
                       sample_index: int = 0,
                       kill_radius: int | None = None,
                       tol: float | None = None) -> SoupSample:
    """The K = window.members specialization every percolation experiment
    uses; the window trace is exact up to the flagged kill truncation."""
    cfg = make_config(g, u, window.members, window, kill_radius)
    eq = equilibrium(g, window.members, tol=tol)
    return sample(g, cfg, eq, seed, sample_index)


# ---------------------------------------------------------------------------
# batch experiments


@dataclass(frozen=True)
class SoupBatch:
    """Per-sample bitmaps over the recording patch plus bookkeeping.

    ``bitmaps`` has shape (n, len(patch)) (or (n, levels, len(patch)) for
    layered runs); ``wdist[i]`` is the distance of patch vertex i from the
    window center, so window columns are ``wdist <= window.radius``.
    """

    config: SoupConfig
    eq: Equilibrium
    patch: Patch
    wdist: np.ndarray
    bitmaps: np.ndarray | None
    probe_hits: np.ndarray | None
    ntraj: np.ndarray
    truncations: int
    bias_flag: bool
    probes: tuple = ()

    def window_columns(self):
        return np.nonzero(self.wdist <= self.config.window.radius)[0]

    def empty_fraction(self):
        """Fraction of samples whose trace misses K entirely (every
        trajectory meets K, so this is the zero-draw event)."""
        return float((self.ntraj == 0).mean())


def _wdist(patch: Patch, window: Ball) -> np.ndarray:
    g = patch.graph
    return np.array([distance(g, window.center, v) for v in patch.verts],
                    dtype=np.int32)


def batch(g: Graph, cfg: SoupConfig, n: int, seed: int,
          eq: Equilibrium | None = None, probes=(), want_bitmaps=True,
          label: str = "soup-batch", idx0: int = 0) -> SoupBatch:
    """n independent draws; bitmaps and/or probe membership flags."""
    if eq is None:
        eq = equilibrium(g, cfg.base)
    lam = cfg.u * eq.cap
    _check_mean(lam)
    patch = _recording_patch(g, cfg.window)
    cdf, starts = _start_arrays(patch, eq)
    idx = patch.index()
    probe_idx = np.array([idx[p] for p in probes], dtype=np.int64)
    m = len(patch)
    out_bitmap = np.zeros((n, m) if want_bitmaps else (1, 1), dtype=np.uint8)
    out_probe = np.zeros((n, len(probes)), dtype=np.uint8)
    out_ntraj = np.zeros(n, dtype=np.int64)
    out_trunc = np.zeros(n, dtype=np.int64)
    engine.soup_batch(
        patch.pack, seed, engine.stream_label(label), idx0, n, lam, cdf,
        starts, cfg.kill_radius, _maxsteps(g, cfg.kill_radius), probe_idx,
        1 if want_bitmaps else 0, out_bitmap, out_probe, out_ntraj, out_trunc)
    bias = (not _exact_full_window(cfg)) or \
        reentry_estimate(g, cfg.window, cfg.kill_radius) > cfg.reentry_eps
    return SoupBatch(cfg, eq, patch, _wdist(patch, cfg.window),
                     out_bitmap if want_bitmaps else None,
                     out_probe if probes else None,
                     out_ntraj, int(out_trunc.sum()), bias, tuple(probes))


def layered_batch(g: Graph, u_levels, window: Ball, n: int, seed: int,
                  kill_radius: int | None = None, tol: float | None = None,
                  label: str = "layered", idx0: int = 0) -> SoupBatch:
    """Monotone-coupled draws along ascending levels via independent
    Poisson increments; trace(u_i) grows deterministically in i.

    bitmaps shape: (n, len(u_levels), len(patch)).
    """
    levels = list(u_levels)
    if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 0:
        raise ValueError("levels must be ascending and nonnegative")
    cfg = make_config(g, levels[-1], window.members, window, kill_radius)
    eq = equilibrium(g, cfg.base, tol=tol)
    incs = np.diff([0.0] + levels) * eq.cap
    _check_mean(float(incs.max()))
    patch = _recording_patch(g, window)
    cdf, starts = _start_arrays(patch, eq)
    m = len(patch)
    out_bitmap = np.zeros((n, len(levels), m), dtype=np.uint8)
    out_ntraj = np.zeros((n, len(levels)), dtype=np.int64)
    out_trunc = np.zeros(n, dtype=np.int64)
    engine.layered_batch(
        patch.pack, seed, engine.stream_label(label), idx0, n, incs, cdf,
        starts, cfg.kill_radius, _maxsteps(g, cfg.kill_radius), out_bitmap,
        out_ntraj, out_trunc)
    return SoupBatch(cfg, eq, patch, _wdist(patch, window), out_bitmap,
                     None, out_ntraj, int(out_trunc.sum()), False)


def layered_sample(g: Graph, u_levels, window: Ball, seed: int,
                   sample_index: int = 0,
                   kill_radius: int | None = None) -> list:
    """One nested draw per level, as (level, trace frozenset) pairs."""
    sb = layered_batch(g, u_levels, window, 1, seed + sample_index,
                       kill_radius)
    cols = sb.window_columns()
    verts = [sb.patch.verts[c] for c in cols]
    out = []
    for li, u in enumerate(u_levels):
        bits = sb.bitmaps[0, li, cols]
        out.append((u, frozenset(v for v, b in zip(verts, bits) if b)))
    return out


def invariance_check(g: Graph, u: float, K, shifted_K, n_samples: int,
                     seed: int) -> dict:
    """Two-sided z-test that the emptiness frequencies of K and its
    automorphic image agree (both are exp(-u cap) by transitivity; the
    capacities are solved independently for each set)."""
    results = []
    for tag, kset in (("base", K), ("shifted", shifted_K)):
        kset = list(kset)
        center = kset[0]
        radius = max(distance(g, center, v) for v in kset)
        win = ball(g, center, radius)
        cfg = make_config(g, u, kset, win)
        sb = batch(g, cfg, n_samples, seed, want_bitmaps=False,
                   label=f"invariance-{tag}")
        results.append((sb.empty_fraction(), sb.eq.cap))
    (p1, cap1), (p2, cap2) = results
    pbar = 0.5 * (p1 + p2)
    se = math.sqrt(max(2.0 * pbar * (1.0 - pbar) / n_samples, 1e-300))
    z = (p1 - p2) / se
    return {
        "p_base": p1, "p_shifted": p2, "cap_base": cap1, "cap_shifted": cap2,
        "z": z, "n": n_samples,
        "expected": math.exp(-u * cap1),
        "agree_3sigma": abs(z) < 3.0,
    }


# ---------------------------------------------------------------------------
# product-graph decomposition sampler


def _enlarged_sites(g: Graph, window: Ball, pad: int):
    """Sites whose conditioned trajectories can reach the window: tree
    depth within the window's reach, lattice offset padded by ``pad``."""
    rw = window.radius
    patch = build_patch(g, rw + pad)
    sites = []
    depths = []
    for i, v in enumerate(patch.verts):
        word, coords = g.decode(v)
        if len(word) <= rw and sum(abs(c) for c in coords) <= rw + pad:
            sites.append(i)
            depths.append(len(word))
    return patch, np.array(sites, dtype=np.int64), \
        np.array(depths, dtype=np.int64)


def estimate_product_intensities(g: Graph, window: Ball, seed: int,
                                 n_est: int = 4000, pad: int = 10,
                                 kill_radius: int | None = None):
    """Monte Carlo intensities nu(W*_x) = d P[no return to the depth-n(x)
    cylinder and no return to x] P[never entering the depth-(n(x)-1)
    cylinder], walks truncated at the kill depth."""
    if g.kind != "product":
        raise ValueError("decomposition sampler needs a product graph")
    if kill_radius is None:
        kill_radius = default_kill_radius(g, window)
    patch, sites, depths = _enlarged_sites(g, window, pad)
    out_p1 = np.zeros(len(sites), dtype=np.int64)
    out_p2 = np.zeros(len(sites), dtype=np.int64)
    engine.product_nu_batch(
        patch.pack, seed, engine.stream_label("product-nu"), sites, depths,
        n_est, kill_radius, _maxsteps(g, kill_radius), out_p1, out_p2)
    p1 = out_p1 / n_est
    p2 = out_p2 / n_est
    nu = g.degree * p1 * p2
    return {
        "patch": patch, "sites": sites, "depths": depths,
        "p1": p1, "p2": p2, "nu": nu, "n_est": n_est,
        "kill_radius": kill_radius,
    }


def product_decomposition_batch(g: Graph, u: float, window: Ball, n: int,
                                seed: int, intensities=None,
                                max_rejects: int = 1000) -> SoupBatch:
    """Alternative soup sampler on products: independent Poisson counts
    per site with two conditioned walks each (rejection sampled)."""
    if intensities is None:
        intensities = estimate_product_intensities(g, window, seed + 1)
    patch = intensities["patch"]
    kill = intensities["kill_radius"]
    lam = u * intensities["nu"]
    _check_mean(float(lam.sum()))
    m = len(patch)
    out_bitmap = np.zeros((n, m), dtype=np.uint8)
    out_counts = np.zeros(3, dtype=np.int64)
    engine.product_decomp_batch(
        patch.pack, seed, engine.stream_label("product-decomp"), 0, n, lam,
        intensities["sites"], intensities["depths"], kill,
        _maxsteps(g, kill), max_rejects, out_bitmap, out_counts)
    acc, tries, failed = (int(x) for x in out_counts)
    if failed or (tries > 0 and acc / tries < 1e-3):
        rate = acc / max(tries, 1)
        raise RuntimeError(
            f"conditioned-walk rejection rate infeasible: acceptance "
            f"{rate:.2e} over {tries} attempts")
    cfg = SoupConfig(u, tuple(window.members), window, kill)
    dummy_eq = Equilibrium(tuple(window.members),
                           {v: 0.0 for v in window.members}, 0.0, 0.0, 0, 0.0)
    return SoupBatch(cfg, dummy_eq, patch, _wdist(patch, window),
                     out_bitmap, None, np.zeros(n, dtype=np.int64), 0, False)


def product_decomposition_sample(g: Graph, u: float, window: Ball,
                                 seed: int, **kw) -> SoupSample:
    sb = product_decomposition_batch(g, u, window, 1, seed, **kw)
    cols = sb.window_columns()
    verts = [sb.patch.verts[c] for c in cols]
    bits = sb.bitmaps[0, cols]
    trace = frozenset(v for v, b in zip(verts, bits) if b)
    return SoupSample(sb.config, (), 0, trace,
                      frozenset(window.member_set - trace), False, 0)
