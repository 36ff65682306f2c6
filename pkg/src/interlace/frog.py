"""Frog model: Poisson-many sleeping particles per site, woken when an
active walker's range reaches their neighborhood.

Activation proceeds in rounds.  Sites activated in round k-1 draw their
particle counts (Poisson(u deg), lazily, so the infinite initial
configuration never materializes) and launch two independent truncated
walks per particle; the next activation set is the closure of all visits
so far, clipped to the window.  A run stabilizes when the activation set
stops changing inside the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .graphs import Ball, Graph, distance
from .soup import _maxsteps, _recording_patch, default_kill_radius

__all__ = ["FrogConfig", "FrogRun", "FrogBatch", "make_config", "run_frog",
           "frog_batch"]


@dataclass(frozen=True)
class FrogConfig:
    u: float
    origin: bytes
    window: Ball
    kill_radius: int
    max_iterations: int = 64

    def __post_init__(self):
        if self.u < 0:
            raise ValueError("intensity u must be >= 0")
        if self.origin != self.window.center:
            raise ValueError("frog origin must be the window center")
        if self.kill_radius < self.window.radius:
            raise ValueError("kill radius must cover the window")


@dataclass(frozen=True)
class FrogRun:
    config: FrogConfig
    particle_counts: dict        # site -> count, only for activated sites
    activation_history: tuple    # frozensets A_0, A_1, ... (window-clipped)
    trace: frozenset             # union of walker ranges within the window
    stabilized: bool
    iterations: int


@dataclass(frozen=True)
class FrogBatch:
    config: FrogConfig
    patch: object
    wdist: np.ndarray
    traces: np.ndarray           # uint8 (n, len(patch)), window-clipped
    counts: np.ndarray           # int32 (n, len(patch)), -1 = never active
    iterations: np.ndarray
    stabilized: np.ndarray
    history_sizes: np.ndarray    # (n, rounds): |A_k|, -1 past the last round

    def window_columns(self):
        return np.nonzero(self.wdist <= self.config.window.radius)[0]


def make_config(g: Graph, u: float, window: Ball,
                kill_radius: int | None = None,
                max_iterations: int = 64) -> FrogConfig:
    if kill_radius is None:
        kill_radius = default_kill_radius(g, window)
    return FrogConfig(u, window.center, window, kill_radius, max_iterations)


def frog_batch(g: Graph, cfg: FrogConfig, n: int, seed: int,
               force_all: bool = False, label: str = "frog",
               detail_rounds: int = 0, idx0: int = 0):
    """n independent frog runs.

    With detail_rounds > 0 the first ``detail_rounds`` samples also get
    per-round activation bitmaps (returned as the second item).
    """
    patch = _recording_patch(g, cfg.window)
    wdist = np.array([distance(g, cfg.window.center, v)
                      for v in patch.verts], dtype=np.int32)
    center = patch.index()[cfg.window.center]
    m = len(patch)
    rounds = cfg.max_iterations + 1
    out_trace = np.zeros((n, m), dtype=np.uint8)
    out_counts = np.zeros((n, m), dtype=np.int32)
    out_iters = np.zeros(n, dtype=np.int64)
    out_stab = np.zeros(n, dtype=np.uint8)
    out_hist = np.full((n, rounds), -1, dtype=np.int64)
    want = 1 if detail_rounds > 0 else 0
    out_rounds = np.zeros((max(detail_rounds, 1) if want else 1,
                           rounds if want else 1, m if want else 1),
                          dtype=np.uint8)
    engine.frog_batch(
        patch.pack, seed, engine.stream_label(label), idx0, n, cfg.u,
        cfg.kill_radius, _maxsteps(g, cfg.kill_radius), cfg.window.radius,
        wdist, center, cfg.max_iterations, 1 if force_all else 0,
        out_trace, out_counts, out_iters, out_stab, out_hist, want,
        out_rounds)
    fb = FrogBatch(cfg, patch, wdist, out_trace, out_counts, out_iters,
                   out_stab, out_hist)
    return (fb, out_rounds) if want else fb


def run_frog(g: Graph, cfg: FrogConfig, seed: int, sample_index: int = 0,
             force_all: bool = False) -> FrogRun:
    """One frog run with the full activation-set history."""
    fb, rounds_bm = frog_batch(g, cfg, sample_index + 1, seed,
                               force_all=force_all,
                               detail_rounds=sample_index + 1)
    s = sample_index
    iters = int(fb.iterations[s])
    sizes = [int(h) for h in fb.history_sizes[s] if h >= 0]
    verts = fb.patch.verts
    history = []
    for k in range(min(len(sizes), iters + 1)):
        bits = rounds_bm[s, k]
        history.append(frozenset(verts[i] for i in np.nonzero(bits)[0]))
    trace = frozenset(
        verts[i] for i in np.nonzero(fb.traces[s])[0])
    counts = {verts[i]: int(c)
              for i, c in enumerate(fb.counts[s]) if c >= 0}
    return FrogRun(cfg, counts, tuple(history), trace,
                   bool(fb.stabilized[s]), iters)
