"""Joint samplers for the two domination couplings.

Soup-from-frog: running the frog revelation, a particle's double-sided
walk at a newly active site y with revealed set B is accepted as a soup
trajectory iff its backward walk never revisits y and never hits B and
its forward walk never hits B.  The accepted family realizes the soup
restricted to trajectories meeting the revealed sites, so the cluster of
the center inside the accepted trace has exactly the law of the soup
cluster (window-clipped); containment in the frog trace is structural.

Frog-from-branching-walk: lines of the branching tree are revealed round
by round; circle children landing at newly active window sites are
thinned down to Poisson(u deg) frog particles whose two walks are the
accepted children's own lines, so the frog trace sits inside the revealed
branching trace by construction.

Acceptance on truncated walks admits a superset of the untruncated
condition, which only enlarges the nominal soup; the kill radius is set
so the residual bias sits below statistical resolution (checked by the
marginal-fidelity tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .graphs import Ball, Graph, distance
from .soup import _maxsteps, _recording_patch, default_kill_radius

__all__ = ["CoupledBatch", "CoupledRun", "couple_soup_frog",
           "couple_frog_brw", "cluster_of_center", "chain_report"]


@dataclass(frozen=True)
class CoupledBatch:
    kind: str                    # "soup_frog" | "frog_brw"
    u: float
    window: Ball
    kill_radius: int
    patch: object
    wdist: np.ndarray
    inner: np.ndarray            # uint8 (n, m): cluster side / frog side
    outer: np.ndarray            # uint8 (n, m): frog side / brw side
    iterations: np.ndarray
    stabilized: np.ndarray
    probe_counts: np.ndarray | None = None

    def window_columns(self):
        return np.nonzero(self.wdist <= self.window.radius)[0]

    def containment_violations(self) -> int:
        """Runs where the inner trace leaves the outer trace (must be 0)."""
        bad = (self.inner == 1) & (self.outer == 0)
        return int(np.any(bad, axis=1).sum())


@dataclass(frozen=True)
class CoupledRun:
    window: Ball
    interlacement_cluster: frozenset
    frog_trace: frozenset
    brw_trace: frozenset | None


def _prep(g: Graph, window: Ball, kill_radius):
    if kill_radius is None:
        kill_radius = default_kill_radius(g, window)
    patch = _recording_patch(g, window)
    wdist = np.array([distance(g, window.center, v) for v in patch.verts],
                     dtype=np.int32)
    center = patch.index()[window.center]
    return kill_radius, patch, wdist, center


def couple_soup_frog(g: Graph, u: float, window: Ball, n: int, seed: int,
                     kill_radius: int | None = None, max_rounds: int = 64,
                     label: str = "q1", idx0: int = 0) -> CoupledBatch:
    """n joint draws of (accepted soup trace, frog trace)."""
    kill_radius, patch, wdist, center = _prep(g, window, kill_radius)
    m = len(patch)
    out_frog = np.zeros((n, m), dtype=np.uint8)
    out_acc = np.zeros((n, m), dtype=np.uint8)
    out_iters = np.zeros(n, dtype=np.int64)
    out_stab = np.zeros(n, dtype=np.uint8)
    engine.q1_batch(
        patch.pack, seed, engine.stream_label(label), idx0, n, u,
        kill_radius, _maxsteps(g, kill_radius), window.radius, wdist,
        center, max_rounds, out_frog, out_acc, out_iters, out_stab)
    return CoupledBatch("soup_frog", u, window, kill_radius, patch, wdist,
                        out_acc, out_frog, out_iters, out_stab)


def couple_frog_brw(g: Graph, u: float, window: Ball, n: int, seed: int,
                    kill_radius: int | None = None, max_rounds: int = 64,
                    probe: bytes | None = None,
                    label: str = "q2", idx0: int = 0) -> CoupledBatch:
    """n joint draws of (frog trace, revealed branching-walk trace).

    ``probe``: a window site whose accepted-particle count at first
    activation is recorded per run (-1 when the site never activates);
    the thinning law says those counts are Poisson(u deg).
    """
    kill_radius, patch, wdist, center = _prep(g, window, kill_radius)
    m = len(patch)
    pidx = patch.index()[probe] if probe is not None else center
    out_frog = np.zeros((n, m), dtype=np.uint8)
    out_brw = np.zeros((n, m), dtype=np.uint8)
    out_count = np.full(n, -1, dtype=np.int64)
    out_over = np.zeros(n, dtype=np.int64)
    out_iters = np.zeros(n, dtype=np.int64)
    out_stab = np.zeros(n, dtype=np.uint8)
    engine.q2_batch(
        patch.pack, seed, engine.stream_label(label), idx0, n, u,
        kill_radius, _maxsteps(g, kill_radius), window.radius, wdist,
        center, max_rounds, pidx, out_frog, out_brw, out_count, out_over,
        out_iters, out_stab)
    if out_over.sum():
        raise RuntimeError("line pool overflowed; raise the pool capacity")
    return CoupledBatch("frog_brw", u, window, kill_radius, patch, wdist,
                        out_frog, out_brw, out_iters, out_stab, out_count)


def cluster_of_center(batch: CoupledBatch, row: int) -> np.ndarray:
    """Window-clipped connected cluster of the center inside the inner
    trace of one run (BFS over the patch adjacency)."""
    return component_bitmap(batch.patch, batch.inner[row],
                            batch.wdist, batch.window.radius,
                            batch.patch.index()[batch.window.center])


def component_bitmap(patch, bits, wdist, rw, source) -> np.ndarray:
    out = np.zeros(len(bits), dtype=np.uint8)
    if not bits[source] or wdist[source] > rw:
        return out
    padj = patch.padj
    stack = [source]
    out[source] = 1
    while stack:
        v = stack.pop()
        for w in padj[v]:
            if w >= 0 and bits[w] and not out[w] and wdist[w] <= rw:
                out[w] = 1
                stack.append(int(w))
    return out


def chain_report(g: Graph, u: float, window: Ball, n: int, seed: int,
                 kill_radius: int | None = None) -> dict:
    """Both couplings end to end: violation counts (must be zero) and the
    three window trace-size distributions."""
    q1 = couple_soup_frog(g, u, window, n, seed, kill_radius)
    q2 = couple_frog_brw(g, u, window, n, seed + 1, kill_radius)
    cols = q1.window_columns()
    cluster_sizes = np.array(
        [int(cluster_of_center(q1, i)[cols].sum()) for i in range(n)])
    frog_sizes_q1 = q1.outer[:, cols].sum(axis=1)
    frog_sizes_q2 = q2.inner[:, cols].sum(axis=1)
    brw_sizes = q2.outer[:, cols].sum(axis=1)
    viol = q1.containment_violations() + q2.containment_violations()
    # cluster <= frog within q1 and frog <= brw within q2, per run
    order_ok = bool(np.all(cluster_sizes <= frog_sizes_q1)
                    and np.all(frog_sizes_q2 <= brw_sizes))
    return {
        "u": u,
        "n": n,
        "violations": viol,
        "sizes_ordered": order_ok,
        "cluster_sizes": cluster_sizes,
        "frog_sizes": frog_sizes_q1,
        "frog_sizes_q2": frog_sizes_q2,
        "brw_sizes": brw_sizes,
        "mean_cluster": float(cluster_sizes.mean()),
        "mean_frog": float(frog_sizes_q1.mean()),
        "mean_brw": float(brw_sizes.mean()),
    }
