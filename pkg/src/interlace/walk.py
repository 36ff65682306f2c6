"""Random-walk engine and discrete-potential estimators.

Escape probabilities are computed from absorbing-boundary harmonic systems
(h = 0 on the target set, h = 1 on the outer shell at distance R+1), which
bracket the true escape probability from above; a radius ladder runs until
successive brackets differ by less than the requested tolerance.

On regular trees the system is reduced exactly: outside the Steiner hull
of K the harmonic function depends only on the distance level, so each
hanging subtree collapses to a closed-form two-point boundary chain and
only the hull vertices remain as unknowns.  Lattice and product balls are
assembled sparsely and solved by conjugate gradients (residual 1e-12).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln, logsumexp

from . import engine
from .graphs import Ball, Graph, build_patch, distance, neighbors

__all__ = [
    "Path",
    "SolveReport",
    "ConvergenceError",
    "run_walk",
    "walk_exit_stats",
    "escape_probability",
    "escape_field",
    "green",
    "spectral_radius",
    "spectral_radius_closed_form",
    "return_probabilities",
    "dense_return_probabilities",
]


class ConvergenceError(RuntimeError):
    """Radius ladder exhausted before reaching the tolerance.

    Carries the last bracket so callers can still inspect it.
    """

    def __init__(self, msg, bracket=None, radius=None):
        super().__init__(msg)
        self.bracket = bracket
        self.radius = radius


@dataclass(frozen=True)
class Path:
    start: bytes
    steps: tuple
    exit_reason: str  # "left_region" | "step_budget"


@dataclass(frozen=True)
class SolveReport:
    values: dict
    radius_used: int
    tail_gap: float


# ---------------------------------------------------------------------------
# walks


def _region_patch(g: Graph, region: Ball):
    """Patch that contains the region and its exit shell, plus the
    distance-from-region-center table the kernels stop on."""
    rp = 0
    for v in list(region.members) + list(region.boundary):
        rp = max(rp, distance(g, g.origin(), v))
    patch = build_patch(g, rp + 1)
    rdist = np.array(
        [distance(g, region.center, v) for v in patch.verts], dtype=np.int32)
    return patch, rdist


def run_walk(g: Graph, start: bytes, region: Ball, step_budget: int,
             seed: int, sample_index: int = 0) -> Path:
    """Simple random walk from ``start`` until it leaves ``region`` or the
    step budget runs out.  Deterministic given (seed, sample_index)."""
    if step_budget < 1:
        raise ValueError("step_budget must be >= 1")
    if start not in region.member_set:
        raise ValueError("start must lie in the region")
    patch, rdist = _region_patch(g, region)
    sidx = patch.index()[start]
    out_path = np.full(step_budget + 2, -1, dtype=np.int32)
    steps, exited = engine.walk_record(
        patch.pack, seed, engine.stream_label("run_walk"), sample_index,
        sidx, rdist, region.radius, step_budget, out_path)
    steps = int(steps)
    verts = tuple(patch.verts[int(i)] for i in out_path[1:steps + 1])
    return Path(start, verts,
                "left_region" if exited else "step_budget")


def walk_exit_stats(g: Graph, start: bytes, region: Ball, step_budget: int,
                    n: int, seed: int, return_target: bytes | None = None):
    """Batch walk summary: exit vertex (or None on budget), step count, and
    whether ``return_target`` was revisited after time 0."""
    patch, rdist = _region_patch(g, region)
    idx = patch.index()
    sidx = idx[start]
    tgt = idx[return_target] if return_target is not None else -1
    out_exit = np.zeros(n, dtype=np.int64)
    out_steps = np.zeros(n, dtype=np.int64)
    out_ret = np.zeros(n, dtype=np.uint8)
    engine.walk_exit_batch(
        patch.pack, seed, engine.stream_label("walk_exit"), 0, n, sidx,
        rdist, region.radius, step_budget, tgt, out_exit, out_steps,
        out_ret)
    exits = [patch.verts[int(i)] if i >= 0 else None for i in out_exit]
    return exits, out_steps, out_ret.astype(bool)


# ---------------------------------------------------------------------------
# harmonic systems: exact hull reduction on trees


def _tree_path(g: Graph, u: bytes, v: bytes):
    wu, _ = g.decode(u)
    wv, _ = g.decode(v)
    lcp = 0
    for a, b in zip(wu, wv):
        if a != b:
            break
        lcp += 1
    verts = [g.encode(wu[:i]) for i in range(len(wu), lcp - 1, -1)]
    verts += [g.encode(wv[:i]) for i in range(lcp + 1, len(wv) + 1)]
    return verts


def _steiner_hull(g: Graph, K):
    hull = set(K)
    K = list(K)
    for i in range(len(K)):
        for j in range(i + 1, len(K)):
            hull.update(_tree_path(g, K[i], K[j]))
    return sorted(hull, key=lambda w: (len(w), w))


class _TreeField:
    """Harmonic field h = P_.[H_K = infinity] bracketed at horizon R.

    Solves the hull system exactly for one R; ``value(v)`` evaluates h at
    any vertex with dist_K(v) <= R via the closed-form subtree chains.
    """

    def __init__(self, g: Graph, K, R: int):
        self.g = g
        self.R = R
        self.Kset = frozenset(K)
        d = g.tree_degree
        beta = 1.0 / (d - 1)
        hull = _steiner_hull(g, self.Kset)
        self.hull_set = frozenset(hull)
        unknowns = [v for v in hull if v not in self.Kset]
        uidx = {v: i for i, v in enumerate(unknowns)}
        distK = {v: min(distance(g, v, k) for k in self.Kset) for v in hull}
        n = len(unknowns)
        A = np.zeros((n, n))
        b = np.zeros(n)
        for v in unknowns:
            i = uidx[v]
            dv = distK[v]
            t = self._chain_t(beta, dv, R)
            n_out = 0
            A[i, i] += d
            for w in neighbors(g, v):
                if w in self.Kset:
                    continue
                if w in self.hull_set:
                    A[i, uidx[w]] -= 1.0
                else:
                    n_out += 1
            A[i, i] -= n_out * (1.0 - t)
            b[i] = n_out * t
        h = np.linalg.solve(A, b) if n else np.zeros(0)
        self._h = {v: float(h[uidx[v]]) for v in unknowns}
        for k in self.Kset:
            self._h[k] = 0.0
        self._distK = distK
        self._beta = beta

    @staticmethod
    def _chain_t(beta, dv, R):
        # weight of the outer boundary one level into a hanging subtree
        top = beta ** dv
        return (top - beta ** (dv + 1)) / (top - beta ** (R + 1))

    def _anchor(self, v: bytes):
        # nearest hull vertex: walk the tree path from v toward any K vertex
        k0 = next(iter(self.Kset))
        for w in _tree_path(self.g, v, k0):
            if w in self.hull_set:
                return w
        raise AssertionError("hull anchor not found")

    def value(self, v: bytes) -> float:
        if v in self._h:
            return self._h[v]
        p = self._anchor(v)
        dp = self._distK[p]
        dv = dp + distance(self.g, p, v)
        if dv > self.R:
            raise ValueError("query point outside the solve horizon")
        beta = self._beta
        hp = self._h[p]
        B = (hp - 1.0) / (beta ** dp - beta ** (self.R + 1))
        A = hp - B * beta ** dp
        return A + B * beta ** dv

    def escape_from_member(self, x: bytes) -> float:
        # P_x[no return to K]: one forced step, then the field
        if x not in self.Kset:
            raise ValueError("x must belong to K")
        vals = [self.value(w) for w in neighbors(self.g, x)]
        return float(np.mean(vals))


# ---------------------------------------------------------------------------
# harmonic systems: sparse balls for lattices and products


class _BallField:
    """Harmonic field on B(K, R) with h=1 on the outer shell (distance R+1)
    and h=0 on K; interior solved by conjugate gradients."""

    def __init__(self, g: Graph, K, R: int):
        self.g = g
        self.R = R
        self.Kset = frozenset(K)
        if g.kind == "lattice":
            verts, dist, adj_builder = _lattice_ball_arrays(g, list(K), R)
        elif g.kind == "product":
            verts, dist, adj_builder = _product_ball_arrays(g, list(K), R)
        else:
            verts, dist, adj_builder = _generic_ball_arrays(g, list(K), R)
        self.index = {v: i for i, v in enumerate(verts)}
        nn = len(verts)
        deg = g.degree
        btype = np.zeros(nn, dtype=np.int8)
        btype[dist == 0] = 1          # K itself: h = 0
        btype[dist == R + 1] = 2      # outer shell: h = 1
        rows, cols = adj_builder()
        interior = btype == 0
        int_ids = np.full(nn, -1, dtype=np.int64)
        int_ids[interior] = np.arange(int(interior.sum()))
        # edges with an interior endpoint
        mask = interior[rows]
        r, c = rows[mask], cols[mask]
        to_interior = interior[c]
        data = np.full(int(to_interior.sum()), -1.0 / deg)
        A = sp.csr_matrix(
            (data, (int_ids[r[to_interior]], int_ids[c[to_interior]])),
            shape=(int(interior.sum()),) * 2)
        A = A + sp.eye(A.shape[0], format="csr")
        bvec = np.zeros(A.shape[0])
        shell = btype[c] == 2
        np.add.at(bvec, int_ids[r[shell]], 1.0 / deg)
        if A.shape[0]:
            h, info = spla.cg(A, bvec, rtol=1e-12, atol=0.0,
                              maxiter=20 * (R + 10))
            if info != 0:
                raise ConvergenceError(f"cg failed to converge (info={info})")
        else:
            h = np.zeros(0)
        full = np.zeros(nn)
        full[btype == 2] = 1.0
        full[interior] = h
        self._h = full
        self._btype = btype

    def value(self, v: bytes) -> float:
        return float(self._h[self.index[v]])

    def escape_from_member(self, x: bytes) -> float:
        vals = [self._h[self.index[w]] for w in neighbors(self.g, x)]
        return float(np.mean(vals))


def _lattice_ball_arrays(g: Graph, K, R):
    dd = g.lattice_dim
    Kc = np.array([g.decode(k)[1] for k in K], dtype=np.int64)
    lo = Kc.min(axis=0) - (R + 1)
    hi = Kc.max(axis=0) + (R + 1)
    shape = tuple((hi - lo + 1).tolist())
    coords = np.stack(np.meshgrid(
        *[np.arange(lo[j], hi[j] + 1) for j in range(dd)], indexing="ij"),
        axis=-1).reshape(-1, dd)
    dist = np.abs(coords[:, None, :] - Kc[None, :, :]).sum(axis=2).min(axis=1)
    keep = dist <= R + 1
    coords = coords[keep]
    dist = dist[keep]
    order = np.arange(len(coords))
    grid = np.full(shape, -1, dtype=np.int64)
    grid[tuple((coords - lo).T)] = order
    verts = [g.encode((), tuple(c)) for c in coords]

    def adj_builder():
        rows = []
        cols = []
        for j in range(dd):
            for sign in (1, -1):
                nb = coords.copy()
                nb[:, j] += sign
                inside = np.all((nb >= lo) & (nb <= hi), axis=1)
                tgt = np.full(len(coords), -1, dtype=np.int64)
                tgt[inside] = grid[tuple((nb[inside] - lo).T)]
                ok = tgt >= 0
                rows.append(order[ok])
                cols.append(tgt[ok])
        return np.concatenate(rows), np.concatenate(cols)

    return verts, dist, adj_builder


def _product_ball_arrays(g: Graph, K, R):
    """Vectorized B(K, R+1) on tree x lattice: tree distances come from a
    BFS over the cached tree patch, lattice offsets from a coordinate box."""
    from .graphs import regular_tree

    d = g.tree_degree
    dd = g.lattice_dim
    dec = [g.decode(k) for k in K]
    kdepth = max(len(w) for w, _ in dec)
    dmax = R + 1 + kdepth
    gt = regular_tree(d)
    tp = build_patch(gt, dmax)
    tadj = tp.padj
    mt = len(tp.verts)
    tindex = tp.index()
    # BFS tree distances from each K tree-coordinate
    tdist = np.full((len(K), mt), np.iinfo(np.int32).max, dtype=np.int32)
    for i, (w, _) in enumerate(dec):
        src = tindex[gt.encode(w)]
        tdist[i, src] = 0
        frontier = np.array([src], dtype=np.int64)
        layer = 0
        while len(frontier):
            layer += 1
            nxt = tadj[frontier].ravel()
            nxt = nxt[nxt >= 0]
            fresh = nxt[tdist[i, nxt] > layer]
            tdist[i, fresh] = layer
            frontier = np.unique(fresh)
    kz = np.array([c for _, c in dec], dtype=np.int64)
    lo = kz.min(axis=0) - (R + 1)
    hi = kz.max(axis=0) + (R + 1)
    zshape = tuple((hi - lo + 1).tolist())
    zcoords = np.stack(np.meshgrid(
        *[np.arange(lo[j], hi[j] + 1) for j in range(dd)], indexing="ij"),
        axis=-1).reshape(-1, dd)
    nz = len(zcoords)
    zdist = np.abs(zcoords[:, None, :] - kz[None, :, :]).sum(axis=2)
    # dist[(t, z)] = min_k tdist[k][t] + zdist[z][k]
    dist = (tdist.astype(np.int64).T[:, None, :]
            + zdist.astype(np.int64)[None, :, :]).min(axis=2)
    keep = dist <= R + 1
    flat_ids = np.full((mt, nz), -1, dtype=np.int64)
    n_keep = int(keep.sum())
    flat_ids[keep] = np.arange(n_keep)
    t_id, z_id = np.nonzero(keep)
    dvec = dist[keep]
    words = tp.verts
    verts = [g.encode(gt.decode(words[t])[0], tuple(zcoords[z]))
             for t, z in zip(t_id, z_id)]

    def adj_builder():
        order = np.arange(n_keep)
        rows = []
        cols = []
        for k in range(d):  # tree moves
            tt = tadj[t_id, k]
            ok = tt >= 0
            tgt = np.full(n_keep, -1, dtype=np.int64)
            tgt[ok] = flat_ids[tt[ok], z_id[ok]]
            good = tgt >= 0
            rows.append(order[good])
            cols.append(tgt[good])
        zc = zcoords[z_id]
        for j in range(dd):  # lattice moves
            for sign in (1, -1):
                nb = zc.copy()
                nb[:, j] += sign
                inside = (nb[:, j] >= lo[j]) & (nb[:, j] <= hi[j])
                zoff = np.zeros(n_keep, dtype=np.int64)
                mult = 1
                for jj in range(dd - 1, -1, -1):
                    zoff += (nb[:, jj] - lo[jj]) * mult
                    mult *= zshape[jj]
                tgt = np.full(n_keep, -1, dtype=np.int64)
                tgt[inside] = flat_ids[t_id[inside], zoff[inside]]
                good = tgt >= 0
                rows.append(order[good])
                cols.append(tgt[good])
        return np.concatenate(rows), np.concatenate(cols)

    return verts, dvec, adj_builder


def _generic_ball_arrays(g: Graph, K, R):
    # multi-source BFS; product balls stay small because the horizon is
    # set by the transient tree coordinate
    dist = {k: 0 for k in K}
    frontier = list(K)
    verts = list(K)
    for layer in range(1, R + 2):
        nxt = []
        for v in frontier:
            for w in neighbors(g, v):
                if w not in dist:
                    dist[w] = layer
                    verts.append(w)
                    nxt.append(w)
        frontier = nxt
    idx = {v: i for i, v in enumerate(verts)}
    dvec = np.array([dist[v] for v in verts], dtype=np.int64)

    def adj_builder():
        rows = []
        cols = []
        for v in verts:
            i = idx[v]
            for w in neighbors(g, v):
                j = idx.get(w)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)

    return verts, dvec, adj_builder


# ---------------------------------------------------------------------------
# escape probabilities via the radius ladder

_LADDER = {
    # (start pad, step, budget): geometric tails on trees/products; the
    # lattice tail is ~a/R, so there the ladder converges on the
    # 1/R-extrapolated value (brackets themselves shrink too slowly)
    "tree": (6, 4, 400),
    "product": (6, 4, 40),
    "lattice": (20, 10, 90),
}

DEFAULT_TOL = {"tree": 1e-9, "product": 1e-4, "lattice": 1e-3}


def _field_at(g: Graph, K, R):
    if g.kind == "tree":
        return _TreeField(g, K, R)
    return _BallField(g, K, R)


class _ExtrapField:
    """1/R tail extrapolation of two bracket fields (lattice kinds).

    h_R(y) = h_inf(y) + a_y / R to leading order, so two rungs determine
    the limit pointwise.  Values are clipped to [0, 1].
    """

    def __init__(self, f1, f2, R1, R2):
        self.f1, self.f2, self.R1, self.R2 = f1, f2, R1, R2

    def _extrap(self, h1, h2):
        a = (h1 - h2) * self.R1 * self.R2 / (self.R2 - self.R1)
        return min(1.0, max(0.0, h2 - a / self.R2))

    def value(self, v):
        return self._extrap(self.f1.value(v), self.f2.value(v))

    def escape_from_member(self, x):
        return self._extrap(self.f1.escape_from_member(x),
                            self.f2.escape_from_member(x))


class _AitkenField:
    """Aitken delta-squared limit of three bracket fields (product kinds,
    where the tail shrinks geometrically in the horizon)."""

    def __init__(self, f1, f2, f3):
        self.f1, self.f2, self.f3 = f1, f2, f3

    @staticmethod
    def _aitken(e1, e2, e3):
        denom = (e3 - e2) - (e2 - e1)
        if denom == 0.0:
            return e3
        return min(1.0, max(0.0, e3 - (e3 - e2) ** 2 / denom))

    def value(self, v):
        return self._aitken(self.f1.value(v), self.f2.value(v),
                            self.f3.value(v))

    def escape_from_member(self, x):
        return self._aitken(self.f1.escape_from_member(x),
                            self.f2.escape_from_member(x),
                            self.f3.escape_from_member(x))


def escape_field(g: Graph, K, tol: float | None = None,
                 observe=None):
    """Run the radius ladder for the harmonic field of K.

    ``observe(field) -> float`` is the scalar the ladder converges on
    (default: the escape probabilities summed over K).  Returns
    (field, radius, tail_gap).  On lattices the returned field carries the
    1/R extrapolation and the ladder stops once the extrapolated scalar is
    stable within tol; elsewhere the raw brackets converge geometrically.
    """
    K = sorted(set(K), key=lambda w: (len(w), w))
    if not K:
        raise ValueError("K must be nonempty")
    if tol is None:
        tol = DEFAULT_TOL[g.kind]
    if observe is None:
        def observe(f):
            return sum(f.escape_from_member(x) for x in K)
    diam = max((distance(g, a, b) for a in K for b in K), default=0)
    pad, step, budget = _LADDER[g.kind]
    R = diam + pad
    fields = []
    radii = []
    prev_obs = None
    while R <= budget + diam:
        field = _field_at(g, K, R)
        fields.append(field)
        radii.append(R)
        if g.kind == "lattice" and len(fields) >= 2:
            # 1/R tail: converge on the pairwise extrapolation
            cand = _ExtrapField(fields[-2], fields[-1], radii[-2], radii[-1])
            cur = observe(cand)
            if prev_obs is not None:
                gap = abs(prev_obs - cur)
                if gap < tol:
                    return cand, R, gap
            prev_obs = cur
        elif g.kind == "product" and len(fields) >= 3:
            # geometric tail: Aitken limit, stop once it sits within tol
            # of the raw bracket (the remaining tail is an order smaller)
            cand = _AitkenField(fields[-3], fields[-2], fields[-1])
            gap = abs(observe(cand) - observe(fields[-1]))
            if gap < tol:
                return cand, R, gap
        elif g.kind == "tree":
            cur = observe(field)
            if prev_obs is not None:
                gap = abs(prev_obs - cur)
                if gap < tol:
                    return field, R, gap
            prev_obs = cur
        if len(fields) > 3:
            fields.pop(0)
            radii.pop(0)
        R += step
    raise ConvergenceError(
        f"escape ladder on {g.spec_str} did not reach tol={tol} within "
        f"radius {R - step}", bracket=prev_obs, radius=R - step)


def escape_ladder_raw(g: Graph, K, radii, y: bytes):
    """Raw bracket values h_R(y) along the given radii (monotone in R);
    used by tests and diagnostics."""
    out = []
    for R in radii:
        f = _field_at(g, K, R)
        out.append(f.escape_from_member(y) if y in set(K) else f.value(y))
    return out


def escape_probability(g: Graph, K, y: bytes, tol: float | None = None
                       ) -> SolveReport:
    """P_y[H_K = infinity] for y outside K, or P_y[no return to K] for
    y in K (one forced step).  Upper bracket at the final ladder radius."""
    K = list(K)
    Kset = set(K)

    def obs(f):
        if y in Kset:
            return f.escape_from_member(y)
        return f.value(y)

    field, R, gap = escape_field(g, K, tol=tol, observe=obs)
    vals = {y: obs(field)}
    for x in K:
        vals.setdefault(x, field.escape_from_member(x))
    return SolveReport(values=vals, radius_used=R, tail_gap=gap)


def green(g: Graph, x: bytes, y: bytes, tol: float | None = None) -> float:
    """Green's function g(x,y) = P_x[H_y < inf] / P_y[no return to y]."""
    if not g.transient:
        raise ValueError(f"{g.spec_str} is recurrent; Green's function "
                         "diverges")
    field, _, _ = escape_field(
        g, [y], tol=tol, observe=lambda f: f.escape_from_member(y))
    gyy = 1.0 / field.escape_from_member(y)
    if x == y:
        return gyy
    return (1.0 - field.value(x)) * gyy


# ---------------------------------------------------------------------------
# spectral radius


def spectral_radius_closed_form(g: Graph) -> float:
    if g.kind == "lattice":
        return 1.0
    d = g.tree_degree
    rho_tree = 2.0 * math.sqrt(d - 1) / d
    if g.kind == "tree":
        return rho_tree
    dd = g.lattice_dim
    return (d * rho_tree + 2.0 * dd) / (d + 2.0 * dd)


def _tree_log_returns(d: int, n_max: int) -> np.ndarray:
    """log p^(n)(root,root) on the d-regular tree for n = 0..n_max, from
    the exact depth-distance chain."""
    v = np.zeros(n_max + 1)
    v[0] = 1.0
    out = np.full(n_max + 1, -np.inf)
    out[0] = 0.0
    up = (d - 1.0) / d
    down = 1.0 / d
    for n in range(1, n_max + 1):
        nv = np.zeros_like(v)
        nv[1] += v[0]
        nv[0] += v[1] * down
        nv[2:] += v[1:-1] * up
        nv[1:-1] += v[2:] * down
        v = nv
        if v[0] > 0:
            out[n] = math.log(v[0])
    return out


def _lattice_log_returns(dd: int, n_max: int) -> np.ndarray:
    """log p^(n)(0,0) on Z^dd via the multinomial split over coordinates."""
    n = np.arange(n_max + 1)
    log_f = np.full(n_max + 1, -np.inf)
    even = n % 2 == 0
    ne = n[even]
    # f(m) = C(m, m/2) 2^-m / m!
    log_f[even] = (gammaln(ne + 1) - 2 * gammaln(ne / 2 + 1)
                   - ne * math.log(2) - gammaln(ne + 1))
    conv = log_f.copy()
    for _ in range(dd - 1):
        new = np.full(n_max + 1, -np.inf)
        for tot in range(n_max + 1):
            terms = conv[: tot + 1] + log_f[tot::-1]
            new[tot] = logsumexp(terms)
        conv = new
    return gammaln(n + 1) - n * math.log(dd) + conv


def _product_log_returns(g: Graph, n_max: int) -> np.ndarray:
    d, dd = g.tree_degree, g.lattice_dim
    pt = d / (d + 2.0 * dd)
    pl = 1.0 - pt
    lt = _tree_log_returns(d, n_max)
    ll = _lattice_log_returns(dd, n_max)
    n = np.arange(n_max + 1)
    out = np.full(n_max + 1, -np.inf)
    for nn in range(n_max + 1):
        k = np.arange(nn + 1)
        terms = (gammaln(nn + 1) - gammaln(k + 1) - gammaln(nn - k + 1)
                 + k * math.log(pt) + (nn - k) * math.log(pl)
                 + lt[k] + ll[nn - k])
        out[nn] = logsumexp(terms)
    return out


def return_probabilities(g: Graph, n_max: int) -> np.ndarray:
    """Exact p^(n)(o,o) for n = 0..n_max, by the symmetry-reduced chains."""
    if g.kind == "tree":
        lr = _tree_log_returns(g.tree_degree, n_max)
    elif g.kind == "lattice":
        lr = _lattice_log_returns(g.lattice_dim, n_max)
    else:
        lr = _product_log_returns(g, n_max)
    return np.exp(lr)


def dense_return_probabilities(g: Graph, n_max: int) -> np.ndarray:
    """Oracle: dense vector iteration of the averaging operator on the
    radius-n_max ball (the walk cannot leave it).  Checks row-stochasticity
    to 1e-12 each step.  Small n_max only."""
    patch = build_patch(g, n_max)
    padj = patch.padj
    deg = g.degree
    v = np.zeros(len(patch))
    v[0] = 1.0
    out = np.zeros(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        nv = np.zeros_like(v)
        for k in range(deg):
            tgt = padj[:, k]
            ok = tgt >= 0
            np.add.at(nv, tgt[ok], v[ok] / deg)
        total = nv.sum()
        if abs(total - 1.0) > 1e-12:
            raise AssertionError(f"averaging lost mass: {total}")
        v = nv
        out[n] = v[0]
    return out


def spectral_radius(g: Graph, n_max: int = 200,
                    mode: str = "closed_form") -> float:
    """Spectral radius: the closed form per family, or the even-return
    ratio estimate sqrt(p^(2n)/p^(2n-2)) at 2n = n_max (the plain root
    p^(2n)^(1/2n) carries an n^(-3/2) polynomial drag; the ratio cancels
    it)."""
    if mode == "closed_form":
        return spectral_radius_closed_form(g)
    if mode != "power_estimate":
        raise ValueError(f"unknown mode {mode!r}")
    if n_max % 2 != 0 or n_max < 4:
        raise ValueError("n_max must be even and >= 4")
    if g.kind == "tree":
        lr = _tree_log_returns(g.tree_degree, n_max)
    elif g.kind == "lattice":
        lr = _lattice_log_returns(g.lattice_dim, n_max)
    else:
        lr = _product_log_returns(g, n_max)
    return math.exp(0.5 * (lr[n_max] - lr[n_max - 2]))
