"""Infinite transient graphs with canonical byte-string vertex encodings.

Three vertex-transitive families are supported:

* ``Lattice(d')``  -- the hypercubic lattice, vertices are integer tuples,
  encoded as ``b"1,-2,0"``.
* ``RegularTree(d)`` -- the d-regular tree, vertices are reduced child-index
  words from the root, encoded as digit strings (root = ``b""``, first symbol
  in ``0..d-1``, later symbols in ``0..d-2``).
* ``Product(Tree(d), Lattice(d'))`` -- one coordinate moves per step; encoded
  as ``b"<word>|<coords>"``.

Encodings are canonical: two vertices are equal iff their encodings are
byte-equal, which makes hash sets, union-find keys, and CSV output uniform
across graph kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Graph",
    "Ball",
    "EncodingError",
    "ResourceError",
    "parse_graph",
    "lattice",
    "regular_tree",
    "tree_lattice_product",
]

# Tree child symbols are single digits; d <= 10 covers every experiment here.
_MAX_TREE_DEGREE = 10

# Refuse to materialize balls beyond this many vertices (see Ball builder).
DEFAULT_VERTEX_BUDGET = 5_000_000


class EncodingError(ValueError):
    """A vertex byte string is not a valid canonical encoding."""


class ResourceError(RuntimeError):
    """A requested finite structure would exceed the memory budget."""


@dataclass(frozen=True)
class Graph:
    """Immutable descriptor of one of the three supported graph families.

    ``kind`` is one of ``"lattice"``, ``"tree"``, ``"product"``.  Instances
    are safely shareable across worker threads.
    """

    kind: str
    tree_degree: int = 0
    lattice_dim: int = 0

    def __post_init__(self):
        if self.kind not in ("lattice", "tree", "product"):
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if self.kind in ("tree", "product"):
            if not 3 <= self.tree_degree <= _MAX_TREE_DEGREE:
                raise ValueError("tree degree must be in 3..%d" % _MAX_TREE_DEGREE)
        if self.kind in ("lattice", "product") and self.lattice_dim < 1:
            raise ValueError("lattice dimension must be >= 1")

    @property
    def degree(self) -> int:
        """Common vertex degree (all three kinds are transitive)."""
        if self.kind == "lattice":
            return 2 * self.lattice_dim
        if self.kind == "tree":
            return self.tree_degree
        return self.tree_degree + 2 * self.lattice_dim

    @property
    def transient(self) -> bool:
        # Z^d' is transient iff d' >= 3; trees (d >= 3) and their products
        # with any lattice are transient.
        if self.kind == "lattice":
            return self.lattice_dim >= 3
        return True

    @property
    def spec_str(self) -> str:
        if self.kind == "lattice":
            return f"z:{self.lattice_dim}"
        if self.kind == "tree":
            return f"tree:{self.tree_degree}"
        return f"treez:{self.tree_degree}x{self.lattice_dim}"

    def origin(self) -> bytes:
        """Canonical base point: lattice 0, tree root, product (root, 0)."""
        if self.kind == "lattice":
            return b",".join([b"0"] * self.lattice_dim)
        if self.kind == "tree":
            return b""
        return b"|" + b",".join([b"0"] * self.lattice_dim)

    # -- encoding helpers -------------------------------------------------

    def decode(self, v: bytes):
        """Split an encoding into (word, coords); raises EncodingError."""
        if not isinstance(v, bytes):
            raise EncodingError(f"vertex must be bytes, got {type(v).__name__}")
        if self.kind == "lattice":
            return (), self._parse_coords(v)
        if self.kind == "tree":
            return self._parse_word(v), ()
        if b"|" not in v:
            raise EncodingError(f"product vertex {v!r} lacks '|' separator")
        word, _, coords = v.partition(b"|")
        return self._parse_word(word), self._parse_coords(coords)

    def encode(self, word=(), coords=()) -> bytes:
        if self.kind == "lattice":
            return b",".join(b"%d" % c for c in coords)
        w = b"".join(b"%d" % s for s in word)
        if self.kind == "tree":
            return w
        return w + b"|" + b",".join(b"%d" % c for c in coords)

    def _parse_coords(self, raw: bytes):
        parts = raw.split(b",")
        if len(parts) != self.lattice_dim:
            raise EncodingError(
                f"expected {self.lattice_dim} coordinates, got {raw!r}")
        try:
            return tuple(int(p) for p in parts)
        except ValueError as exc:
            raise EncodingError(f"bad coordinate in {raw!r}") from exc

    def _parse_word(self, raw: bytes):
        d = self.tree_degree
        word = []
        for i, ch in enumerate(raw):
            s = ch - 0x30
            hi = d if i == 0 else d - 1
            if not 0 <= s < hi:
                raise EncodingError(
                    f"tree word {raw!r}: symbol {chr(ch)!r} at {i} out of range")
            word.append(s)
        return tuple(word)


def lattice(dim: int) -> Graph:
    return Graph("lattice", lattice_dim=dim)


def regular_tree(degree: int) -> Graph:
    return Graph("tree", tree_degree=degree)


def tree_lattice_product(degree: int, dim: int) -> Graph:
    return Graph("product", tree_degree=degree, lattice_dim=dim)


def parse_graph(spec: str) -> Graph:
    """Parse a CLI graph spec: ``z:<d>``, ``tree:<d>``, ``treez:<d>x<d'>``."""
    spec = spec.strip()
    try:
        head, _, rest = spec.partition(":")
        if head == "z":
            return lattice(int(rest))
        if head == "tree":
            return regular_tree(int(rest))
        if head == "treez":
            a, _, b = rest.partition("x")
            return tree_lattice_product(int(a), int(b))
    except (ValueError, TypeError):
        pass
    raise ValueError(f"unrecognized graph spec {spec!r} "
                     "(expected z:<d>, tree:<d>, or treez:<d>x<d'>)")


# ---------------------------------------------------------------------------
# adjacency / distance


def neighbors(g: Graph, v: bytes) -> list[bytes]:
    """Neighbors of ``v`` in the fixed canonical order.

    Lattice: +e1, -e1, +e2, -e2, ...  Tree: parent first (absent at the
    root), then children ascending.  Product: tree moves, then lattice
    moves.  The order is part of the reproducibility contract: seeded
    walks index into it.
    """
    word, coords = g.decode(v)
    out: list[bytes] = []
    d = g.tree_degree
    if g.kind in ("tree", "product"):
        if word:
            out.append(g.encode(word[:-1], coords))
            out.extend(g.encode(word + (s,), coords) for s in range(d - 1))
        else:
            out.extend(g.encode((s,), coords) for s in range(d))
    if g.kind in ("lattice", "product"):
        for j in range(g.lattice_dim):
            for sign in (1, -1):
                c = list(coords)
                c[j] += sign
                out.append(g.encode(word, c))
    return out


def distance(g: Graph, u: bytes, v: bytes) -> int:
    """Exact graph distance (tree part goes through the deepest common
    ancestor; product distance is the sum of the component distances)."""
    wu, cu = g.decode(u)
    wv, cv = g.decode(v)
    dist = sum(abs(a - b) for a, b in zip(cu, cv))
    lcp = 0
    for a, b in zip(wu, wv):
        if a != b:
            break
        lcp += 1
    dist += len(wu) + len(wv) - 2 * lcp
    return dist


def _ball_size_estimate(g: Graph, r: int) -> int:
    if g.kind == "lattice":
        return (2 * r + 1) ** g.lattice_dim
    d = g.tree_degree
    tree = 1 + d * ((d - 1) ** r - 1) // (d - 2) if r > 0 else 1
    if g.kind == "tree":
        return tree
    return tree * (2 * r + 1) ** g.lattice_dim


@dataclass(frozen=True)
class Ball:
    """Finite metric ball with its outer vertex boundary.

    ``members`` is in breadth-first order from the center (ties broken by
    the canonical neighbor order), so member index 0 is the center and
    indices are stable across runs.
    """

    graph: Graph
    center: bytes
    radius: int
    members: tuple
    boundary: tuple
    member_set: frozenset = field(repr=False)
    boundary_set: frozenset = field(repr=False)

    def __contains__(self, v: bytes) -> bool:
        return v in self.member_set

    def __len__(self) -> int:
        return len(self.members)

    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.members)}


def ball(g: Graph, center: bytes, radius: int,
         vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> Ball:
    """BFS ball of the given radius around ``center``.

    Raises ResourceError (carrying the size estimate) when the ball would
    exceed ``vertex_budget`` vertices.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    g.decode(center)
    est = _ball_size_estimate(g, radius)
    if est > vertex_budget:
        raise ResourceError(
            f"ball of radius {radius} on {g.spec_str} needs ~{est} vertices "
            f"(budget {vertex_budget})")
    members = [center]
    seen = {center}
    boundary: list[bytes] = []
    frontier = [center]
    for layer in range(radius + 1):
        nxt: list[bytes] = []
        for v in frontier:
            for w in neighbors(g, v):
                if w in seen:
                    continue
                seen.add(w)
                if layer < radius:
                    members.append(w)
                    nxt.append(w)
                else:
                    boundary.append(w)
        frontier = nxt
    return Ball(g, center, radius, tuple(members), tuple(boundary),
                frozenset(members), frozenset(boundary))


# ---------------------------------------------------------------------------
# engine packs: index tables that let the hot kernels walk symbolically and
# record visits inside an origin-centered patch.


@dataclass(frozen=True)
class Patch:
    """Origin-centered ball prepared for the kernels.

    Holds the canonical vertex list, adjacency in canonical neighbor order
    (-1 marks "outside the patch"), per-vertex distances from the center,
    and the symbolic start-state arrays the walkers load from.  ``pack``
    is the flat tuple handed to the engine.
    """

    graph: Graph
    radius: int
    verts: tuple
    padj: np.ndarray
    pdist: np.ndarray
    pack: tuple

    def __len__(self):
        return len(self.verts)

    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.verts)}

    def window_size(self, r: int) -> int:
        return int(np.count_nonzero(self.pdist <= r))


_KIND_CODE = {"lattice": 0, "tree": 1, "product": 2}


@lru_cache(maxsize=32)
def build_patch(g: Graph, radius: int) -> Patch:
    """Build the kernel-facing patch of the given radius around the origin.

    Tree and product patches must be origin-centered (the walkers' index
    arithmetic keys off root depth); callers recenter experiments via the
    graph's transitivity before sampling.
    """
    b = ball(g, g.origin(), radius)
    verts = list(b.members)
    if g.kind == "tree":
        # index arithmetic requires (depth, word-value) ordering
        verts.sort(key=lambda v: (len(v), v))
    idx = {v: i for i, v in enumerate(verts)}
    m = len(verts)
    deg = g.degree
    dlat = max(g.lattice_dim, 1)
    rpw = radius + 1

    padj = np.full((m, deg), -1, dtype=np.int32)
    pdist = np.zeros(m, dtype=np.int32)
    idepth = np.zeros(m, dtype=np.int32)
    iword = np.full((m, rpw), -1, dtype=np.int8)
    icoord = np.zeros((m, dlat), dtype=np.int64)
    il1 = np.zeros(m, dtype=np.int32)
    ival = np.zeros(m, dtype=np.int64)

    d = g.tree_degree
    for i, v in enumerate(verts):
        word, coords = g.decode(v)
        pdist[i] = distance(g, g.origin(), v)
        for k, w in enumerate(neighbors(g, v)):
            padj[i, k] = idx.get(w, -1)
        idepth[i] = len(word)
        for j, s in enumerate(word):
            iword[i, j] = s
        for j, c in enumerate(coords):
            icoord[i, j] = c
        il1[i] = sum(abs(c) for c in coords)
        val = 0
        for j, s in enumerate(word):
            val = s if j == 0 else val * (d - 1) + s
        ival[i] = val

    # tree-level index offsets: poffset[depth] = index of first depth-d vertex
    poffset = np.zeros(radius + 2, dtype=np.int64)
    if g.kind in ("tree", "product"):
        cum = 1
        for delta in range(1, radius + 2):
            poffset[delta] = cum
            cum += d * (d - 1) ** (delta - 1)

    boxside = 2 * radius + 1
    boxsize = boxside ** g.lattice_dim if g.kind != "tree" else 1
    if g.kind == "lattice":
        grid = np.full(boxsize, -1, dtype=np.int32)
        for i, v in enumerate(verts):
            _, coords = g.decode(v)
            off = 0
            for c in coords:
                off = off * boxside + (c + radius)
            grid[off] = i
    elif g.kind == "product":
        mt = int(poffset[radius + 1])  # tree-ball size at this radius
        grid = np.full(mt * boxsize, -1, dtype=np.int32)
        for i, v in enumerate(verts):
            word, coords = g.decode(v)
            val = 0
            for j, s in enumerate(word):
                val = s if j == 0 else val * (d - 1) + s
            tidx = int(poffset[len(word)]) + val if word else 0
            off = 0
            for c in coords:
                off = off * boxside + (c + radius)
            grid[tidx * boxsize + off] = i
    else:
        grid = np.full(1, -1, dtype=np.int32)

    pack = (
        np.int64(_KIND_CODE[g.kind]), np.int64(d), np.int64(g.lattice_dim),
        np.int64(deg), np.int64(radius), np.int64(m), np.int64(boxsize),
        poffset, grid, padj, pdist, idepth, iword, icoord, il1, ival,
    )
    return Patch(g, radius, tuple(verts), padj, pdist, pack)
