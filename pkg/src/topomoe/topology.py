"""Persistent homology over learnable vertex filtrations.

Vertex filtration values are logistic squashes of trainable affine maps of the
raw features, so sub-level sets live in [0, 1]. Dimension-0 persistence is
computed with a union-find sweep (elder rule: the younger component dies when
an edge merges two components); every edge whose insertion closes a cycle
creates a dimension-1 class. Essential classes die at the co-domain cap 1.0.

The pairing (which simplex a birth/death value comes from) is treated as
locally constant: gradients flow through the filtration values selected by a
frozen pairing, never through the combinatorics. Ties in filtration values are
broken by vertex (or edge) index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .errors import ShapeError
from .network import D0

ESSENTIAL_DEATH = 1.0
D1 = 7
U_DEFAULT = 12
EMBED_WIDTH = 13  # triangle(4) + gaussian(4) + line(4) + rational hat(1)


@dataclass
class FiltrationFamily:
    """U affine maps of the raw features followed by a logistic squash."""

    weights: eg.Tensor  # (U, D0)
    bias: eg.Tensor     # (U,)

    @property
    def size(self) -> int:
        return self.weights.data.shape[0]


def filtration_values(features: eg.Tensor, fam: FiltrationFamily) -> eg.Tensor:
    """Per-vertex values for every filtration: sigmoid(features @ w.T + b).

    ``features`` has shape (..., N, D0); the result is (..., N, U). The edge
    value of (j, k) is by convention max of the endpoint values.
    """
    if features.data.shape[-1] != fam.weights.data.shape[1]:
        raise ShapeError(
            f"feature width {features.data.shape[-1]} does not match filtration "
            f"input width {fam.weights.data.shape[1]}")
    wt = eg.transpose(fam.weights, (1, 0))
    return eg.sigmoid(eg.matmul(features, wt) + fam.bias)


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float
    creator: int      # vertex index (dim 0) or edge index (dim 1)
    dim: int
    essential: bool

    def __post_init__(self):
        if self.death < self.birth:
            raise ValueError("persistence pair died before it was born")


@dataclass
class Pairing:
    """Index structure of one filtration's diagram, for differentiable reuse.

    For each vertex j: ``death_vertex[j]`` is the vertex whose value realises
    the death of the component j created (the larger endpoint of the merging
    edge), or -1 for essential classes. For each undirected edge e:
    ``cycle_birth_vertex[e]`` is the larger endpoint of e when e closed a
    cycle, else -1.
    """

    death_vertex: np.ndarray        # (N,) int
    cycle_birth_vertex: np.ndarray  # (E,) int


def _edge_key(values: np.ndarray, a: int, b: int) -> tuple:
    # edge enters at max endpoint value; ties between endpoints break by index
    if values[a] > values[b] or (values[a] == values[b] and a < b):
        return values[a], a
    return values[b], b


def compute_pairing(n_vertices: int, edges: list[tuple[int, int]],
                    values: np.ndarray) -> Pairing:
    """Union-find sweep producing the pairing index structure."""
    v = values
    order = np.argsort(v, kind="stable")          # vertex insertion order, index tie-break
    rank = np.empty(n_vertices, dtype=np.int64)
    rank[order] = np.arange(n_vertices)
    ev = np.array([max(v[a], v[b]) for a, b in edges])
    eorder = np.argsort(ev, kind="stable")

    parent = list(range(n_vertices))
    creator = list(range(n_vertices))             # oldest vertex of each component

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    death_vertex = np.full(n_vertices, -1, dtype=np.int64)
    cycle_birth = np.full(len(edges), -1, dtype=np.int64)
    for ei in eorder:
        a, b = edges[ei]
        ra, rb = find(a), find(b)
        if ra == rb:
            cycle_birth[ei] = _edge_key(v, a, b)[1]
            continue
        # elder rule: the component with the younger creator dies
        if rank[creator[ra]] < rank[creator[rb]]:
            elder, younger = ra, rb
        else:
            elder, younger = rb, ra
        death_vertex[creator[younger]] = _edge_key(v, a, b)[1]
        parent[younger] = elder
    return Pairing(death_vertex, cycle_birth)


def compute_pd0(graph, values: np.ndarray) -> list[PersistencePair]:
    """Dimension-0 diagram: one pair per vertex, essential classes capped at 1."""
    values = np.asarray(values, dtype=np.float64)
    n = graph.n_vertices
    if values.shape != (n,):
        raise ShapeError(f"need one value per vertex, got {values.shape} for {n} vertices")
    pairing = compute_pairing(n, graph.undirected_edges(), values)
    pairs = []
    for j in range(n):
        dv = pairing.death_vertex[j]
        if dv < 0:
            pairs.append(PersistencePair(float(values[j]), ESSENTIAL_DEATH, j, 0, True))
        else:
            pairs.append(PersistencePair(float(values[j]), float(values[dv]), j, 0, False))
    return pairs


def compute_pd1(graph, values: np.ndarray) -> list[PersistencePair]:
    """Dimension-1 diagram: one essential pair per cycle-closing edge."""
    values = np.asarray(values, dtype=np.float64)
    n = graph.n_vertices
    if values.shape != (n,):
        raise ShapeError(f"need one value per vertex, got {values.shape} for {n} vertices")
    edges = graph.undirected_edges()
    pairing = compute_pairing(n, edges, values)
    pairs = []
    for ei, bv in enumerate(pairing.cycle_birth_vertex):
        if bv >= 0:
            pairs.append(PersistencePair(float(values[bv]), ESSENTIAL_DEATH, ei, 1, True))
    return pairs


# ---------------------------------------------------------------------------
# diagram embeddings (vectorized over arbitrary leading axes of birth/death)


@dataclass
class EmbedParams:
    """Fixed sample points of the four diagram transforms (values in [0, 1]
    to match the logistic co-domain)."""

    triangle_points: np.ndarray = None
    gaussian_points: np.ndarray = None
    gaussian_sigma: float = 0.25
    line_directions: np.ndarray = None
    line_biases: np.ndarray = None
    hat_center: np.ndarray = None
    hat_radius: float = 0.25

    def __post_init__(self):
        if self.triangle_points is None:
            self.triangle_points = np.array([0.2, 0.4, 0.6, 0.8])
        if self.gaussian_points is None:
            self.gaussian_points = np.array(
                [[0.25, 0.5], [0.25, 1.0], [0.5, 0.75], [0.75, 1.0]])
        if self.line_directions is None:
            s = 1.0 / np.sqrt(2.0)
            self.line_directions = np.array([[1.0, 0.0], [0.0, 1.0], [s, s], [s, -s]])
        if self.line_biases is None:
            self.line_biases = np.zeros(len(self.line_directions))
        if self.hat_center is None:
            self.hat_center = np.array([0.5, 0.75])


def _abs(t: eg.Tensor) -> eg.Tensor:
    return eg.where(t.data >= 0, t, -t)


def embed_triangle(pair, sample_points: np.ndarray):
    """max(0, death - |t - birth|) at each sample point."""
    b, d = _pair_tensors(pair)
    ts = np.asarray(sample_points, dtype=np.float64)
    arg = eg.unsqueeze(d) - _abs(eg.unsqueeze(b) - ts)
    return eg.maximum(arg, 0.0)


def embed_gaussian(pair, sample_points: np.ndarray, sigma: float):
    """exp(-||p - t||^2 / (2 sigma^2)) at each 2-d sample point."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    b, d = _pair_tensors(pair)
    pts = np.asarray(sample_points, dtype=np.float64)
    sq = eg.square(eg.unsqueeze(b) - pts[:, 0]) + eg.square(eg.unsqueeze(d) - pts[:, 1])
    return eg.exp(sq * (-1.0 / (2.0 * sigma * sigma)))


def embed_line(pair, directions: np.ndarray, biases: np.ndarray):
    """<p, e> + bias for each projection line."""
    b, d = _pair_tensors(pair)
    e = np.asarray(directions, dtype=np.float64)
    return eg.unsqueeze(b) * e[:, 0] + eg.unsqueeze(d) * e[:, 1] + np.asarray(biases)


def embed_rational_hat(pair, mu: np.ndarray, r: float, q_norm: int = 2):
    """1/(1+||p-mu||_q) - 1/(1+|r-||p-mu||_q|)."""
    b, d = _pair_tensors(pair)
    mu = np.asarray(mu, dtype=np.float64)
    db = b - mu[0]
    dd = d - mu[1]
    if q_norm == 2:
        dist = eg.sqrt(eg.square(db) + eg.square(dd) + 1e-30)
    elif q_norm == 1:
        dist = _abs(db) + _abs(dd)
    else:
        raise ValueError("q_norm must be 1 or 2")
    return 1.0 / (1.0 + dist) - 1.0 / (1.0 + _abs(r - dist))


def _pair_tensors(pair) -> tuple[eg.Tensor, eg.Tensor]:
    if isinstance(pair, PersistencePair):
        return eg.Tensor(np.float64(pair.birth)), eg.Tensor(np.float64(pair.death))
    b, d = pair
    return eg.as_tensor(b), eg.as_tensor(d)


def pd_embed(b: eg.Tensor, d: eg.Tensor, params: EmbedParams) -> eg.Tensor:
    """Fused evaluation of all four transforms with an analytic backward.

    Equal to :func:`embed_all` but one tape node: (...,) -> (..., EMBED_WIDTH).
    """
    from . import _kernels as _k
    bv, dv = b.data, d.data
    if _k.HAVE_NUMBA:
        shape = bv.shape
        bf = np.ascontiguousarray(bv).reshape(-1)
        df = np.ascontiguousarray(dv).reshape(-1)
        args = (params.triangle_points, params.gaussian_points,
                0.5 / params.gaussian_sigma ** 2, params.line_directions,
                params.line_biases, params.hat_center[0], params.hat_center[1],
                params.hat_radius)
        out = _k.pd_embed_forward(bf, df, *args).reshape(shape + (EMBED_WIDTH,))
        if not eg.grad_enabled():
            return eg.Tensor(out)

        def backward_fast(g):
            db, dd = _k.pd_embed_backward(
                np.ascontiguousarray(g).reshape(-1, EMBED_WIDTH), bf, df, *args)
            eg._accum(b, db.reshape(shape))
            eg._accum(d, dd.reshape(shape))

        return eg.Tensor(out, (b, d), backward_fast)
    ts = params.triangle_points
    pts = params.gaussian_points
    sig2 = params.gaussian_sigma ** 2
    lines = params.line_directions
    mu, r = params.hat_center, params.hat_radius

    tdiff = ts - bv[..., None]
    tri = np.maximum(dv[..., None] - np.abs(tdiff), 0.0)
    gb = bv[..., None] - pts[:, 0]
    gd = dv[..., None] - pts[:, 1]
    gau = np.exp(-(gb * gb + gd * gd) / (2.0 * sig2))
    lin = bv[..., None] * lines[:, 0] + dv[..., None] * lines[:, 1] + params.line_biases
    hb = bv - mu[0]
    hd = dv - mu[1]
    dist = np.sqrt(hb * hb + hd * hd + 1e-30)
    hat = 1.0 / (1.0 + dist) - 1.0 / (1.0 + np.abs(r - dist))
    out = np.concatenate([tri, gau, lin, hat[..., None]], axis=-1)
    if not eg.grad_enabled():
        return eg.Tensor(out)

    def backward(g):
        q = len(ts)
        gt = g[..., :q]
        gg = g[..., q:2 * q]
        gl = g[..., 2 * q:3 * q]
        gh = g[..., 3 * q]
        active = (tri > 0.0) * gt
        db = (active * np.sign(tdiff)).sum(axis=-1)
        dd = active.sum(axis=-1)
        gg_g = gg * gau / sig2
        db -= (gg_g * gb).sum(axis=-1)
        dd -= (gg_g * gd).sum(axis=-1)
        db += gl @ lines[:, 0]
        dd += gl @ lines[:, 1]
        ddist = -1.0 / (1.0 + dist) ** 2 - np.sign(r - dist) / (1.0 + np.abs(r - dist)) ** 2
        db += gh * ddist * hb / dist
        dd += gh * ddist * hd / dist
        eg._accum(b, db)
        eg._accum(d, dd)

    return eg.Tensor(out, (b, d), backward)


def embed_all(b: eg.Tensor, d: eg.Tensor, params: EmbedParams) -> eg.Tensor:
    """All four transforms concatenated: (...,) -> (..., EMBED_WIDTH)."""
    tri = embed_triangle((b, d), params.triangle_points)
    gau = embed_gaussian((b, d), params.gaussian_points, params.gaussian_sigma)
    lin = embed_line((b, d), params.line_directions, params.line_biases)
    hat = embed_rational_hat((b, d), params.hat_center, params.hat_radius)
    return eg.concat([tri, gau, lin, eg.unsqueeze(hat)], axis=-1)


# ---------------------------------------------------------------------------
# topological signatures


@dataclass
class TopoSignature:
    tv: eg.Tensor  # (N, D1)
    te: eg.Tensor  # (E, D1)


@dataclass
class SignatureParams:
    """Trainable projection from the concatenated embeddings to D1.

    The input layout is [dim-0 block | dim-1 block], each U * EMBED_WIDTH wide;
    vertices only ever populate the dim-0 block and edges the dim-1 block, so
    the projection is applied through the corresponding slice of the weight.
    """

    weight: eg.Tensor  # (2 * U * EMBED_WIDTH, D1)
    bias: eg.Tensor    # (D1,)
    embed: EmbedParams


def gather_deaths(values: eg.Tensor, death_idx: np.ndarray) -> eg.Tensor:
    """Select each creator's death value from ``values`` (..., N, U).

    ``death_idx`` holds the killing vertex index along the N axis, or -1 for
    essential classes (death capped at 1.0).
    """
    grid = list(np.indices(values.data.shape))
    essential = death_idx < 0
    grid[-2] = np.where(essential, 0, death_idx)
    deaths = eg.take(values, tuple(grid))
    return eg.where(essential, ESSENTIAL_DEATH, deaths)


def vertex_embedding_block(values: eg.Tensor, pairings: list[Pairing] | np.ndarray,
                           embed: EmbedParams) -> eg.Tensor:
    """Dim-0 embeddings for every vertex across all filtrations.

    ``values`` is (..., N, U); ``pairings`` one Pairing per filtration, or a
    stacked (..., N, U) death-vertex index array for batched use. Returns
    (..., N, U * EMBED_WIDTH). Every vertex creates exactly one dim-0 class
    (its own entry into the filtration), so births are the values themselves.
    """
    death_idx = pairings if isinstance(pairings, np.ndarray) else np.stack(
        [p.death_vertex for p in pairings], axis=1)
    deaths = gather_deaths(values, death_idx)
    emb = pd_embed(values, deaths, embed)         # (..., N, U, EMBED_WIDTH)
    s = emb.data.shape
    return eg.reshape(emb, s[:-2] + (s[-2] * s[-1],))


def edge_embedding_block(values: eg.Tensor, pairings: list[Pairing],
                         embed: EmbedParams) -> eg.Tensor:
    """Dim-1 embeddings for every undirected edge; zero rows for tree edges."""
    n, u = values.data.shape
    e = len(pairings[0].cycle_birth_vertex)
    birth_idx = np.stack([p.cycle_birth_vertex for p in pairings], axis=1)  # (E, U)
    creator = birth_idx >= 0
    safe = np.where(creator, birth_idx, 0)
    births = eg.take(values, (safe, np.broadcast_to(np.arange(u), (e, u))))
    deaths = eg.Tensor(np.full((e, u), ESSENTIAL_DEATH))
    emb = embed_all(births, deaths, embed)
    emb = eg.where(np.repeat(creator[..., None], EMBED_WIDTH, axis=-1), emb, 0.0)
    return eg.reshape(emb, (e, u * EMBED_WIDTH))


def topo_signature(graph, fam: FiltrationFamily, params: SignatureParams,
                   pairings: list[Pairing] | None = None) -> TopoSignature:
    """Vertex- and edge-level signatures of one (augmented) sub-graph.

    When ``pairings`` is given the stored pairing is reused and gradients flow
    through the filtration values only.
    """
    feats = eg.as_tensor(graph.features)
    values = filtration_values(feats, fam)        # (N, U)
    edges = graph.undirected_edges()
    if pairings is None:
        pairings = [compute_pairing(graph.n_vertices, edges, values.data[:, u])
                    for u in range(fam.size)]
    half = fam.size * EMBED_WIDTH
    tv = eg.affine(vertex_embedding_block(values, pairings, params.embed),
                   params.weight[:half], params.bias, act="tanh")
    te = eg.affine(edge_embedding_block(values, pairings, params.embed),
                   params.weight[half:], params.bias, act="tanh")
    return TopoSignature(tv, te)


def diagram_rows(graph, fam: FiltrationFamily) -> list[tuple]:
    """CSV-friendly diagram dump: (filtration, dim, birth, death, creator)."""
    feats = eg.as_tensor(graph.features)
    with eg.no_grad():
        values = filtration_values(feats, fam).data
    rows = []
    for u in range(fam.size):
        for p in compute_pd0(graph, values[:, u]) + compute_pd1(graph, values[:, u]):
            rows.append((u, p.dim, p.birth, p.death, p.creator))
    return rows
