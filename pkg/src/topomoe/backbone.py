"""Temporal graph backbone with topology-routed mixture-of-experts layers.

One forward pass per agent per control step: synchronize the mean-field
vertex, attach it to the sub-graph, derive per-vertex topological signatures,
fuse them into the hidden and memory states, advance the recurrent cell, then
run the attention layers whose multi-head outputs are routed to experts by
per-vertex signature scores and merged back with a learned convex combination.
A projected max-pool readout produces the fixed-width observation vector.

Vertices are internally reordered by a content key (lexicographic over the raw
feature rows) before any computation, so the readout is bit-identical under
relabelings of the input graph whenever feature rows are distinct; results are
mapped back to the caller's vertex order on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from . import topology as tp
from .config import RunConfig
from .errors import PipelineError, ShapeError
from .network import MF_EDGE_FEATURE, AugmentedSubGraph, compute_local_mf


@dataclass
class HeadParams:
    w: eg.Tensor       # (H, d, d)
    a_src: eg.Tensor   # (H, d, 1)
    a_dst: eg.Tensor   # (H, d, 1)
    w_e: eg.Tensor     # (H, 2, 1)


@dataclass
class ExpertBank:
    route: eg.Tensor   # (P, d1) per-expert routing row
    merge: eg.Tensor   # (P, d1) per-expert merge row
    w: eg.Tensor       # (P, H*d, d)
    b: eg.Tensor       # (P, d)

    @property
    def n_experts(self) -> int:
        return self.route.data.shape[0]


@dataclass
class LayerParams:
    heads: HeadParams
    bank: ExpertBank


@dataclass
class RoutingWeights:
    q: eg.Tensor        # (N, P): per-expert scores over vertices, columns sum to 1
    q_tilde: eg.Tensor  # (P,): merge weights, sum to 1


@dataclass
class BackboneParams:
    fam: tp.FiltrationFamily
    sig: tp.SignatureParams
    mem_w: eg.Tensor
    mem_b: eg.Tensor
    mlp1_w: eg.Tensor
    mlp1_b: eg.Tensor
    sync_gru: dict
    fuse_w: eg.Tensor
    fuse_b: eg.Tensor
    gru: dict
    layers: list[LayerParams]
    readout_w: eg.Tensor
    readout_b: eg.Tensor


def build_backbone_params(store: eg.ParameterStore, cfg: RunConfig,
                          rng: np.random.Generator) -> BackboneParams:
    d0, d1, d, h, p, u = cfg.d0, cfg.d1, cfg.d, cfg.heads, cfg.experts, cfg.filtrations
    fam = tp.FiltrationFamily(
        store.add("backbone/filtration/w", rng.normal(0.0, 1.0, size=(u, d0))),
        store.add("backbone/filtration/b", rng.normal(0.0, 0.5, size=u)))
    width = 2 * u * tp.EMBED_WIDTH
    sig = tp.SignatureParams(
        store.add("backbone/signature/w", rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, d1))),
        store.add("backbone/signature/b", np.zeros(d1)),
        tp.EmbedParams())
    mem_w, mem_b = eg.init_affine(store, "backbone/memory", d0, d, rng)
    mlp1_w, mlp1_b = eg.init_affine(store, "backbone/mf_temporal", d0, d, rng)
    sync_gru = eg.init_gru(store, "backbone/mf_sync_gru", d, rng)
    fuse_w, fuse_b = eg.init_affine(store, "backbone/fuse", d1 + d, d, rng)
    gru = eg.init_gru(store, "backbone/gru", d, rng)
    layers = []
    for l in range(cfg.gat_layers):
        pre = f"backbone/layer{l}"
        heads = HeadParams(
            store.add(f"{pre}/att/w", rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d, d))),
            store.add(f"{pre}/att/a_src", rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d, 1))),
            store.add(f"{pre}/att/a_dst", rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d, 1))),
            store.add(f"{pre}/att/w_e", rng.normal(0.0, 1.0, size=(h, 2, 1))))
        bank = ExpertBank(
            store.add(f"{pre}/route", rng.normal(0.0, 1.0 / np.sqrt(d1), size=(p, d1))),
            store.add(f"{pre}/merge", rng.normal(0.0, 1.0 / np.sqrt(d1), size=(p, d1))),
            store.add(f"{pre}/expert/w", rng.normal(0.0, 1.0 / np.sqrt(h * d), size=(p, h * d, d))),
            store.add(f"{pre}/expert/b", np.zeros((p, d))))
        layers.append(LayerParams(heads, bank))
    readout_w, readout_b = eg.init_affine(store, "backbone/readout", d, cfg.d_obs, rng)
    return BackboneParams(fam, sig, mem_w, mem_b, mlp1_w, mlp1_b, sync_gru,
                          fuse_w, fuse_b, gru, layers, readout_w, readout_b)


# ---------------------------------------------------------------------------
# individual pipeline stages (spec surfaces; shapes as in the paper)


def aggregate_memory(window, params: BackboneParams) -> eg.Tensor:
    """Short-term memory from the raw-feature window (single-step window)."""
    if isinstance(window, (list, tuple)):
        if len(window) != 1:
            raise ShapeError(f"memory window must hold exactly one step, got {len(window)}")
        window = window[0]
    return eg.affine(eg.as_tensor(window), params.mem_w, params.mem_b, act="tanh")


def fuse_topology(tv, state, params: BackboneParams) -> eg.Tensor:
    """Blend a topological signature row into a state row (shared weights)."""
    joint = eg.concat([eg.as_tensor(tv), eg.as_tensor(state)], axis=-1)
    return eg.affine(joint, params.fuse_w, params.fuse_b, act="tanh")


def sync_mf(global_mf_prev, local_mf, params: BackboneParams) -> eg.Tensor:
    """Temporal adaptation of the stale global mean plus local refinement."""
    vbar = eg.affine(eg.as_tensor(global_mf_prev), params.mlp1_w, params.mlp1_b, act="tanh")
    return eg.gru_cell(vbar, eg.as_tensor(local_mf), params.sync_gru)


def route_scores(tv: eg.Tensor, bank: ExpertBank) -> eg.Tensor:
    """Per-expert softmax over vertices of the routing-row logits: (N, P)."""
    logits = eg.matmul(tv, eg.transpose(bank.route, (1, 0)))
    return eg.softmax(logits, axis=-2)


def merge_weights(tv: eg.Tensor, bank: ExpertBank) -> eg.Tensor:
    """Softmax over experts of vertex-summed merge-row logits: (P,)."""
    logits = eg.tsum(eg.matmul(tv, eg.transpose(bank.merge, (1, 0))), axis=-2)
    return eg.softmax(logits, axis=-1)


def build_slots(q: eg.Tensor, head_outputs: eg.Tensor) -> eg.Tensor:
    """Expert-specific slots: per-vertex scores scaled across every head.

    ``q`` is (N, P) and ``head_outputs`` (H, N, d); the result is (P, N, d, H).
    """
    tok = eg.transpose(head_outputs, (1, 2, 0))            # (N, d, H)
    qt = eg.transpose(q, (1, 0))                           # (P, N)
    return eg.unsqueeze(eg.unsqueeze(qt, -1), -1) * tok    # (P, N, d, H)


def expert_project(slots: eg.Tensor, bank: ExpertBank) -> eg.Tensor:
    """Each expert maps its slot rows (flattened head-major) back to d: (P, N, d)."""
    p, n, d, h = slots.data.shape
    flat = eg.reshape(eg.transpose(slots, (0, 1, 3, 2)), (p, n, h * d))
    return eg.tanh(eg.matmul(flat, bank.w) + eg.unsqueeze(bank.b, 1))


def merge_experts(outputs: eg.Tensor, tv: eg.Tensor, bank: ExpertBank) -> tuple[eg.Tensor, RoutingWeights]:
    """Convex combination of expert outputs with learned merge weights."""
    qt = merge_weights(tv, bank)
    mixed = eg.tsum(eg.unsqueeze(eg.unsqueeze(qt, -1), -1) * outputs, axis=0)
    return mixed, RoutingWeights(route_scores(tv, bank), qt)


def readout(v: eg.Tensor, params: BackboneParams) -> eg.Tensor:
    """Projected max pooling over vertices: (..., N, d) -> (..., d_obs)."""
    return eg.amax(eg.affine(v, params.readout_w, params.readout_b, act="tanh"), axis=-2)


def tgn_loss(predicted: eg.Tensor, actual) -> eg.Tensor:
    """Mean over vertices of squared prediction error, averaged over leading axes."""
    actual = eg.as_tensor(actual)
    if predicted.data.shape != actual.data.shape:
        raise ShapeError(f"prediction {predicted.data.shape} vs target {actual.data.shape}")
    sq = eg.tsum(eg.square(predicted - actual), axis=-1)
    return eg.tmean(eg.tmean(sq, axis=-1))


def routed_expert_merge(tok: eg.Tensor, q: eg.Tensor, s: eg.Tensor,
                        bank: ExpertBank) -> eg.Tensor:
    """Fused slot scaling, expert projection, and merge (one tape node).

    ``tok`` is (B, N, H*d) flattened head outputs, ``q`` (B, N, P) routing
    scores, ``s`` (B, P) merge weights. Computes
    sum_p s_p * tanh((tok @ W_p) * q_p + b_p) -> (B, N, d).
    """
    from . import _kernels as _k
    wv = bank.w.data                       # (P, K, d)
    p, k, d = wv.shape
    bsz, n, _ = tok.data.shape
    w2 = wv.transpose(1, 0, 2).reshape(k, p * d)
    tok2 = np.ascontiguousarray(tok.data).reshape(bsz * n, k)
    z = (tok2 @ w2).reshape(bsz, n, p, d)
    if _k.HAVE_NUMBA:
        y, out = _k.expert_merge_forward(z, np.ascontiguousarray(q.data),
                                         bank.b.data, np.ascontiguousarray(s.data))
    else:
        y = np.tanh(z * q.data[..., None] + bank.b.data)
        out = np.matmul(s.data.reshape(bsz, 1, 1, p), y).reshape(bsz, n, d)
    if not eg.grad_enabled():
        return eg.Tensor(out)

    def backward(g):
        if _k.HAVE_NUMBA:
            ds, dq, dbias, dz = _k.expert_merge_backward(
                np.ascontiguousarray(g), y, z, np.ascontiguousarray(q.data),
                np.ascontiguousarray(s.data))
        else:
            dy = s.data[:, None, :, None] * g[:, :, None, :]
            ds = np.einsum("bnpd,bnd->bp", y, g, optimize=True)
            dpre = dy * (1.0 - y * y)
            dq = (dpre * z).sum(axis=-1)
            dbias = dpre.sum(axis=(0, 1))
            dz = dpre * q.data[..., None]
        eg._accum(s, ds)
        eg._accum(q, dq)
        eg._accum(bank.b, dbias)
        dz2 = dz.reshape(bsz * n, p * d)
        eg._accum(tok, (dz2 @ w2.T).reshape(bsz, n, k))
        eg._accum(bank.w, (tok2.T @ dz2).reshape(k, p, d).transpose(1, 0, 2))

    return eg.Tensor(out, (tok, q, s, bank.w, bank.b), backward)


def expert_output_similarity(outputs: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of flattened expert outputs (P, P)."""
    flat = outputs.reshape(outputs.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    unit = flat / norms[:, None]
    sim = unit @ unit.T
    np.fill_diagonal(sim, 1.0)
    return sim


# ---------------------------------------------------------------------------
# the recurrent per-agent state


class TGNState:
    """Per-(environment, agent) predicted states and memories, keyed by lane id."""

    def __init__(self):
        self.pred: dict[str, np.ndarray] = {}
        self.memory: dict[str, np.ndarray] = {}

    def hidden_rows(self, lane_ids: list[str], raw: np.ndarray) -> np.ndarray:
        """Previous predictions; a lane first seen now starts at its raw feature."""
        return np.stack([self.pred.get(l, raw[i]) for i, l in enumerate(lane_ids)])

    def update(self, lane_ids: list[str], pred: np.ndarray, memory: np.ndarray | None = None):
        for i, lane in enumerate(lane_ids):
            self.pred[lane] = pred[i]
            if memory is not None:
                self.memory[lane] = memory[i]


# ---------------------------------------------------------------------------
# batched forward pass


@dataclass
class BatchInputs:
    """One agent's samples: arrays share the agent's static graph layout.

    ``features``/``prev`` are (B, N, d0)/(B, N, d) in the caller's vertex
    order, ``adj`` the static (N, N) adjacency, ``edge_feats`` (B, N, N, 2),
    ``global_prev``/``local_mf`` (B, d0). ``targets`` (optional) holds next-step
    raw features plus the next global mean as the last row: (B, N + 1, d0).
    """

    features: np.ndarray
    prev: np.ndarray
    adj: np.ndarray
    edge_feats: np.ndarray
    global_prev: np.ndarray
    local_mf: np.ndarray
    targets: np.ndarray | None = None


@dataclass
class ForwardResult:
    obs: eg.Tensor                  # (B, d_obs)
    pred: eg.Tensor                 # (B, N+1, d), canonical internal order
    pred_original: np.ndarray       # (B, N+1, d), caller's vertex order (values only)
    repr_loss: eg.Tensor | None
    perm: np.ndarray                # (B, N) canonical permutation used
    death_idx: np.ndarray           # (B, N+1, U) pairing used
    aux: dict


def canonical_perm(features: np.ndarray) -> np.ndarray:
    """Content-keyed vertex order: lexicographic over feature columns."""
    b, n, d = features.shape
    perm = np.empty((b, n), dtype=np.int64)
    for i in range(b):
        perm[i] = np.lexsort(tuple(features[i, :, c] for c in reversed(range(d))))
    return perm


def _undirected_edge_arrays(adj_sym_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample undirected edge endpoint arrays from a (B, N, N) mask."""
    bsz = adj_sym_mask.shape[0]
    upper = np.triu(adj_sym_mask | np.swapaxes(adj_sym_mask, 1, 2), 1)
    counts = upper.reshape(bsz, -1).sum(axis=1)
    if not np.all(counts == counts[0]):
        raise PipelineError("topology", "edge count varies inside one batch")
    _, js, ks = np.nonzero(upper)
    e = int(counts[0])
    return js.reshape(bsz, e), ks.reshape(bsz, e)


def _pairing_python(values: np.ndarray, ea: np.ndarray, eb: np.ndarray) -> np.ndarray:
    bsz, n, u = values.shape
    out = np.full((bsz, n, u), -1, dtype=np.int64)
    for i in range(bsz):
        a_row = ea[i]
        b_row = eb[i]
        for k in range(u):
            v = values[i, :, k]
            order = np.argsort(v, kind="stable")
            rank = np.empty(n, dtype=np.int64)
            rank[order] = np.arange(n)
            ev = np.maximum(v[a_row], v[b_row])
            eorder = np.argsort(ev, kind="stable")
            parent = list(range(n))
            creator = list(range(n))
            death = out[i, :, k]
            for ei in eorder:
                a = int(a_row[ei])
                b = int(b_row[ei])
                ra = a
                while parent[ra] != ra:
                    parent[ra] = parent[parent[ra]]
                    ra = parent[ra]
                rb = b
                while parent[rb] != rb:
                    parent[rb] = parent[parent[rb]]
                    rb = parent[rb]
                if ra == rb:
                    continue
                if rank[creator[ra]] < rank[creator[rb]]:
                    elder, younger = ra, rb
                else:
                    elder, younger = rb, ra
                va, vb = v[a], v[b]
                if va > vb or (va == vb and a < b):
                    death[creator[younger]] = a
                else:
                    death[creator[younger]] = b
                parent[younger] = elder
    return out


try:
    import numba as _numba

    @_numba.njit(cache=True)
    def _pairing_kernel(values, ea, eb, out):  # pragma: no cover - jitted
        bsz, n, u = values.shape
        e = ea.shape[1]
        vorder = np.empty(n, dtype=np.int64)
        rank = np.empty(n, dtype=np.int64)
        eorder = np.empty(e, dtype=np.int64)
        ev = np.empty(e)
        parent = np.empty(n, dtype=np.int64)
        creator = np.empty(n, dtype=np.int64)
        for i in range(bsz):
            for k in range(u):
                # insertion sorts give the deterministic index tie-break
                for j in range(n):
                    vorder[j] = j
                for j in range(1, n):
                    cur = vorder[j]
                    pos = j - 1
                    while pos >= 0 and values[i, vorder[pos], k] > values[i, cur, k]:
                        vorder[pos + 1] = vorder[pos]
                        pos -= 1
                    vorder[pos + 1] = cur
                for j in range(n):
                    rank[vorder[j]] = j
                for j in range(e):
                    va = values[i, ea[i, j], k]
                    vb = values[i, eb[i, j], k]
                    ev[j] = va if va > vb else vb
                    eorder[j] = j
                for j in range(1, e):
                    cur = eorder[j]
                    pos = j - 1
                    while pos >= 0 and ev[eorder[pos]] > ev[cur]:
                        eorder[pos + 1] = eorder[pos]
                        pos -= 1
                    eorder[pos + 1] = cur
                for j in range(n):
                    parent[j] = j
                    creator[j] = j
                for j in range(e):
                    ei = eorder[j]
                    a = ea[i, ei]
                    b = eb[i, ei]
                    ra = a
                    while parent[ra] != ra:
                        parent[ra] = parent[parent[ra]]
                        ra = parent[ra]
                    rb = b
                    while parent[rb] != rb:
                        parent[rb] = parent[parent[rb]]
                        rb = parent[rb]
                    if ra == rb:
                        continue
                    if rank[creator[ra]] < rank[creator[rb]]:
                        elder, younger = ra, rb
                    else:
                        elder, younger = rb, ra
                    va = values[i, a, k]
                    vb = values[i, b, k]
                    if va > vb or (va == vb and a < b):
                        out[i, creator[younger], k] = a
                    else:
                        out[i, creator[younger], k] = b
                    parent[younger] = elder

    def pairing_batch(values: np.ndarray, ea: np.ndarray, eb: np.ndarray) -> np.ndarray:
        """Union-find pairing per (sample, filtration): death-vertex indices.

        ``values`` is (B, N, U); ``ea``/``eb`` are (B, E) endpoint arrays.
        Returns (B, N, U) with -1 marking essential classes.
        """
        bsz, n, u = values.shape
        out = np.full((bsz, n, u), -1, dtype=np.int64)
        if ea.shape[1]:
            _pairing_kernel(np.ascontiguousarray(values),
                            np.ascontiguousarray(ea), np.ascontiguousarray(eb), out)
        return out

except ImportError:  # pragma: no cover - numba is a declared dependency
    pairing_batch = _pairing_python


def forward_batch(params: BackboneParams, batch: BatchInputs, cfg: RunConfig,
                  death_idx: np.ndarray | None = None, perm: np.ndarray | None = None,
                  ablate_tv: str | None = None, collect_aux: bool = False,
                  assume_canonical: bool = False) -> ForwardResult:
    """Run the full pipeline on a batch of same-shaped sub-graphs.

    With ``assume_canonical`` the inputs (including targets) are taken to be in
    content order already and the reordering gathers are skipped; ``batch.adj``
    may then be per-sample (B, N, N).
    """
    bsz, n, d0 = batch.features.shape
    bidx = np.arange(bsz)[:, None]
    if assume_canonical:
        perm = np.broadcast_to(np.arange(n), (bsz, n))
        inv = perm
        feats_c = batch.features
        prev_c = batch.prev
        adj_c = batch.adj if batch.adj.ndim == 3 else np.broadcast_to(batch.adj, (bsz, n, n))
        ef_c = batch.edge_feats
    else:
        if perm is None:
            perm = canonical_perm(batch.features)
        inv = np.argsort(perm, axis=1)
        feats_c = batch.features[bidx, perm]
        prev_c = batch.prev[bidx, perm]
        adj_c = batch.adj[perm[:, :, None], perm[:, None, :]]
        ef_c = batch.edge_feats[np.arange(bsz)[:, None, None], perm[:, :, None], perm[:, None, :]]

    # augmented graph: mean-field vertex pinned at the last slot
    na = n + 1
    feats_a = np.concatenate([feats_c, batch.global_prev[:, None, :]], axis=1)
    adj_a = np.zeros((bsz, na, na), dtype=bool)
    adj_a[:, :n, :n] = adj_c.astype(bool)
    adj_a[:, :n, n] = True
    ef_a = np.zeros((bsz, na, na, 2))
    ef_a[:, :n, :n] = ef_c
    ef_a[:, :n, n] = MF_EDGE_FEATURE

    try:
        mf_hidden = sync_mf(batch.global_prev, batch.local_mf, params)      # (B, d)
        prev_t = eg.concat([eg.Tensor(prev_c), eg.unsqueeze(mf_hidden, 1)], axis=1)
    except ValueError as err:
        raise PipelineError("mf-sync", str(err)) from err

    try:
        feats_t = eg.Tensor(feats_a)
        values = tp.filtration_values(feats_t, params.fam)                  # (B, N+1, U)
        if death_idx is None:
            ea, eb = _undirected_edge_arrays(adj_a)
            death_idx = pairing_batch(values.data, ea, eb)
        block = tp.vertex_embedding_block(values, death_idx, params.sig.embed)
        half = params.fam.size * tp.EMBED_WIDTH
        tv = eg.affine(block, params.sig.weight[:half], params.sig.bias, act="tanh")
        if ablate_tv == "sum":
            tv = eg.tsum(tv, axis=-2, keepdims=True) + eg.Tensor(np.zeros((bsz, na, 1)))
        elif ablate_tv is not None:
            raise ShapeError(f"unknown ablation mode {ablate_tv!r}")
    except ValueError as err:
        raise PipelineError("topo-signature", str(err)) from err

    try:
        mem = aggregate_memory(feats_t, params)
        hidden = fuse_topology(tv, prev_t, params)
        mem_f = fuse_topology(tv, mem, params)
        x = eg.gru_cell(hidden, mem_f, params.gru)                          # (B, N+1, d)
    except ValueError as err:
        raise PipelineError("temporal-update", str(err)) from err

    mask = adj_a | np.eye(na, dtype=bool)
    neg = np.where(mask, 0.0, -1e30)
    ef_t = eg.Tensor(ef_a)
    aux: dict = {"q_per_layer": [], "q_tilde_per_layer": [], "expert_outputs": []} if collect_aux else {}

    h, p, d = cfg.heads, cfg.experts, cfg.d
    for li, layer in enumerate(params.layers):
        try:
            # multi-head attention, flattened to single GEMMs
            x2 = eg.reshape(x, (bsz * na, d))
            w2 = eg.reshape(eg.transpose(layer.heads.w, (1, 0, 2)), (d, h * d))
            xh4 = eg.reshape(eg.matmul(x2, w2), (bsz, na, h, d))            # (B, N+1, H, d)
            xh = eg.transpose(xh4, (0, 2, 1, 3))                            # (B, H, N+1, d)
            src = eg.matmul(xh, layer.heads.a_src)                          # (B, H, N+1, 1)
            dst = eg.matmul(xh, layer.heads.a_dst)
            ef2 = eg.reshape(ef_t, (bsz * na * na, 2))
            we2 = eg.reshape(eg.transpose(layer.heads.w_e, (1, 0, 2)), (2, h))
            ew = eg.transpose(eg.reshape(eg.matmul(ef2, we2), (bsz, na, na, h)), (0, 3, 1, 2))
            logits = src + eg.transpose_last2(dst) + ew
            alpha = eg.masked_softmax(logits, mask[:, None], 0.2)
            agg = eg.matmul(alpha, xh)                                      # (B, H, N+1, d)

            # topology-routed experts over the head outputs
            tok = eg.reshape(eg.transpose(agg, (0, 2, 1, 3)), (bsz, na, h * d))
            q = eg.softmax(eg.matmul(tv, eg.transpose(layer.bank.route, (1, 0))), axis=-2)
            mlog = eg.tsum(eg.matmul(tv, eg.transpose(layer.bank.merge, (1, 0))), axis=-2)
            s = eg.softmax(mlog, axis=-1)                                   # (B, P)
            x = routed_expert_merge(tok, q, s, layer.bank)                  # (B, N+1, d)
            if collect_aux:
                with eg.no_grad():
                    z = eg.matmul(eg.unsqueeze(tok, 1),
                                  eg.reshape(eg.transpose(layer.bank.w, (1, 0, 2)),
                                             (1, h * d, p * d)))
                aux["q_per_layer"].append(q.data.copy())
                aux["q_tilde_per_layer"].append(s.data.copy())
                y = np.tanh(z.data.reshape(bsz, na, p, d) * q.data[..., None] + layer.bank.b.data)
                aux["expert_outputs"].append(y.transpose(0, 2, 1, 3).copy())
        except ValueError as err:
            raise PipelineError(f"moe-layer-{li}", str(err)) from err

    try:
        obs = readout(x, params)
    except ValueError as err:
        raise PipelineError("readout", str(err)) from err

    repr_loss = None
    if batch.targets is not None:
        try:
            if assume_canonical:
                targets_c = batch.targets
            else:
                targets_c = np.concatenate(
                    [batch.targets[:, :n][bidx, perm], batch.targets[:, n:][:, :1]], axis=1)
            repr_loss = tgn_loss(x, targets_c)
        except ValueError as err:
            raise PipelineError("repr-loss", str(err)) from err

    if assume_canonical:
        pred_orig = x.data
    else:
        pred_orig = np.concatenate([x.data[:, :n][bidx, inv], x.data[:, n:, :]], axis=1)
    return ForwardResult(obs, x, pred_orig, repr_loss, perm, death_idx, aux)


def tgn_forward(g: AugmentedSubGraph, state: TGNState, params: BackboneParams,
                cfg: RunConfig, targets: np.ndarray | None = None,
                ablate_tv: str | None = None):
    """Single-graph pipeline run; returns (predictions, observation, new state).

    Predictions come back in the graph's own vertex order (mean-field row
    last); the state is updated with the new per-lane predictions.
    """
    base = g.base
    raw = base.features
    prev = state.hidden_rows(base.vertices, raw)
    batch = BatchInputs(
        features=raw[None], prev=prev[None], adj=base.adjacency,
        edge_feats=base.edge_features[None], global_prev=g.mf_feature[None],
        local_mf=compute_local_mf(base)[None],
        targets=None if targets is None else targets[None])
    result = forward_batch(params, batch, cfg, ablate_tv=ablate_tv)
    new_state = TGNState()
    new_state.pred = dict(state.pred)
    new_state.memory = dict(state.memory)
    with eg.no_grad():
        mem = aggregate_memory(eg.Tensor(raw), params).data
    new_state.update(base.vertices, result.pred_original[0, :base.n_vertices], mem)
    obs = eg.reshape(result.obs, (cfg.d_obs,))
    pred = result.pred_original[0]
    return pred, obs, new_state, result
