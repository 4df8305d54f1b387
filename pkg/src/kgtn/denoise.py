"""Intent-guided knowledge sampling and the local-global contrastive task.

Sampling scores each KG slot with the same relation-aware attention used
during global propagation, but computed from the intent-aware
representations; Gumbel noise perturbs the raw attention logits for the
top-k selection only (per-neighborhood softmax is order-preserving, so
selecting on logits and selecting on attention weights keep the same slots;
the logit scale is what makes a large score gap beat the noise). The
retained weight of a kept slot is its clean attention value.

Both contrastive views run the same parameter-free light aggregation over
the sampled graph: the global track is seeded with the intent-aware
representations, the local track with the initial embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import KGEdges
from .errors import ContractError, DomainError

EULER_MASCHERONI = 0.5772156649015329


def gumbel_from_uniform(eps):
    """Map Uniform(0,1) draws to standard Gumbel noise: -log(-log(eps))."""
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0.0) or np.any(eps >= 1.0):
        raise DomainError("gumbel_from_uniform: eps must lie strictly inside (0, 1)")
    return -np.log(-np.log(eps))


def gumbel_perturb(score, eps):
    """Add Gumbel(0, 1) noise derived from `eps` to a score."""
    return np.asarray(score, dtype=np.float64) + gumbel_from_uniform(eps)


def sample_gumbel(rng, size):
    """Draw seeded Gumbel noise; endpoint uniforms are resampled, never used."""
    eps = rng.random(size)
    bad = eps <= 0.0  # rng.random() is already < 1
    while bad.any():
        eps[bad] = rng.random(int(bad.sum()))
        bad = eps <= 0.0
    return -np.log(-np.log(eps))


@dataclass
class SampledGraphView:
    """Kept/dropped decision per KG slot plus the retained clean weights."""

    kg: object
    kept: np.ndarray        # (T,) bool over full slot order
    beta_hat: np.ndarray    # (T,) clean attention weight, exactly 0 where dropped
    edges: KGEdges          # CSR restricted to kept slots

    @property
    def n_kept(self):
        return int(self.kept.sum())


def full_view(kg):
    """Structural view keeping the whole knowledge graph (no scoring pass)."""
    kept = np.ones(kg.n_triples, dtype=bool)
    return SampledGraphView(kg=kg, kept=kept, beta_hat=np.ones(kg.n_triples), edges=kg.full_edges())


def _edge_logits(edges, entity_vals, relation_vals):
    ei = entity_vals[edges.head]
    ev = entity_vals[edges.tail]
    er = relation_vals[edges.rel]
    return (ei * ev).sum(axis=1) + (er * er).sum(axis=1)


def sample_topk(kg, entity_vals, relation_vals, k_top, rng):
    """Keep at most `k_top` slots per head entity, Gumbel-perturbed.

    `entity_vals`/`relation_vals` are plain arrays (the selection is a
    stop-gradient structural decision). Kept slots retain their unperturbed
    attention weight; dropped slots get exactly 0. Ties in the perturbed
    score break toward the lower slot index. Deterministic under a seeded
    generator.
    """
    if k_top is not None and k_top < 1:
        raise ContractError(f"k_top must be at least 1, got {k_top}")
    edges = kg.full_edges()
    n_edges = edges.n_edges
    if n_edges == 0:
        return SampledGraphView(kg=kg, kept=np.zeros(0, bool), beta_hat=np.zeros(0), edges=edges)

    logits = _edge_logits(edges, np.asarray(entity_vals), np.asarray(relation_vals))
    beta = ad.segment_softmax(ad.constant(logits), edges.offsets).values

    if k_top is None or k_top >= int(edges.counts.max(initial=0)):
        kept = np.ones(n_edges, dtype=bool)
    else:
        perturbed = logits + sample_gumbel(rng, n_edges)
        order = np.lexsort((np.arange(n_edges), -perturbed, edges.head))
        rank_in_head = np.arange(n_edges) - np.repeat(edges.offsets[:-1], edges.counts)
        kept = np.empty(n_edges, dtype=bool)
        kept[order] = rank_in_head < k_top

    beta_hat = np.where(kept, beta, 0.0)
    masked = KGEdges(
        offsets=_masked_offsets(edges, kept),
        rel=edges.rel[kept],
        tail=edges.tail[kept],
        head=edges.head[kept],
    )
    return SampledGraphView(kg=kg, kept=kept, beta_hat=beta_hat, edges=masked)


def _masked_offsets(edges, kept):
    n = edges.offsets.size - 1
    counts = np.zeros(n, dtype=np.int64)
    if kept.any():
        np.add.at(counts, edges.head[kept], 1)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


@dataclass
class LayerStack:
    """Per-layer user and item matrices for one aggregation track."""

    users: list   # layer 0..L_agg tensors (M, d)
    items: list   # layer 0..L_agg tensors (N, d)

    @property
    def n_layers(self):
        return len(self.users)

    def summed(self):
        """Layer-summed user and item representations."""
        zu, zi = self.users[0], self.items[0]
        for u, i in zip(self.users[1:], self.items[1:]):
            zu = zu + u
            zi = zi + i
        return zu, zi

    def gather(self, user_idx, item_idx):
        return LayerStack(
            users=[ad.gather_rows(u, user_idx) for u in self.users],
            items=[ad.gather_rows(i, item_idx) for i in self.items],
        )


def _mean_pool(prev, msgs, offsets):
    n = prev.values.shape[0]
    agg = ad.segment_sum_rows(msgs, offsets)
    counts = np.diff(offsets).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
    empty = (counts == 0).astype(np.float64)
    return ad.scale_rows(agg, inv) + ad.scale_rows(prev, empty)


def light_aggregate(user_seed, entity_seed, relation_emb, view_edges, graph, depth, n_items):
    """Parameter-free propagation over the sampled KG and interaction graph.

    Entities average relation-gated kept neighbors; users average their
    interacted items' previous-layer values. Nodes with no active edges
    pass through unchanged. Returns all layers 0..depth.
    """
    item_idx = np.arange(n_items)
    zu = [user_seed]
    ze = [entity_seed]
    for _ in range(depth):
        z = ze[-1]
        if view_edges.n_edges:
            msgs = ad.mul(ad.gather_rows(relation_emb, view_edges.rel),
                          ad.gather_rows(z, view_edges.tail))
            e_next = _mean_pool(z, msgs, view_edges.offsets)
        else:
            e_next = z
        u_msgs = ad.gather_rows(ad.gather_rows(z, item_idx), graph.u_items)
        u_next = _mean_pool(zu[-1], u_msgs, graph.u_offsets)
        zu.append(u_next)
        ze.append(e_next)
    return LayerStack(users=zu, items=[ad.gather_rows(z, item_idx) for z in ze])


def _normalize_rows(z):
    sq = ad.rowsum(ad.mul(z, z))
    if np.any(sq.values <= 0.0):
        raise DomainError("contrastive_loss: zero-norm embedding row")
    norms = ad.sqrt(sq)
    inv = ad.div(ad.constant(np.ones(norms.values.shape[0])), norms)
    return ad.scale_rows(z, inv)


def _side_loss(global_layers, local_layers, tau, include_positive):
    b = global_layers[0].values.shape[0]
    eye = np.eye(b)
    total = None
    for zg, zl in zip(global_layers, local_layers):
        gn = _normalize_rows(zg)
        ln = _normalize_rows(zl)
        s_cross = ad.matmul(gn, ad.transpose(ln))
        s_self = ad.matmul(gn, ad.transpose(gn))
        exp_cross = ad.exp(ad.mul(s_cross, 1.0 / tau))
        exp_self = ad.exp(ad.mul(s_self, 1.0 / tau))
        pos = ad.rowsum(ad.mul(exp_cross, eye))
        diag_self = ad.rowsum(ad.mul(exp_self, eye))
        denom = ad.rowsum(exp_self) - diag_self + ad.rowsum(exp_cross)
        if not include_positive:
            denom = denom - pos
        term = ad.log(denom) - ad.log(pos)
        layer_loss = ad.mean_all(term)
        total = layer_loss if total is None else total + layer_loss
    # Layers 0..L are summed and divided by L; a single-layer input
    # degenerates to a factor of 1. Each layer term averages over the
    # in-batch nodes so the objective scale is batch-size free and sits at
    # the same level as the mean ranking loss.
    return ad.mul(total, 1.0 / max(1, len(global_layers) - 1))


def contrastive_loss(global_track, local_track, tau, include_positive=False):
    """Layer-wise InfoNCE between the global and local aggregation tracks.

    Positive pairs are the same node's embeddings across tracks; negatives
    are every other in-batch node, in both the global and the local view.
    The denominator excludes the positive pair, so negative loss values are
    legal; `include_positive=True` switches to the conventional form. The
    user side and item side are averaged over their in-batch nodes and
    added. Both tracks must carry the same number of layers and at least
    two nodes per side.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    if global_track.n_layers != local_track.n_layers:
        raise ContractError(
            f"track layer counts differ: {global_track.n_layers} vs {local_track.n_layers}"
        )
    for layers in (global_track.users, global_track.items):
        if layers[0].values.shape[0] < 2:
            raise ContractError("contrastive batch must contain at least 2 nodes per side")
    user_loss = _side_loss(global_track.users, local_track.users, tau, include_positive)
    item_loss = _side_loss(global_track.items, local_track.items, tau, include_positive)
    return user_loss + item_loss
