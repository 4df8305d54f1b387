"""Model parameters, losses, Adam, and the training loop.

One training step records the whole forward pass on a fresh tape: global
intent propagation over the intact KG, light aggregation of the global
(and, when the contrastive weight is nonzero, local) track over the
epoch's sampled view, pairwise ranking loss over the batch, the
layer-wise contrastive term, and L2 over every parameter. The knowledge
view is redrawn once per epoch, between steps.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import denoise, intents, metrics
from .errors import CheckpointError, ContractError, TrainingDiverged


def _xavier(rng, rows, cols):
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class ModelParameters:
    """The learnable set: embedding tables, prototypes, head projections."""

    user_emb: ad.Tensor
    entity_emb: ad.Tensor
    relation_emb: ad.Tensor
    intent_user: ad.Tensor
    intent_item: ad.Tensor
    transformer: list
    share_transformer: bool = False

    @classmethod
    def initialize(cls, n_users, n_entities, n_relations, cfg, rng):
        d, K, H = cfg.embed_dim, cfg.n_intents, cfg.n_heads
        if d % H != 0:
            raise ContractError(f"head count {H} must divide embedding size {d}")
        dh = d // H
        n_layer_params = 1 if cfg.share_transformer_weights else max(1, cfg.depth)
        layers = []
        for _ in range(n_layer_params):
            heads = [
                intents.HeadProjections(
                    wq=ad.parameter(_xavier(rng, dh, d)),
                    wk=ad.parameter(_xavier(rng, dh, d)),
                    wv=ad.parameter(_xavier(rng, dh, d)),
                )
                for _ in range(H)
            ]
            layers.append(intents.TransformerLayerParams(heads=heads))
        return cls(
            user_emb=ad.parameter(_xavier(rng, n_users, d)),
            entity_emb=ad.parameter(_xavier(rng, n_entities, d)),
            relation_emb=ad.parameter(_xavier(rng, n_relations, d)),
            intent_user=ad.parameter(_xavier(rng, K, d)),
            intent_item=ad.parameter(_xavier(rng, K, d)),
            transformer=layers,
            share_transformer=cfg.share_transformer_weights,
        )

    def named(self):
        out = [
            ("user_emb", self.user_emb),
            ("entity_emb", self.entity_emb),
            ("relation_emb", self.relation_emb),
            ("intent_user", self.intent_user),
            ("intent_item", self.intent_item),
        ]
        for l, layer in enumerate(self.transformer):
            out.extend((f"transformer.l{l}.{name}", t) for name, t in layer.tensors())
        return out

    def layer_list(self, depth):
        if self.share_transformer:
            return [self.transformer[0]] * depth
        return self.transformer[:depth]

    def l2_term(self):
        total = None
        for _, p in self.named():
            sq = ad.sum_all(ad.mul(p, p))
            total = sq if total is None else total + sq
        return total

    def copy_values(self):
        return {name: p.values.copy() for name, p in self.named()}

    def load_values(self, blob):
        for name, p in self.named():
            if name not in blob:
                raise CheckpointError(f"checkpoint is missing parameter '{name}'")
            if blob[name].shape != p.values.shape:
                raise CheckpointError(
                    f"parameter '{name}' has shape {blob[name].shape}, expected {p.values.shape}"
                )
            p.values[...] = blob[name]


class Adam:
    """Bias-corrected Adam over named leaf tensors."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for _, p in self.params]
        self.v = [np.zeros_like(p.values) for _, p in self.params]

    def step(self):
        self.t += 1
        for k, (name, p) in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if not np.isfinite(g).all():
                raise TrainingDiverged(f"non-finite gradient in parameter '{name}'")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1.0 - self.beta2 ** self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# forward assembly


def _global_entity_seed(state, n_items, n_entities):
    rest = np.arange(n_items, n_entities)
    if rest.size:
        return ad.concat([state.items[-1], ad.gather_rows(state.prop_entities, rest)], axis=0)
    return state.items[-1]


def global_state(params, dataset, cfg):
    """Intent-aware propagation over the intact KG and interaction graph."""
    return intents.forward_global(
        params.user_emb,
        params.entity_emb,
        params.relation_emb,
        params.intent_user,
        params.intent_item,
        params.layer_list(cfg.depth),
        dataset.train_graph,
        dataset.kg.full_edges(),
        cfg.depth,
        dataset.n_items,
    )


def compute_tracks(params, dataset, view, cfg, with_local):
    """Global propagation plus light aggregation of one or both tracks."""
    graph = dataset.train_graph
    state = global_state(params, dataset, cfg)
    global_track = denoise.light_aggregate(
        state.users[-1],
        _global_entity_seed(state, dataset.n_items, dataset.n_entities),
        params.relation_emb,
        view.edges,
        graph,
        cfg.agg_depth,
        dataset.n_items,
    )
    local_track = None
    if with_local:
        local_track = denoise.light_aggregate(
            params.user_emb,
            params.entity_emb,
            params.relation_emb,
            view.edges,
            graph,
            cfg.agg_depth,
            dataset.n_items,
        )
    return state, global_track, local_track


def predict(users, items, global_track):
    """Matching scores: inner product of layer-summed user/item vectors."""
    zu, zi = global_track.summed()
    return ad.rowsum(ad.mul(ad.gather_rows(zu, np.asarray(users)),
                            ad.gather_rows(zi, np.asarray(items))))


def bpr_loss(pos_scores, neg_scores):
    """Mean pairwise ranking loss -ln sigma(pos - neg), via softplus(neg - pos)."""
    return ad.mean_all(ad.softplus(ad.sub(neg_scores, pos_scores)))


def total_loss(bpr, contrastive, params, alpha, l2_weight):
    """Weighted multi-task objective; L2 covers every parameter entry."""
    reg = params.l2_term()
    total = bpr
    if contrastive is not None and alpha != 0.0:
        total = total + ad.mul(contrastive, alpha)
    total = total + ad.mul(reg, l2_weight)
    return total, reg


def training_step_loss(params, dataset, view, cfg, batch):
    """Loss for one (user, pos, neg) batch; returns (total, parts dict)."""
    users, pos_items, neg_items = batch[:, 0], batch[:, 1], batch[:, 2]
    with_contrast = cfg.alpha != 0.0
    _, global_track, local_track = compute_tracks(params, dataset, view, cfg, with_contrast)
    pos_scores = predict(users, pos_items, global_track)
    neg_scores = predict(users, neg_items, global_track)
    bpr = bpr_loss(pos_scores, neg_scores)
    contrast = None
    if with_contrast:
        bu = np.unique(users)
        bi = np.unique(pos_items)
        if bu.size < 2 or bi.size < 2:
            raise ContractError(
                "contrastive loss needs at least 2 distinct users and items per batch"
            )
        contrast = denoise.contrastive_loss(
            global_track.gather(bu, bi),
            local_track.gather(bu, bi),
            cfg.tau,
            include_positive=cfg.infonce_standard,
        )
    total, reg = total_loss(bpr, contrast, params, cfg.alpha, cfg.l2)
    parts = {
        "bpr": float(bpr.values),
        "cl": float(contrast.values) if contrast is not None else 0.0,
        "reg": float(reg.values),
    }
    return total, parts


# ---------------------------------------------------------------------------
# epoch loop


def sample_bpr_negatives(graph, users, rng):
    """One uniformly drawn non-interacted item per user row (with rejection)."""
    n_items = graph.n_items
    negs = rng.integers(0, n_items, size=users.shape[0])
    for k in range(users.shape[0]):
        u = int(users[k])
        guard = 0
        while graph.has(u, int(negs[k])):
            negs[k] = rng.integers(0, n_items)
            guard += 1
            if guard > 100 * n_items:
                raise ContractError(f"user {u} has no negative items to sample")
    return negs


def build_bpr_triples(graph, train_pos, rng):
    """(user, pos, neg) triples, one fresh negative per trainable positive.

    Positives of users who interacted with every item are skipped: no
    ranking pair exists for them.
    """
    degrees = np.diff(graph.u_offsets)
    keep = degrees[train_pos[:, 0]] < graph.n_items
    kept = train_pos[keep]
    if kept.shape[0] == 0:
        raise ContractError("no trainable positives: every user covers all items")
    negs = sample_bpr_negatives(graph, kept[:, 0], rng)
    return np.column_stack([kept, negs])


def _epoch_batches(triples, batch_size, rng):
    perm = rng.permutation(triples.shape[0])
    shuffled = triples[perm]
    batches = [shuffled[k:k + batch_size] for k in range(0, shuffled.shape[0], batch_size)]
    if len(batches) > 1 and batches[-1].shape[0] == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]], axis=0)
        batches.pop()
    return batches


def representations(params, dataset, cfg):
    """Final layer-summed user/item matrices on the intact KG (no recording)."""
    view = denoise.full_view(dataset.kg)
    _, global_track, _ = compute_tracks(params, dataset, view, cfg, with_local=False)
    zu, zi = global_track.summed()
    return zu.values, zi.values


def _eval_ctr(params, dataset, cfg, pairs):
    if pairs.shape[0] == 0 or np.unique(pairs[:, 2]).size < 2:
        return float("nan"), float("nan")
    zu, zi = representations(params, dataset, cfg)
    raw = (zu[pairs[:, 0]] * zi[pairs[:, 1]]).sum(axis=1)
    probs = 1.0 / (1.0 + np.exp(-raw))
    labels = pairs[:, 2]
    return metrics.auc(probs, labels), metrics.f1(probs, labels)


@dataclass
class FitResult:
    params: ModelParameters
    log: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def fit(cfg, dataset):
    """Train on the dataset's train split; returns parameters and the log.

    Per epoch: redraw the knowledge view from the current intent-aware
    representations, resample one ranking negative per positive, then sweep
    shuffled batches recording forward/backward and applying Adam. Early
    stopping watches eval AUC with the configured patience and restores the
    best parameters. Non-finite losses or gradients abort with the last
    completed epoch's parameters attached.
    """
    rng = np.random.default_rng(cfg.seed)
    params = ModelParameters.initialize(
        dataset.n_users, dataset.n_entities, dataset.n_relations, cfg, rng
    )
    optimizer = Adam(params.named(), lr=cfg.lr)
    graph = dataset.train_graph
    train_pos = dataset.split.train[:, :2]
    log = []
    best_auc = -np.inf
    best_epoch = -1
    best_values = None
    last_good = params.copy_values()
    stopped = False

    for epoch in range(cfg.epochs):
        dataset.kg.reset_mask()
        if cfg.sample_knowledge and dataset.kg.n_triples:
            state = global_state(params, dataset, cfg)
            entity_vals = _global_entity_seed(state, dataset.n_items, dataset.n_entities).values
            view = denoise.sample_topk(
                dataset.kg, entity_vals, params.relation_emb.values, cfg.k_top, rng
            )
            dataset.kg.set_active(view.kept)
        else:
            view = denoise.full_view(dataset.kg)

        triples = build_bpr_triples(graph, train_pos, rng)
        sums = {"bpr": 0.0, "cl": 0.0, "reg": 0.0}
        n_batches = 0
        for batch in _epoch_batches(triples, cfg.batch_size, rng):
            optimizer.zero_grad()
            with ad.Tape() as tape:
                loss, parts = training_step_loss(params, dataset, view, cfg, batch)
            if not np.isfinite(loss.values):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good=last_good
                )
            tape.backward(loss)
            try:
                optimizer.step()
            except TrainingDiverged as err:
                raise TrainingDiverged(str(err), last_good=last_good) from None
            for key in sums:
                sums[key] += parts[key]
            n_batches += 1

        eval_auc, eval_f1 = _eval_ctr(params, dataset, cfg, dataset.split.eval)
        log.append(
            {
                "epoch": epoch,
                "loss_bpr": sums["bpr"] / max(1, n_batches),
                "loss_cl": sums["cl"] / max(1, n_batches),
                "loss_reg": sums["reg"] / max(1, n_batches),
                "eval_auc": eval_auc,
                "eval_f1": eval_f1,
            }
        )
        last_good = params.copy_values()
        if not math.isnan(eval_auc):
            if eval_auc > best_auc:
                best_auc = eval_auc
                best_epoch = epoch
                best_values = params.copy_values()
            elif epoch - best_epoch >= cfg.patience:
                stopped = True
                break

    if best_values is not None:
        params.load_values(best_values)
    return FitResult(params=params, log=log, best_epoch=best_epoch, stopped_early=stopped)


# ---------------------------------------------------------------------------
# checkpoints and metric logs

_MAGIC = b"KGTNCKPT"
_VERSION = 1


def save_checkpoint(path, named_values):
    """Versioned binary checkpoint: named float64 little-endian blobs."""
    items = list(named_values.items()) if isinstance(named_values, dict) else list(named_values)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        blob = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise CheckpointError(f"{path}: truncated data for parameter '{name}'")
            blob[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return blob


_LOG_COLUMNS = ("epoch", "loss_bpr", "loss_cl", "loss_reg", "eval_auc", "eval_f1")


def write_metric_log(path, log):
    """CSV metric log with repr-exact floats (bitwise reproducible)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_LOG_COLUMNS) + "\n")
        for row in log:
            cells = [str(row["epoch"])] + [repr(float(row[c])) for c in _LOG_COLUMNS[1:]]
            fh.write(",".join(cells) + "\n")
