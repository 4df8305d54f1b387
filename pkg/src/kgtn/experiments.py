"""Evaluation protocol: CTR metrics, top-K recall, ablations, noise runs."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, training
from .data import inject_noise
from .errors import ContractError


@dataclass
class MetricRow:
    label: str
    auc: float
    f1: float
    recall: dict = field(default_factory=dict)   # K -> recall@K


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    noise_drops: dict = field(default_factory=dict)  # ratio -> (auc %drop, f1 %drop)

    def validate(self):
        for row in self.rows:
            if not (0.0 <= row.auc <= 1.0 and 0.0 <= row.f1 <= 1.0):
                raise ContractError(f"{row.label}: metrics out of [0, 1]")
            ks = sorted(row.recall)
            values = [row.recall[k] for k in ks]
            if any(b < a - 1e-12 for a, b in zip(values, values[1:])):
                raise ContractError(f"{row.label}: recall@K decreased in K")
        return self

    def render_table(self):
        ks = sorted({k for row in self.rows for k in row.recall})
        header = ["variant", "auc", "f1"] + [f"recall@{k}" for k in ks]
        lines = ["  ".join(f"{h:>12}" for h in header)]
        for row in self.rows:
            cells = [row.label, f"{row.auc:.4f}", f"{row.f1:.4f}"]
            cells += [f"{row.recall.get(k, float('nan')):.4f}" for k in ks]
            lines.append("  ".join(f"{c:>12}" for c in cells))
        if self.noise_drops:
            lines.append("")
            lines.append("  ".join(f"{h:>12}" for h in ("noise %", "auc drop %", "f1 drop %")))
            for ratio in sorted(self.noise_drops):
                da, df = self.noise_drops[ratio]
                lines.append("  ".join(f"{c:>12}" for c in (f"{100 * ratio:.0f}", f"{da:.2f}", f"{df:.2f}")))
        return "\n".join(lines)

    def to_csv(self):
        ks = sorted({k for row in self.rows for k in row.recall})
        out = ["label,auc,f1," + ",".join(f"recall_at_{k}" for k in ks)]
        for row in self.rows:
            cells = [row.label, repr(row.auc), repr(row.f1)]
            cells += [repr(row.recall.get(k, float("nan"))) for k in ks]
            out.append(",".join(cells))
        for ratio in sorted(self.noise_drops):
            da, df = self.noise_drops[ratio]
            out.append(f"noise_{ratio},{da!r},{df!r}")
        return "\n".join(out) + "\n"


def ctr_scores(zu, zi, pairs):
    """Sigmoid click probabilities for labelled (user, item) pairs."""
    raw = (zu[pairs[:, 0]] * zi[pairs[:, 1]]).sum(axis=1)
    return 1.0 / (1.0 + np.exp(-raw))


def balanced_pairs(dataset, split="train", seed=123):
    """Positives of a split plus per-user balanced sampled negatives.

    Eval/test splits already carry frozen negatives; this helper exists for
    measuring CTR metrics on the train portion (whose ranking negatives are
    resampled every epoch and never stored).
    """
    from .data import negative_sample

    pairs = getattr(dataset.split, split)
    positives = pairs[pairs[:, 2] == 1]
    graph = dataset.train_graph
    rng = np.random.default_rng(seed)
    rows = [(int(u), int(i), 1) for u, i in positives[:, :2]]
    counts = {}
    for u, _ in positives[:, :2]:
        counts[int(u)] = counts.get(int(u), 0) + 1
    for u in sorted(counts):
        avail = dataset.n_items - graph.user_degree(u)
        if avail <= 0:
            continue
        for j in negative_sample(graph, u, min(counts[u], avail), rng):
            rows.append((u, int(j), 0))
    return np.array(rows, dtype=np.int64)


def ctr_eval(zu, zi, pairs):
    probs = ctr_scores(zu, zi, pairs)
    labels = pairs[:, 2]
    return metrics.auc(probs, labels), metrics.f1(probs, labels)


def recall_at_k(zu, zi, dataset, ks, split="test"):
    """Mean Recall@K over users with at least one test positive.

    Candidates are every item except the user's training positives; the
    exclusion guards against leaking memorized training interactions into
    the ranking.
    """
    ks = sorted(ks)
    pairs = getattr(dataset.split, split)
    positives = pairs[pairs[:, 2] == 1]
    by_user = {}
    for u, i in positives[:, :2]:
        by_user.setdefault(int(u), []).append(int(i))
    graph = dataset.train_graph
    totals = {k: 0.0 for k in ks}
    n_users = 0
    for u, relevant in sorted(by_user.items()):
        scores = zu[u] @ zi.T
        train_items = graph.items_of(u)
        scores = scores.copy()
        scores[train_items] = -np.inf
        order = np.argsort(-scores, kind="stable")
        n_users += 1
        for k in ks:
            totals[k] += metrics.recall_from_ranking(order[:k], relevant, k)
    if n_users == 0:
        return {k: float("nan") for k in ks}
    return {k: totals[k] / n_users for k in ks}


def evaluate_model(params, dataset, cfg, label="model", split="test"):
    """MetricRow for a trained parameter set on one split."""
    zu, zi = training.representations(params, dataset, cfg)
    pairs = getattr(dataset.split, split)
    auc_value, f1_value = ctr_eval(zu, zi, pairs)
    recall = recall_at_k(zu, zi, dataset, cfg.recall_ks, split=split)
    return MetricRow(label=label, auc=auc_value, f1=f1_value, recall=recall)


def train_and_evaluate(cfg, dataset, label="model"):
    result = training.fit(cfg, dataset)
    row = evaluate_model(result.params, dataset, cfg, label=label)
    return result, row


# ---------------------------------------------------------------------------
# ablation harness

ABLATION_VARIANTS = ("full", "wo_sampling", "wo_contrast", "wo_intents")


def variant_config(cfg, variant):
    """Configuration mapping for one ablation variant."""
    if variant == "full":
        return replace(cfg)
    if variant == "wo_sampling":
        return replace(cfg, sample_knowledge=False)
    if variant == "wo_contrast":
        return replace(cfg, alpha=0.0)
    if variant == "wo_intents":
        return replace(cfg, n_intents=1, sample_knowledge=False, alpha=0.0)
    raise ContractError(f"unknown ablation variant '{variant}'")


def run_ablation(cfg, dataset):
    """Train all four variants under identical seeds/splits and report."""
    report = MetricReport()
    for variant in ABLATION_VARIANTS:
        vcfg = variant_config(cfg, variant)
        _, row = train_and_evaluate(vcfg, dataset, label=variant)
        report.rows.append(row)
    return report.validate()


# ---------------------------------------------------------------------------
# noise robustness protocol

NOISE_RATIOS = (0.0, 0.05, 0.10, 0.15, 0.20)


def noise_robustness(cfg, dataset, ratios=NOISE_RATIOS):
    """Contaminate training positives at each ratio and report %drops.

    Eval/test portions are untouched (their digest is asserted); the drop
    at ratio r is (m_0 - m_r) / m_0 * 100 relative to the clean run, which
    is always included.
    """
    ratios = tuple(sorted(set(ratios) | {0.0}))
    baseline_digest = dataset.split.eval_test_digest()
    report = MetricReport()
    results = {}
    for ratio in ratios:
        noisy = inject_noise(dataset, ratio, seed=cfg.seed + 1)
        if noisy.split.eval_test_digest() != baseline_digest:
            raise ContractError("noise injection altered the eval/test portions")
        _, row = train_and_evaluate(cfg, noisy, label=f"noise_{ratio:g}")
        report.rows.append(row)
        results[ratio] = row
    base = results[0.0]
    for ratio in ratios:
        row = results[ratio]
        report.noise_drops[ratio] = (
            100.0 * (base.auc - row.auc) / base.auc if base.auc else float("nan"),
            100.0 * (base.f1 - row.f1) / base.f1 if base.f1 else float("nan"),
        )
    return report.validate()


# ---------------------------------------------------------------------------
# plot-data emission


def plot_series(report, out_dir, stem):
    """Write x/y CSV series (one file per metric) for external plotting."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.noise_drops:
        path = out / f"{stem}_noise_drop.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("noise_ratio,auc_drop_pct,f1_drop_pct\n")
            for ratio in sorted(report.noise_drops):
                da, df = report.noise_drops[ratio]
                fh.write(f"{ratio!r},{da!r},{df!r}\n")
        written.append(path)
    if report.rows:
        path = out / f"{stem}_metrics.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,auc,f1\n")
            for row in report.rows:
                fh.write(f"{row.label},{row.auc!r},{row.f1!r}\n")
        written.append(path)
    return written
