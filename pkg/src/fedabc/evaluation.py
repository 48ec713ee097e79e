"""Validation classifier, threshold selection, metrics, and the four-way
experiment grid (Global / Raw / OS / ABC) evaluated per site.

The classifier is a standalone regularized logistic regression retrained per
condition; the decision cut-off is always chosen on that condition's training
predictions, never on test data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedTrainingError
from .gmm import fit_gmm_em, sample_gmm
from .rng import RngHandle, as_generator

CONDITIONS = ("global", "raw", "os", "abc")

METRIC_FIELDS = ("accuracy", "sensitivity", "specificity", "precision", "recall", "f1")


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    hyper: dict = field(default_factory=dict)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weights + self.bias
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out


@dataclass(frozen=True)
class ClassifierConfig:
    iters: int = 2000
    lr: float = 0.1
    l2: float = 1e-4


def train_logreg(
    x: np.ndarray,
    y: np.ndarray,
    iters: int = 2000,
    lr: float = 0.1,
    l2: float = 1e-4,
) -> LogisticModel:
    """Full-batch gradient descent on L2-regularized log-loss.

    The step halves whenever a step would increase the loss, so the loss
    trace is non-increasing. Deterministic: zero initialization, no RNG.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    model = LogisticModel(weights=w, bias=b, hyper={"iters": iters, "lr": lr, "l2": l2})

    def loss_of(w_, b_):
        z = x @ w_ + b_
        # log(1 + e^z) - y z, computed stably
        per = np.logaddexp(0.0, z) - y * z
        return per.mean() + 0.5 * l2 * np.dot(w_, w_)

    current = loss_of(w, b)
    for _ in range(iters):
        p = model.predict_proba(x)
        err = p - y
        grad_w = x.T @ err / n + l2 * w
        grad_b = err.mean()
        while lr > 1e-12:
            w_new = w - lr * grad_w
            b_new = b - lr * grad_b
            candidate = loss_of(w_new, b_new)
            if not np.isfinite(candidate):
                raise DivergedTrainingError(0, "logistic regression diverged")
            if candidate <= current:
                break
            lr /= 2.0
        else:
            break
        w, b, current = w_new, b_new, candidate
        model.weights, model.bias = w, b
    return model


def select_cutoff(probs: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Cut-off maximizing F1 of the rule (p >= c) on training predictions.

    Every distinct probability is a candidate; ties break toward the
    smallest cut-off. Returns (cutoff, f1). Raises when no positive labels
    exist (F1 undefined everywhere).
    """
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y, dtype=int)
    if probs.shape != y.shape:
        raise ValueError("probs and labels must align")
    if not np.any(y == 1):
        raise ValueError("cannot select a cut-off without positive labels")
    best_c, best_f1 = None, -1.0
    for c in np.unique(probs):
        pred = probs >= c
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        fn = int(np.sum(~pred & (y == 1)))
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_c, best_f1 = float(c), f1
    return best_c, best_f1


@dataclass
class MetricsRow:
    """One (site, condition) cell of the report."""

    site: int
    condition: str
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    recall: float
    f1: float
    cutoff: float | None = None
    degenerate: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        doc = {
            "site": self.site,
            "condition": self.condition,
            "cutoff": self.cutoff,
            "degenerate": list(self.degenerate),
        }
        for name in METRIC_FIELDS:
            doc[name] = getattr(self, name)
        return doc


def compute_metrics(pred: np.ndarray, y: np.ndarray, site: int = 0, condition: str = "") -> MetricsRow:
    """Confusion-matrix rates; zero denominators yield 0 and are flagged."""
    pred = np.asarray(pred, dtype=int)
    y = np.asarray(y, dtype=int)
    if pred.shape != y.shape:
        raise ValueError("predictions and labels must align")
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    degenerate: list[str] = []

    def rate(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    accuracy = rate(tp + tn, tp + tn + fp + fn, "accuracy")
    sensitivity = rate(tp, tp + fn, "sensitivity")
    specificity = rate(tn, tn + fp, "specificity")
    precision = rate(tp, tp + fp, "precision")
    recall = sensitivity
    f1 = (
        2 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else rate(0, 0, "f1")
    )
    return MetricsRow(
        site=site,
        condition=condition,
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=degenerate,
    )


def oversample_local_gmm(
    minority_rows: np.ndarray,
    n_components: int,
    n_needed: int,
    rng: RngHandle | np.random.Generator,
) -> np.ndarray:
    """Local baseline: fit a mixture to the site's minority rows, sample."""
    gen = as_generator(rng)
    if n_needed == 0:
        return np.empty((0, minority_rows.shape[1]))
    fit = fit_gmm_em(minority_rows, n_components, rng=gen)
    rows, _ = sample_gmm(fit.params, n_needed, gen)
    return rows


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, site: int, condition: str) -> MetricsRow:
        for r in self.rows:
            if r.site == site and r.condition == condition:
                return r
        raise KeyError((site, condition))

    def to_json(self) -> dict:
        return {"meta": dict(self.meta), "rows": [r.to_json() for r in self.rows]}

    def to_text(self) -> str:
        """Aligned table: one column per (site, condition), metric per row."""
        sites = sorted({r.site for r in self.rows})
        columns = []
        for site in sites:
            for condition in CONDITIONS:
                try:
                    columns.append(self.row(site, condition))
                except KeyError:
                    continue

        def title(row):
            if row.condition == "global":
                return f"Global Site {row.site + 1}"
            return f"Site {row.site + 1} {row.condition.upper() if row.condition != 'raw' else 'Raw'}"

        headers = [title(c) for c in columns]
        labels = [
            ("Accuracy", "accuracy"),
            ("Sensitivity", "sensitivity"),
            ("Specificity", "specificity"),
            ("Precision", "precision"),
            ("Recall", "recall"),
            ("F1", "f1"),
        ]
        width = max(14, *(len(h) + 2 for h in headers)) if headers else 14
        name_width = 12
        lines = ["".ljust(name_width) + "".join(h.rjust(width) for h in headers)]
        for label, attr in labels:
            cells = [f"{getattr(c, attr):.4f}" for c in columns]
            lines.append(label.ljust(name_width) + "".join(v.rjust(width) for v in cells))
        cutoffs = [
            f"{c.cutoff:.4f}" if c.cutoff is not None else "-" for c in columns
        ]
        lines.append("Cut-off".ljust(name_width) + "".join(v.rjust(width) for v in cutoffs))
        return "\n".join(lines) + "\n"


@dataclass
class ConditionInputs:
    """Per-site latent-space training and test sets for one condition."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


def evaluate_condition(inputs: ConditionInputs, site: int, condition: str, cfg: ClassifierConfig) -> MetricsRow:
    """Train, pick the cut-off on training predictions, score the test set."""
    model = train_logreg(
        inputs.train_x, inputs.train_y, iters=cfg.iters, lr=cfg.lr, l2=cfg.l2
    )
    cutoff, _ = select_cutoff(model.predict_proba(inputs.train_x), inputs.train_y)
    pred = (model.predict_proba(inputs.test_x) >= cutoff).astype(int)
    row = compute_metrics(pred, inputs.test_y, site=site, condition=condition)
    row.cutoff = cutoff
    return row


def local_mixture_size(n_minority: int) -> int:
    """Per-site analogue of the component-count rule, floored at one."""
    return max(1, int(np.floor(0.9 * n_minority)))


@dataclass
class SiteEvalData:
    """Everything one site contributes to the grid, all in latent space.

    enc_* use the site's own encoder; global_enc_* use the pooled model.
    abc_samples are the minority-class rows the server delivered, or None
    when inference produced no posterior.
    """

    site: int
    enc_train: np.ndarray
    train_y: np.ndarray
    enc_test: np.ndarray
    test_y: np.ndarray
    global_enc_train: np.ndarray
    global_enc_test: np.ndarray
    abc_samples: np.ndarray | None = None

    def oversample_need(self) -> int:
        n_major = int(np.sum(self.train_y == 0))
        n_minor = int(np.sum(self.train_y == 1))
        return max(0, n_major - n_minor)

    def augmented(self, extra_minority: np.ndarray) -> ConditionInputs:
        return ConditionInputs(
            train_x=np.vstack([self.enc_train, extra_minority]),
            train_y=np.concatenate([self.train_y, np.ones(extra_minority.shape[0])]),
            test_x=self.enc_test,
            test_y=self.test_y,
        )


def run_conditions(
    sites: list[SiteEvalData],
    cfg: ClassifierConfig,
    rng: RngHandle,
    conditions: tuple[str, ...] = CONDITIONS,
) -> MetricsReport:
    """Evaluate the requested conditions on every site.

    global: one classifier on the pooled global-model encodings, one shared
    cut-off, scored on each site's test rows. raw: per-site classifier on
    the site's own training encodings. os: raw plus rows sampled from a
    mixture fit to the site's minority encodings. abc: raw plus the
    delivered posterior-predictive rows. Oversampled conditions raise the
    minority count exactly to the majority count.
    """
    report = MetricsReport()
    if "global" in conditions:
        pooled_x = np.vstack([s.global_enc_train for s in sites])
        pooled_y = np.concatenate([s.train_y for s in sites])
        model = train_logreg(pooled_x, pooled_y, iters=cfg.iters, lr=cfg.lr, l2=cfg.l2)
        cutoff, _ = select_cutoff(model.predict_proba(pooled_x), pooled_y)
        for s in sites:
            pred = (model.predict_proba(s.global_enc_test) >= cutoff).astype(int)
            row = compute_metrics(pred, s.test_y, site=s.site, condition="global")
            row.cutoff = cutoff
            report.rows.append(row)
    for s in sites:
        base = ConditionInputs(s.enc_train, s.train_y, s.enc_test, s.test_y)
        if "raw" in conditions:
            report.rows.append(evaluate_condition(base, s.site, "raw", cfg))
        need = s.oversample_need()
        if "os" in conditions:
            minority = s.enc_train[s.train_y == 1]
            extra = oversample_local_gmm(
                minority, local_mixture_size(minority.shape[0]), need, rng.child(s.site)
            )
            report.rows.append(evaluate_condition(s.augmented(extra), s.site, "os", cfg))
        if "abc" in conditions and s.abc_samples is not None:
            if s.abc_samples.shape[0] != need:
                raise ValueError(
                    f"site {s.site} needs {need} delivered rows, got {s.abc_samples.shape[0]}"
                )
            report.rows.append(evaluate_condition(s.augmented(s.abc_samples), s.site, "abc", cfg))
    return report
