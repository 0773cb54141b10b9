"""Classification metrics, k-means and partition agreement scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class MetricInputError(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.int64).ravel()
    b = np.asarray(b, dtype=np.int64).ravel()
    if a.shape != b.shape:
        raise MetricInputError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


@dataclass
class MetricReport:
    macro_f1: float
    weighted_f1: float
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    true, pred = _pair(true, pred)
    if true.size and (min(true.min(), pred.min()) < 0 or max(true.max(), pred.max()) >= n_classes):
        raise MetricInputError(f"labels must lie in [0, {n_classes})")
    return np.bincount(true * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def classification_metrics(true, pred, n_classes: int) -> MetricReport:
    """Accuracy plus per-class, macro and support-weighted F1.

    A class with no true and no predicted members scores F1 = 0 and still
    counts towards the macro average.
    """
    cm = confusion_matrix(true, pred, n_classes)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    total = cm.sum()
    return MetricReport(
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / total) if total else 0.0,
        accuracy=float(tp.sum() / total) if total else 0.0,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.astype(int).tolist(),
    )


def macro_f1(true, pred, n_classes: int) -> float:
    return classification_metrics(true, pred, n_classes).macro_f1


# -- clustering -------------------------------------------------------------


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    wcss: float
    history: list[float]


def _wcss(x, centers, assign) -> float:
    return float(((x - centers[assign]) ** 2).sum())


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        s = d2.sum()
        idx = rng.choice(n, p=d2 / s) if s > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x, centers, max_iter, tol) -> KMeansResult:
    history = []
    for _ in range(max_iter):
        d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d.argmin(axis=1)
        history.append(_wcss(x, centers, assign))
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d.argmin(axis=1)
    wcss = _wcss(x, centers, assign)
    history.append(wcss)
    return KMeansResult(assign, centers, wcss, history)


def kmeans(x, k: int, seed: int | None = None, restarts: int = 10,
           max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding; keeps the restart with the lowest WCSS."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise MetricInputError("kmeans expects a 2-d array")
    if k < 1 or k > x.shape[0]:
        raise MetricInputError(f"k={k} must lie in [1, {x.shape[0]}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        run = _lloyd(x, _plus_plus(x, k, rng), max_iter, tol)
        if best is None or run.wcss < best.wcss:
            best = run
    return best


def _contingency(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1 if ai.size else 0, bi.max() + 1 if bi.size else 0), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(labels, assignments) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    table = _contingency(labels, assignments)
    n = table.sum()
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(labels, assignments) -> float:
    """Mutual information normalised by the arithmetic mean of both entropies (natural log)."""
    table = _contingency(labels, assignments).astype(np.float64)
    n = table.sum()
    if n == 0:
        return 1.0
    hu, hv = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hu == 0.0 and hv == 0.0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / ((hu + hv) / 2.0))))
