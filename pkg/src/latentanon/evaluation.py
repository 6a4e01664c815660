"""Privacy and utility evaluation: verification ROC, identification rank,
attribute positive rates and identity diversity."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from latentanon import kernels
from latentanon.errors import DataError
from latentanon.metrics import THETA, identity_distance

GALLERY_FRACTION = 0.9
DEFAULT_K_GRID = tuple(range(2, 21))


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ROCCurve:
    thresholds: tuple
    tpr: tuple
    fpr: tuple
    auc: float
    accuracy: float
    best_threshold: float
    n_genuine: int
    n_impostor: int

    def to_csv(self) -> str:
        return _csv(["threshold", "tpr", "fpr"], zip(self.thresholds, self.tpr, self.fpr))

    def to_json(self) -> str:
        d = asdict(self)
        d["thresholds"] = [_finite_or_none(t) for t in self.thresholds]
        d["best_threshold"] = _finite_or_none(self.best_threshold)
        return json.dumps(d, indent=2, sort_keys=True)


def roc_from_distances(genuine, impostor) -> ROCCurve:
    """Sweep a distance threshold ``t``; a pair is accepted as the same person when ``d <= t``.

    The sweep starts below every distance at (0, 0) and visits each distinct
    pooled distance once, so the trapezoid area counts ties as one half.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    i = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if g.size == 0 or i.size == 0:
        raise DataError("verification needs non-empty genuine and impostor sets")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
        raise DataError("distances must be finite")
    thr = np.unique(np.concatenate([g, i]))
    tp = np.searchsorted(g, thr, side="right")
    fp = np.searchsorted(i, thr, side="right")
    thr = np.concatenate([[-np.inf], thr])
    tp = np.concatenate([[0], tp])
    fp = np.concatenate([[0], fp])
    tpr = tp / g.size
    fpr = fp / i.size
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    correct = tp + (i.size - fp)
    best = int(np.argmax(correct))
    return ROCCurve(
        thresholds=tuple(float(t) for t in thr),
        tpr=tuple(float(v) for v in tpr),
        fpr=tuple(float(v) for v in fpr),
        auc=auc,
        accuracy=float(correct[best]) / (g.size + i.size),
        best_threshold=float(thr[best]),
        n_genuine=int(g.size),
        n_impostor=int(i.size),
    )


def _pair_distances(pairs, embedder):
    pairs = list(pairs)
    if not pairs:
        raise DataError("verification needs non-empty genuine and impostor sets")
    a = embedder(np.stack([np.asarray(p[0]) for p in pairs]))
    b = embedder(np.stack([np.asarray(p[1]) for p in pairs]))
    return identity_distance(a, b)


def verification_roc(genuine_pairs, impostor_pairs, embedder: Callable) -> ROCCurve:
    """ROC over image pairs; ``embedder`` maps an image stack to an embedding stack."""
    return roc_from_distances(
        np.atleast_1d(_pair_distances(genuine_pairs, embedder)),
        np.atleast_1d(_pair_distances(impostor_pairs, embedder)),
    )


def pair_count_auc(genuine, impostor) -> float:
    """P(genuine < impostor) + 0.5 * P(tie) by pair counting."""
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size == 0 or i.size == 0:
        raise DataError("verification needs non-empty genuine and impostor sets")
    less, ties = kernels.pair_counts(g, i)
    return (less + 0.5 * ties) / (g.size * i.size)


def verification_pairs(labels, n_genuine: int, n_impostor: int, seed: int = 0):
    """Sample index pairs: genuine share a label, impostor do not."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_label = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(idx)
    multi = [v for v in by_label.values() if len(v) >= 2]
    if n_genuine and not multi:
        raise DataError("no identity has two images; cannot form genuine pairs")
    if n_impostor and len(by_label) < 2:
        raise DataError("need at least two identities for impostor pairs")
    genuine = []
    for _ in range(n_genuine):
        grp = multi[rng.integers(len(multi))]
        a, b = rng.choice(len(grp), size=2, replace=False)
        genuine.append((grp[a], grp[b]))
    impostor = []
    while len(impostor) < n_impostor:
        a, b = rng.integers(len(labels), size=2)
        if labels[a] != labels[b]:
            impostor.append((int(a), int(b)))
    return genuine, impostor


# ---------------------------------------------------------------------------
# identification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankReport:
    ranks: tuple
    mean: float
    std: float
    n_identities: int

    def to_csv(self) -> str:
        return _csv(["probe", "rank"], enumerate(self.ranks))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def split_gallery_probe(labels, gallery_fraction: float = GALLERY_FRACTION, seed: int = 0):
    """Per-identity split into gallery and probe indices.

    Each identity with ``n >= 2`` images sends ``max(1, round((1 - f) * n))``
    images to the probe set and keeps at least one in the gallery.
    Single-image identities stay in the gallery as distractors.
    """
    if not 0.0 < gallery_fraction < 1.0:
        raise ValueError("gallery_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    gallery, probe = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(idx.size)]
        if idx.size < 2:
            gallery.extend(idx.tolist())
            continue
        n_probe = min(idx.size - 1, max(1, int(round((1.0 - gallery_fraction) * idx.size))))
        probe.extend(idx[:n_probe].tolist())
        gallery.extend(idx[n_probe:].tolist())
    return np.sort(np.array(gallery, dtype=np.int64)), np.sort(np.array(probe, dtype=np.int64))


def rank_from_distances(dist, true_idx) -> RankReport:
    """Ranks from a (probe, identity) distance matrix; ties share the average rank."""
    dist = np.asarray(dist, dtype=np.float64)
    true_idx = np.asarray(true_idx, dtype=np.int64)
    if dist.ndim != 2 or true_idx.shape != (dist.shape[0],):
        raise DataError("need a (probes, identities) matrix and one true index per probe")
    if dist.shape[0] == 0:
        raise DataError("no probes")
    if np.any(true_idx < 0) or np.any(true_idx >= dist.shape[1]):
        raise DataError("true identity index out of range")
    ranks = kernels.tie_ranks(dist, true_idx)
    return RankReport(
        ranks=tuple(float(r) for r in ranks),
        mean=float(np.mean(ranks)),
        std=float(np.std(ranks)),
        n_identities=int(dist.shape[1]),
    )


def identification_rank(gallery_emb, gallery_labels, probe_emb, probe_labels) -> RankReport:
    """Rank of each probe's true identity among gallery identities.

    Per-identity distance is the minimum Euclidean distance over that
    identity's gallery images.
    """
    G = np.atleast_2d(np.asarray(gallery_emb, dtype=np.float64))
    P = np.atleast_2d(np.asarray(probe_emb, dtype=np.float64))
    g_lab = np.asarray(gallery_labels)
    p_lab = np.asarray(probe_labels)
    if G.shape[0] != g_lab.shape[0] or P.shape[0] != p_lab.shape[0]:
        raise DataError("embedding and label counts differ")
    ids, g_idx = np.unique(g_lab, return_inverse=True)
    pos = np.searchsorted(ids, p_lab)
    pos_c = np.clip(pos, 0, ids.size - 1)
    missing = ids[pos_c] != p_lab
    if np.any(missing):
        raise DataError(f"probe identity not in gallery: {p_lab[missing][0]!r}")
    dist = kernels.min_distance_per_identity(P, G, g_idx.astype(np.int64), ids.size)
    return rank_from_distances(dist, pos_c)


# ---------------------------------------------------------------------------
# attributes and diversity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeDistributionReport:
    attrs: tuple
    before: tuple
    after: tuple
    drift: tuple
    theta: float

    def to_csv(self) -> str:
        return _csv(["attribute", "rate_before", "rate_after", "drift"],
                    zip(self.attrs, self.before, self.after, self.drift))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def attribute_distribution(before, after, attrs: Sequence[int] | None = None, theta: float = THETA):
    """Positive rate ``mean(a_j > theta)`` per attribute before and after, and the absolute drift."""
    b = np.atleast_2d(np.asarray(before, dtype=np.float64))
    a = np.atleast_2d(np.asarray(after, dtype=np.float64))
    if b.shape != a.shape:
        raise DataError(f"before/after shapes differ: {b.shape} vs {a.shape}")
    attrs = tuple(range(b.shape[1])) if attrs is None else tuple(int(j) for j in attrs)
    for j in attrs:
        if not 0 <= j < b.shape[1]:
            raise DataError(f"attribute index {j} out of range")
    rb = (b[:, attrs] > theta).mean(axis=0)
    ra = (a[:, attrs] > theta).mean(axis=0)
    return AttributeDistributionReport(
        attrs=attrs,
        before=tuple(float(v) for v in rb),
        after=tuple(float(v) for v in ra),
        drift=tuple(float(v) for v in np.abs(rb - ra)),
        theta=float(theta),
    )


@dataclass(frozen=True)
class DiversityReport:
    count: int
    original_count: int | None
    ratio: float | None
    ratio_capped: float | None
    silhouettes: dict

    def to_json(self) -> str:
        d = asdict(self)
        d["silhouettes"] = {str(k): v for k, v in self.silhouettes.items()}
        return json.dumps(d, indent=2, sort_keys=True)


def identity_diversity(embeddings, k_grid: Sequence[int] = DEFAULT_K_GRID, original_count: int | None = None,
                       seed: int = 0, n_init: int = 10) -> DiversityReport:
    """Estimated identity count: the k-means ``k`` with the highest silhouette.

    Rows are sorted lexicographically before clustering so the result does
    not depend on input order. Identical inputs give a count of 1.
    """
    from sklearn.cluster import KMeans
    from sklearn.metrics import silhouette_score

    X = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if X.shape[0] < 2:
        raise DataError("diversity needs at least two embeddings")
    X = X[np.lexsort(X.T[::-1])]
    n_unique = np.unique(X, axis=0).shape[0]
    scores = {}
    for k in sorted(set(int(k) for k in k_grid)):
        if k < 2 or k > n_unique - 1:
            continue
        km = KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit(X)
        if np.unique(km.labels_).size < 2:
            continue
        scores[k] = float(silhouette_score(X, km.labels_))
    count = max(scores, key=lambda k: (scores[k], -k)) if scores else 1
    ratio = None if not original_count else count / original_count
    return DiversityReport(
        count=int(count),
        original_count=original_count,
        ratio=ratio,
        ratio_capped=None if ratio is None else min(ratio, 1.0),
        silhouettes=scores,
    )


# ---------------------------------------------------------------------------
# comparison tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonTable:
    metrics: tuple
    rows: dict  # method -> {metric: (mean, std) or value}

    def _cell(self, v):
        if isinstance(v, (tuple, list)):
            return f"{float(v[0]):.4f} ± {float(v[1]):.4f}"
        return f"{float(v):.4f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", *self.metrics])
        for method, vals in self.rows.items():
            w.writerow([method, *(self._cell(vals[m]) for m in self.metrics)])
        return buf.getvalue()

    def to_json(self) -> str:
        out = {}
        for method, vals in self.rows.items():
            out[method] = {
                m: ({"mean": float(v[0]), "std": float(v[1])} if isinstance(v, (tuple, list)) else float(v))
                for m, v in vals.items()
            }
        return json.dumps({"metrics": list(self.metrics), "rows": out}, indent=2, sort_keys=True)


def compare_methods(reports: Mapping[str, Mapping[str, object]]) -> ComparisonTable:
    """One row per method; every method must report the same metric names."""
    if not reports:
        raise DataError("need at least one method report")
    items = list(reports.items())
    metric_names = tuple(items[0][1].keys())
    for method, vals in items:
        if set(vals.keys()) != set(metric_names):
            raise DataError(f"method {method!r} reports {sorted(vals)}; expected {sorted(metric_names)}")
    return ComparisonTable(metrics=metric_names, rows={m: dict(v) for m, v in items})
