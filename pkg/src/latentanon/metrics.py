"""Identity/attribute distances, min-max normalization, the IA score and dataset-level reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from latentanon.errors import DataError, ShapeError

ALPHA = 1.0
BETA = 1.25
# identity-distance thresholds at 95% / 99% ArcFace verification accuracy on LFW
GAMMA_95 = 0.9
GAMMA_99 = 1.25
THETA = 0.5


def identity_distance(e1, e2) -> np.ndarray | float:
    """Euclidean distance over the last axis."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape[-1] != e2.shape[-1]:
        raise ShapeError(f"embedding dims differ: {e1.shape[-1]} vs {e2.shape[-1]}")
    d = np.sqrt(np.sum((e1 - e2) ** 2, axis=-1))
    return float(d) if d.ndim == 0 else d


def logit(a, eps: float = 1e-12) -> np.ndarray:
    a = np.clip(np.asarray(a, dtype=np.float64), eps, 1.0 - eps)
    return np.log(a / (1.0 - a))


def attribute_distance(a1, a2, use_logit: bool = False):
    """Euclidean distance between attribute-confidence vectors.

    With ``use_logit`` the confidences go through ``log(x / (1 - x))`` first.
    """
    if use_logit:
        a1, a2 = logit(a1), logit(a2)
    return identity_distance(a1, a2)


@dataclass(frozen=True)
class NormalizationStats:
    x_min: float
    x_max: float
    population: str = ""

    def __post_init__(self):
        if not self.x_min <= self.x_max:
            raise ValueError(f"x_min {self.x_min} > x_max {self.x_max}")

    @classmethod
    def from_values(cls, values, population: str = "") -> "NormalizationStats":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise DataError("cannot normalize over an empty population")
        return cls(float(v.min()), float(v.max()), population)


# spreads below this fraction of the magnitude are floating-point round-off
SPREAD_RTOL = 1e-12


def has_spread(x_min: float, x_max: float) -> bool:
    return (x_max - x_min) > SPREAD_RTOL * max(1.0, abs(x_min), abs(x_max))


def minmax_normalize(x, stats: NormalizationStats):
    """``(x - x_min) / (x_max - x_min)`` clamped to [0, 1].

    Returns 0 when the population has no spread beyond round-off.
    """
    x = np.asarray(x, dtype=np.float64)
    span = stats.x_max - stats.x_min
    if not has_spread(stats.x_min, stats.x_max):
        out = np.zeros_like(x)
    else:
        out = np.clip((x - stats.x_min) / span, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DisentanglementScore:
    delta_id: float
    delta_attr: float
    h_id: float
    h_attr: float
    ia: float
    alpha: float
    beta: float


def ia_values(delta_id, delta_attr, id_stats, attr_stats, alpha=ALPHA, beta=BETA):
    """Vectorized ``alpha * h(delta_id) - beta * h(delta_attr)``."""
    return alpha * minmax_normalize(delta_id, id_stats) - beta * minmax_normalize(delta_attr, attr_stats)


def ia_score(delta_id, delta_attr, alpha, beta, id_stats, attr_stats) -> DisentanglementScore:
    h_id = minmax_normalize(float(delta_id), id_stats)
    h_attr = minmax_normalize(float(delta_attr), attr_stats)
    return DisentanglementScore(
        delta_id=float(delta_id),
        delta_attr=float(delta_attr),
        h_id=h_id,
        h_attr=h_attr,
        ia=alpha * h_id - beta * h_attr,
        alpha=float(alpha),
        beta=float(beta),
    )


# ---------------------------------------------------------------------------
# dataset reports
# ---------------------------------------------------------------------------


def _rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class PrivacyReport:
    I: float
    gamma: float
    p_above: float
    strict: bool
    distances: tuple
    embedder: str = ""
    normalized_embeddings: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        return _rows_to_csv(
            ["pair", "id_distance", "above_gamma"],
            ((i, d, int(d > self.gamma)) for i, d in enumerate(self.distances)),
        )


@dataclass(frozen=True)
class UtilityReport:
    A: float
    distances: tuple
    theta: float
    use_logit: bool
    pass_rates: tuple = ()
    attribute_pass: tuple = ()
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        return _rows_to_csv(["pair", "attr_distance"], enumerate(self.distances))


def _pair_arrays(pairs):
    pairs = list(pairs)
    if not pairs:
        raise DataError("need at least one source/output pair")
    src = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    out = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    return src, out


def privacy_report_from_distances(distances, gamma: float = GAMMA_95, **meta) -> PrivacyReport:
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        raise DataError("need at least one source/output pair")
    above = d > gamma
    p_above = float(np.count_nonzero(above)) / d.size
    return PrivacyReport(
        I=float(np.mean(d)),
        gamma=float(gamma),
        p_above=p_above,
        strict=bool(above.all()),
        distances=tuple(float(v) for v in d),
        **meta,
    )


def privacy_metric(pairs, gamma: float = GAMMA_95, **meta) -> PrivacyReport:
    """Mean identity distance ``I`` over (source, output) embedding pairs, and the share above ``gamma``.

    ``strict`` is set only when every pair clears the threshold.
    """
    src, out = _pair_arrays(pairs)
    return privacy_report_from_distances(identity_distance(src, out), gamma, **meta)


def utility_metric(pairs, theta: float = THETA, use_logit: bool = False) -> UtilityReport:
    """Mean attribute distance ``A`` plus per-attribute decision agreement at ``theta``.

    An attribute passes when its binary decision ``a_j > theta`` is the same
    for source and output in every pair.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    src, out = _pair_arrays(pairs)
    d = np.atleast_1d(attribute_distance(src, out, use_logit=use_logit))
    agree = (src > theta) == (out > theta)
    rates = agree.mean(axis=0)
    return UtilityReport(
        A=float(np.mean(d)),
        distances=tuple(float(v) for v in d),
        theta=float(theta),
        use_logit=use_logit,
        pass_rates=tuple(float(r) for r in rates),
        attribute_pass=tuple(bool(r == 1.0) for r in rates),
        flags={"theta_source": "default" if theta == THETA else "config", "logit": use_logit},
    )
