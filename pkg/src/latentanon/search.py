"""Locating identity-carrying latent coordinates by swap-and-score experiments.

Every candidate selection (a layer window, a channel block, ...) is applied
to all evaluation pairs: the selected coordinates of the target are swapped
into the source, the result is generated, and identity/attribute distances to
the generated source are recorded. Min-max statistics are taken over the raw
distances of the whole candidate population of one search, so scores are
only comparable within that search.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from latentanon import metrics
from latentanon.errors import DataError, ShapeError
from latentanon.latent import ChannelBlock, selection_coords, window


@dataclass(frozen=True)
class MetricConfig:
    alpha: float = metrics.ALPHA
    beta: float = metrics.BETA
    use_logit: bool = False
    symmetric: bool = True
    chunk: int = 128
    workers: int = 1


def _as_pairs(sources, targets, shape):
    sources = np.asarray(sources, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if sources.ndim == 2:
        sources, targets = sources[None], targets[None]
    if sources.shape != targets.shape:
        raise ShapeError(f"source/target stacks differ: {sources.shape} vs {targets.shape}")
    if sources.shape[0] == 0:
        raise DataError("need at least one source/target pair")
    if sources.shape[1:] != tuple(shape):
        raise ShapeError(f"latents have shape {sources.shape[1:]}, backend expects {tuple(shape)}")
    return sources, targets


class _Evaluator:
    """Scores coordinate selections against a fixed set of (base, donor) latent pairs."""

    def __init__(self, sources, targets, backend, cfg: MetricConfig):
        sources, targets = _as_pairs(sources, targets, backend.shape.latent_shape)
        if cfg.symmetric:
            self.base = np.concatenate([sources, targets])
            self.donor = np.concatenate([targets, sources])
        else:
            self.base, self.donor = sources, targets
        self.backend = backend
        self.cfg = cfg
        self.ref_id, self.ref_attr = self._score(self.base, backend)

    def _score(self, latents, backend):
        ids, attrs = [], []
        for k in range(0, len(latents), self.cfg.chunk):
            e, a = backend.score_latents(latents[k : k + self.cfg.chunk])
            ids.append(e)
            attrs.append(a)
        return np.concatenate(ids), np.concatenate(attrs)

    def distances(self, sel: np.ndarray, backend=None):
        backend = backend or self.backend
        out = np.where(sel, self.donor, self.base)
        e, a = self._score(out, backend)
        d_id = metrics.identity_distance(self.ref_id, e)
        d_attr = metrics.attribute_distance(self.ref_attr, a, use_logit=self.cfg.use_logit)
        return np.atleast_1d(d_id), np.atleast_1d(d_attr)

    def run(self, selections: Sequence[np.ndarray]):
        """Raw per-pair distance matrices of shape ``(n_candidates, n_pairs)``."""
        workers = max(1, int(self.cfg.workers))
        if workers == 1 or len(selections) < 2:
            res = [self.distances(s) for s in selections]
        else:
            pool = [self.backend] + [self.backend.clone() for _ in range(workers - 1)]
            chunks = [list(range(w, len(selections), workers)) for w in range(workers)]

            def job(w):
                return [(i, self.distances(selections[i], pool[w])) for i in chunks[w]]

            with ThreadPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(job, range(workers)))
            res = [None] * len(selections)
            for part in parts:
                for i, r in part:
                    res[i] = r
        d_id = np.stack([r[0] for r in res])
        d_attr = np.stack([r[1] for r in res])
        return d_id, d_attr


def _ia_table(d_id, d_attr, cfg: MetricConfig, population: str):
    id_stats = metrics.NormalizationStats.from_values(d_id, population)
    attr_stats = metrics.NormalizationStats.from_values(d_attr, population)
    ia = metrics.ia_values(d_id, d_attr, id_stats, attr_stats, cfg.alpha, cfg.beta)
    return ia.mean(axis=1), id_stats, attr_stats


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


@dataclass
class LayerSearchResult:
    table: dict  # (i, m) -> mean IA score
    mean_id_distance: dict
    mean_attr_distance: dict
    best_consecutive: tuple
    top_individual: list
    id_stats: metrics.NormalizationStats
    attr_stats: metrics.NormalizationStats

    def to_csv(self) -> str:
        rows = [
            (i, m, self.table[(i, m)], self.mean_id_distance[(i, m)], self.mean_attr_distance[(i, m)])
            for (i, m) in sorted(self.table)
        ]
        return _csv(["i", "m", "score", "id_distance", "attr_distance"], rows)


def layer_window_search(sources, targets, m_values, backend, metric_cfg: MetricConfig | None = None):
    """Score every window of ``m`` consecutive layers for each ``m`` in ``m_values``."""
    cfg = metric_cfg or MetricConfig()
    n_layers = backend.shape.n_layers
    m_values = sorted(set(int(m) for m in m_values))
    if not m_values or m_values[0] < 1 or m_values[-1] > n_layers:
        raise ShapeError(f"window sizes must lie in [1, {n_layers}]: {m_values}")
    ev = _Evaluator(sources, targets, backend, cfg)
    keys = [(i, m) for m in m_values for i in range(n_layers - m + 1)]
    sels = [selection_coords(window(i, m), backend.shape.latent_shape) for i, m in keys]
    d_id, d_attr = ev.run(sels)
    scores, id_stats, attr_stats = _ia_table(d_id, d_attr, cfg, "layer windows")
    table = {k: float(s) for k, s in zip(keys, scores)}
    best = min(table, key=lambda k: (-table[k], k[0], k[1]))
    singles = [i for (i, m) in keys if m == 1]
    top = sorted(singles, key=lambda i: (-table[(i, 1)], i))
    return LayerSearchResult(
        table=table,
        mean_id_distance={k: float(v) for k, v in zip(keys, d_id.mean(axis=1))},
        mean_attr_distance={k: float(v) for k, v in zip(keys, d_attr.mean(axis=1))},
        best_consecutive=best,
        top_individual=top,
        id_stats=id_stats,
        attr_stats=attr_stats,
    )


def greedy_layer_select(result: LayerSearchResult, k: int) -> tuple[int, ...]:
    """The ``k`` layers with the highest single-layer scores, best first."""
    if not 0 <= k <= len(result.top_individual):
        raise ValueError(f"k must lie in [0, {len(result.top_individual)}], got {k}")
    return tuple(result.top_individual[:k])


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

SMOOTH_WINDOW = 16


def layer_blocks(layers, block_size: int, n_channels: int) -> list[ChannelBlock]:
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [
        ChannelBlock(int(l), s, min(block_size, n_channels - s))
        for l in layers
        for s in range(0, n_channels, block_size)
    ]


@dataclass
class ChannelScoreTable:
    layers: tuple
    block_size: int
    blocks: list
    scores: np.ndarray
    mean_id_distance: np.ndarray
    n_channels: int
    smooth_window: int = SMOOTH_WINDOW

    def ranked(self) -> list[int]:
        """Block indices by descending score; ties go to the lowest (layer, channel)."""
        return sorted(
            range(len(self.blocks)),
            key=lambda k: (-self.scores[k], self.blocks[k].layer, self.blocks[k].start),
        )

    def top_blocks(self, k: int) -> list[ChannelBlock]:
        return [self.blocks[i] for i in self.ranked()[:k]]

    def per_channel(self) -> np.ndarray:
        """Scores expanded to ``(len(layers), n_channels)``; each channel carries its block's score."""
        out = np.zeros((len(self.layers), self.n_channels))
        row = {l: r for r, l in enumerate(self.layers)}
        for b, s in zip(self.blocks, self.scores):
            out[row[b.layer], b.start : b.start + b.length] = s
        return out

    def smoothed(self) -> np.ndarray:
        """Means over consecutive windows of ``smooth_window`` channels."""
        pc = self.per_channel()
        w = self.smooth_window
        starts = range(0, self.n_channels, w)
        return np.stack([pc[:, s : s + w].mean(axis=1) for s in starts], axis=1)

    def to_csv(self) -> str:
        rows = [
            (b.layer, b.start, b.length, s, d)
            for b, s, d in zip(self.blocks, self.scores, self.mean_id_distance)
        ]
        return _csv(["layer", "block_start", "block_length", "score", "id_distance"], rows)


def channel_score_scan(sources, targets, layers, block_size, backend, metric_cfg=None) -> ChannelScoreTable:
    """IA score of swapping each channel block of ``layers`` on its own.

    A shorter tail block has its raw distances scaled by
    ``block_size / length`` so it competes on a per-channel footing.
    """
    cfg = metric_cfg or MetricConfig()
    shape = backend.shape.latent_shape
    layers = tuple(int(l) for l in layers)
    if any(not 0 <= l < shape[0] for l in layers) or not layers:
        raise ShapeError(f"scan layers must be a non-empty subset of [0, {shape[0]})")
    blocks = layer_blocks(layers, int(block_size), shape[1])
    ev = _Evaluator(sources, targets, backend, cfg)
    d_id, d_attr = ev.run([selection_coords([b], shape) for b in blocks])
    scale = np.array([block_size / b.length for b in blocks])[:, None]
    d_id, d_attr = d_id * scale, d_attr * scale
    scores, _, _ = _ia_table(d_id, d_attr, cfg, f"channel blocks of {block_size}")
    return ChannelScoreTable(
        layers=layers,
        block_size=int(block_size),
        blocks=blocks,
        scores=scores,
        mean_id_distance=d_id.mean(axis=1),
        n_channels=shape[1],
    )


@dataclass
class BlockSelection:
    picks: list
    cum_channels: list
    id_distance: list
    stop_reason: str
    initial_distance: float = 0.0
    embedder: str = ""

    @property
    def n_channels(self) -> int:
        return self.cum_channels[-1] if self.cum_channels else 0

    @property
    def final_distance(self) -> float:
        return self.id_distance[-1] if self.id_distance else self.initial_distance

    def to_csv(self) -> str:
        rows = [
            (k + 1, b.layer, b.start, b.length, c, d)
            for k, (b, c, d) in enumerate(zip(self.picks, self.cum_channels, self.id_distance))
        ]
        return _csv(["picks", "layer", "block_start", "block_length", "cum_channels", "id_distance"], rows)


def greedy_block_select(table: ChannelScoreTable, backend, sources, targets, budget=None, threshold=None):
    """Swap blocks in descending score order until a channel budget or identity-distance threshold.

    ``sources``/``targets`` may be a single pair or stacks; the curve records
    the mean identity distance (generated source vs generated output) after
    each pick. An unreachable threshold swaps every block and reports
    ``budget`` as the stop reason.
    """
    if (budget is None) == (threshold is None):
        raise ValueError("give exactly one of budget (channels) or threshold (identity distance)")
    if budget is not None and budget < 0:
        raise ValueError("budget must be >= 0")
    shape = backend.shape.latent_shape
    sources, targets = _as_pairs(sources, targets, shape)
    ref = backend.embed_identity(backend.generate(sources))
    sel = np.zeros(shape, dtype=bool)
    picks, cum, curve = [], [], []
    n = 0
    reason = "budget"
    for k in table.ranked():
        b = table.blocks[k]
        if budget is not None and n + b.length > budget:
            break
        sel[b.layer, b.start : b.start + b.length] = True
        n += b.length
        out = np.where(sel, targets, sources)
        d = float(np.mean(np.atleast_1d(metrics.identity_distance(ref, backend.embed_identity(backend.generate(out))))))
        picks.append(b)
        cum.append(n)
        curve.append(d)
        if threshold is not None and d > threshold:
            reason = "threshold"
            break
    return BlockSelection(picks=picks, cum_channels=cum, id_distance=curve, stop_reason=reason,
                          embedder=getattr(backend, "backend_id", ""))


# ---------------------------------------------------------------------------
# manipulation and analysis
# ---------------------------------------------------------------------------


@dataclass
class PushAwayResult:
    latent: np.ndarray
    index: int
    scores: np.ndarray
    id_distances: np.ndarray


def push_away(source, candidates, selection, backend, metric_cfg=None) -> PushAwayResult:
    """Apply ``selection`` from whichever candidate yields the highest IA score against ``source``."""
    cfg = metric_cfg or MetricConfig()
    shape = backend.shape.latent_shape
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim == 2:
        cands = cands[None]
    if len(cands) == 0:
        raise DataError("push_away needs at least one candidate")
    source = np.asarray(source, dtype=np.float64)
    sel = selection_coords(selection, shape)
    outs = np.where(sel, cands, source)
    ref_e, ref_a = backend.score_latents(source)
    e, a = backend.score_latents(outs)
    d_id = np.atleast_1d(metrics.identity_distance(ref_e, e))
    d_attr = np.atleast_1d(metrics.attribute_distance(ref_a, a, use_logit=cfg.use_logit))
    id_stats = metrics.NormalizationStats.from_values(d_id, "push-away candidates")
    attr_stats = metrics.NormalizationStats.from_values(d_attr, "push-away candidates")
    ia = metrics.ia_values(d_id, d_attr, id_stats, attr_stats, cfg.alpha, cfg.beta)
    best = int(min(range(len(ia)), key=lambda k: (-ia[k], k)))
    return PushAwayResult(latent=outs[best], index=best, scores=np.atleast_1d(ia), id_distances=d_id)


@dataclass
class CorrelationReport:
    r: list  # per attribute; None where a series has zero variance
    n_samples: int
    layers: tuple
    id_deltas: np.ndarray = field(repr=False)
    attr_deltas: np.ndarray = field(repr=False)

    def to_csv(self) -> str:
        return _csv(["attribute", "pearson_r"], ((j, "" if r is None else r) for j, r in enumerate(self.r)))


def pearson_or_none(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (metrics.has_spread(x.min(), x.max()) and metrics.has_spread(y.min(), y.max())):
        return None
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.sum(xc * yc) / np.sqrt(np.sum(xc**2) * np.sum(yc**2)))
    return max(-1.0, min(1.0, r))


def attribute_identity_correlation(sources, targets, layers, backend) -> CorrelationReport:
    """Pearson r between identity change (L2) and each attribute's absolute change when swapping ``layers``."""
    shape = backend.shape.latent_shape
    sources, targets = _as_pairs(sources, targets, shape)
    if len(sources) < 3:
        raise DataError("correlation needs at least 3 sample pairs")
    sel = selection_coords(tuple(layers), shape)
    e0, a0 = backend.score_latents(sources)
    e1, a1 = backend.score_latents(np.where(sel, targets, sources))
    d_id = metrics.identity_distance(e0, e1)
    d_attr = np.abs(a0 - a1)
    r = [pearson_or_none(d_id, d_attr[:, j]) for j in range(d_attr.shape[1])]
    return CorrelationReport(r=r, n_samples=len(sources), layers=tuple(layers), id_deltas=d_id, attr_deltas=d_attr)
