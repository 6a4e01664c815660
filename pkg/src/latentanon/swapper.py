"""Learned latent swapper: a small network that predicts a per-coordinate blend mask.

Given a source latent ``L_S`` and a random latent ``L_R`` the network emits
``alpha`` in (0, 1) and the anonymized latent ``alpha * L_S + (1 - alpha) * L_R``.
It is trained against latents of faces produced by the mask pipeline.

Architecture: three sub-modules over latent rows (coarse, identity, fine
layers). Each row sees ``concat(L_S[row], L_R[row])``. Coarse and fine
modules are one fully connected layer each, the identity module is two, so
there are four trainable layers. Weights are shared across the rows of a
module while biases are per row. Rows in the pass-through sets never reach
a module: they get ``alpha = 1`` ("pass") or a fixed ``alpha = 0.9`` ("low").
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from latentanon import masking, metrics
from latentanon.errors import DataError, ShapeError, TrainingDiverged
from latentanon.latent import blend

log = logging.getLogger(__name__)

LOW_WEIGHT_ALPHA = 0.9
MODULES = ("coarse", "identity", "fine")


@dataclass
class TrainingConfig:
    lambda_l2: float = 1.0
    lambda_id: float = 0.1
    learning_rate: float = 0.1
    split: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    identity_sign: str = "push"  # "push": +lambda_id * similarity; "literal": -lambda_id * similarity
    latent_norm: str = "l1"  # or "l2" (squared error)
    seed: int = 0

    def __post_init__(self):
        if self.lambda_l2 < 0 or self.lambda_id < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if self.identity_sign not in ("push", "literal"):
            raise ValueError("identity_sign must be 'push' or 'literal'")
        if self.latent_norm not in ("l1", "l2"):
            raise ValueError("latent_norm must be 'l1' or 'l2'")

    @property
    def id_sign(self) -> float:
        return 1.0 if self.identity_sign == "push" else -1.0


# alpha = EPS + (1 - 2 EPS) * sigmoid keeps alpha strictly inside (0, 1) even when the sigmoid saturates
ALPHA_EPS = 1e-12


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class SwapperNetwork:
    def __init__(self, n_layers: int = 18, n_channels: int = 512, hidden: int | None = None,
                 coarse=range(0, 5), identity=range(5, 12), fine=range(12, 18),
                 pass_mode: str = "pass", seed: int = 0):
        if pass_mode not in ("pass", "low", "learn"):
            raise ValueError("pass_mode must be 'pass', 'low' or 'learn'")
        rows = {"coarse": tuple(coarse), "identity": tuple(identity), "fine": tuple(fine)}
        all_rows = sorted(r for v in rows.values() for r in v)
        if all_rows != list(range(n_layers)):
            raise ValueError("coarse/identity/fine rows must partition the latent layers")
        self.n_layers, self.n_channels = n_layers, n_channels
        self.hidden = hidden or n_channels
        self.rows = rows
        self.pass_mode = pass_mode
        self.seed = seed
        rng = np.random.default_rng(seed)
        c2 = 2 * n_channels
        h = self.hidden
        self.params = {
            "coarse.W": np.zeros((c2, n_channels)),
            "coarse.b": np.zeros((len(rows["coarse"]), n_channels)),
            "identity.W1": rng.standard_normal((c2, h)) * np.sqrt(1.0 / c2),
            "identity.b1": np.zeros((len(rows["identity"]), h)),
            "identity.W2": np.zeros((h, n_channels)),
            "identity.b2": np.zeros((len(rows["identity"]), n_channels)),
            "fine.W": np.zeros((c2, n_channels)),
            "fine.b": np.zeros((len(rows["fine"]), n_channels)),
        }

    @property
    def active_modules(self) -> tuple[str, ...]:
        return MODULES if self.pass_mode == "learn" else ("identity",)

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.n_layers, self.n_channels)

    # -- forward/backward ----------------------------------------------------
    def _forward(self, L_S, L_R):
        B = L_S.shape[0]
        alpha = np.ones((B, self.n_layers, self.n_channels))
        if self.pass_mode == "low":
            alpha[:] = LOW_WEIGHT_ALPHA
        cache = {}
        p = self.params
        for name in self.active_modules:
            rows = list(self.rows[name])
            x = np.concatenate([L_S[:, rows], L_R[:, rows]], axis=-1)  # (B, r, 2C)
            if name == "identity":
                z1 = x @ p["identity.W1"] + p["identity.b1"]
                h1 = np.tanh(z1)
                pre = h1 @ p["identity.W2"] + p["identity.b2"]
            else:
                pre = x @ p[f"{name}.W"] + p[f"{name}.b"]
                h1 = None
            sig = _sigmoid(pre)
            cache[name] = (rows, x, h1, sig)
            alpha[:, rows] = ALPHA_EPS + (1.0 - 2.0 * ALPHA_EPS) * sig
        return alpha, cache

    def forward(self, L_S, L_R):
        """Return ``(alpha, L_hat)`` for single latents or stacks."""
        L_S = np.asarray(L_S, dtype=np.float64)
        L_R = np.asarray(L_R, dtype=np.float64)
        if L_S.shape != L_R.shape or L_S.shape[-2:] != self.latent_shape:
            raise ShapeError(f"swapper expects latents of shape {self.latent_shape}")
        single = L_S.ndim == 2
        S = L_S[None] if single else L_S
        R = L_R[None] if single else L_R
        alpha, _ = self._forward(S, R)
        L_hat = blend(S, R, alpha)
        return (alpha[0], L_hat[0]) if single else (alpha, L_hat)

    def _backward(self, d_alpha, cache):
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        for name, (rows, x, h1, sig) in cache.items():
            d_pre = d_alpha[:, rows] * (1.0 - 2.0 * ALPHA_EPS) * sig * (1.0 - sig)
            xf = x.reshape(-1, x.shape[-1])
            if name == "identity":
                hf = h1.reshape(-1, h1.shape[-1])
                grads["identity.W2"] = hf.T @ d_pre.reshape(-1, d_pre.shape[-1])
                grads["identity.b2"] = d_pre.sum(axis=0)
                d_h = d_pre @ p["identity.W2"].T
                d_z1 = d_h * (1.0 - h1**2)
                grads["identity.W1"] = xf.T @ d_z1.reshape(-1, d_z1.shape[-1])
                grads["identity.b1"] = d_z1.sum(axis=0)
            else:
                grads[f"{name}.W"] = xf.T @ d_pre.reshape(-1, d_pre.shape[-1])
                grads[f"{name}.b"] = d_pre.sum(axis=0)
        return grads

    def loss_and_grad(self, L_S, L_R, t_truth, S_emb, backend, cfg: TrainingConfig, need_grad=True):
        """Batch-mean loss and its gradient with respect to every parameter."""
        alpha, cache = self._forward(L_S, L_R)
        L_hat = blend(L_S, L_R, alpha)
        B = L_S.shape[0]
        loss_each, d_hat = _latent_term(L_hat, t_truth, cfg)
        if cfg.lambda_id > 0:
            sim, g_sim = backend.identity_similarity_grad(L_hat, S_emb)
            loss_each = loss_each + cfg.id_sign * cfg.lambda_id * sim
            d_hat = d_hat + cfg.id_sign * cfg.lambda_id * g_sim
        loss = float(np.mean(loss_each))
        if not need_grad:
            return loss, None
        d_alpha = d_hat * (L_S - L_R) / B
        return loss, self._backward(d_alpha, cache)

    # -- persistence ---------------------------------------------------------
    def meta(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_channels": self.n_channels,
            "hidden": self.hidden,
            "rows": {k: list(v) for k, v in self.rows.items()},
            "pass_mode": self.pass_mode,
            "seed": self.seed,
        }

    def save(self, path, extra: dict | None = None) -> Path:
        """``.npz`` checkpoint: one array per parameter plus a ``meta`` JSON string."""
        path = Path(path)
        meta = {"format": "latentanon-swapper/1", "network": self.meta(), **(extra or {})}
        np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **self.params)
        return path

    @classmethod
    def load(cls, path) -> "SwapperNetwork":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            net_meta = meta["network"]
            net = cls(
                n_layers=net_meta["n_layers"],
                n_channels=net_meta["n_channels"],
                hidden=net_meta["hidden"],
                coarse=net_meta["rows"]["coarse"],
                identity=net_meta["rows"]["identity"],
                fine=net_meta["rows"]["fine"],
                pass_mode=net_meta["pass_mode"],
                seed=net_meta["seed"],
            )
            for k in net.params:
                net.params[k] = np.array(data[k])
        return net


def _latent_term(L_hat, t_truth, cfg):
    diff = L_hat - t_truth
    axes = tuple(range(1, diff.ndim))
    if cfg.latent_norm == "l1":
        return cfg.lambda_l2 * np.sum(np.abs(diff), axis=axes), cfg.lambda_l2 * np.sign(diff)
    return cfg.lambda_l2 * np.sum(diff**2, axis=axes), 2.0 * cfg.lambda_l2 * diff


def swapper_forward(net: SwapperNetwork, L_S, L_R):
    return net.forward(L_S, L_R)


def swapper_loss(L_hat, t_truth, S_img, backend, cfg: TrainingConfig | None = None) -> float:
    """``lambda_l2 * |L_hat - t_truth|_1 +/- lambda_id * cos(embed(G(L_hat)), embed(S))``."""
    cfg = cfg or TrainingConfig()
    L_hat = np.asarray(L_hat, dtype=np.float64)
    t_truth = np.asarray(t_truth, dtype=np.float64)
    if L_hat.shape != t_truth.shape:
        raise ShapeError("L_hat and t_truth differ in shape")
    single = L_hat.ndim == 2
    lh = L_hat[None] if single else L_hat
    tt = t_truth[None] if single else t_truth
    loss, _ = _latent_term(lh, tt, cfg)
    if cfg.lambda_id > 0:
        e_out = backend.embed_identity(backend.generate(lh))
        e_src = np.atleast_2d(backend.embed_identity(S_img))
        sim = np.sum(e_out * e_src, axis=-1) / (
            np.linalg.norm(e_out, axis=-1) * np.linalg.norm(e_src, axis=-1)
        )
        loss = loss + cfg.id_sign * cfg.lambda_id * np.nan_to_num(sim)
    return float(loss[0]) if single else float(np.mean(loss))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class GroundTruthPair:
    L_S: np.ndarray
    L_R: np.ndarray
    t_truth: np.ndarray
    source_id: str
    seed: int


def build_ground_truth(dataset, identity_mask, seeds, backend, swap_regions=("face",),
                       operands="source-random", color=False) -> list[GroundTruthPair]:
    """One training pair per (image, seed) from the mask pipeline.

    ``dataset`` is a sequence of ``(image_id, image)``; ``seeds`` gives one
    seed per image, or an iterable of seeds per image. Images that fail to
    parse are skipped with a warning.
    """
    dataset = list(dataset)
    if not dataset:
        raise DataError("ground truth needs at least one image")
    seeds = list(seeds)
    if len(seeds) != len(dataset):
        raise DataError("need one seed entry per image")
    pairs = []
    for (img_id, img), s in zip(dataset, seeds):
        for seed in np.atleast_1d(s):
            try:
                out = masking.anonymize_masked(img, swap_regions, int(seed), identity_mask, backend,
                                               color=color, operands=operands)
            except (DataError, ValueError) as exc:
                log.warning("skipping %s: %s", img_id, exc)
                continue
            pairs.append(
                GroundTruthPair(
                    L_S=backend.encode(img),
                    L_R=backend.sample_random_latent(int(seed)),
                    t_truth=backend.encode(out),
                    source_id=str(img_id),
                    seed=int(seed),
                )
            )
    return pairs


def split_pairs(pairs, split: float = 0.9, seed: int = 0):
    """Deterministic shuffled train/test split."""
    idx = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(split * len(pairs)))
    return [pairs[i] for i in idx[:n_train]], [pairs[i] for i in idx[n_train:]]


def _stack(pairs, backend):
    L_S = np.stack([p.L_S for p in pairs])
    L_R = np.stack([p.L_R for p in pairs])
    T = np.stack([p.t_truth for p in pairs])
    E = backend.embed_identity(backend.generate(L_S))
    return L_S, L_R, T, E


@dataclass
class TrainingResult:
    network: SwapperNetwork
    train_loss: list
    test_loss: list
    config: TrainingConfig
    n_train: int
    n_test: int
    notes: dict = field(default_factory=dict)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_loss"])
        for k, tr in enumerate(self.train_loss):
            te = self.test_loss[k] if k < len(self.test_loss) else ""
            w.writerow([k + 1, repr(float(tr)), "" if te == "" else repr(float(te))])
        return buf.getvalue()


def train_swapper(cfg: TrainingConfig, pairs, backend, network: SwapperNetwork | None = None,
                  **net_kwargs) -> TrainingResult:
    """Plain minibatch SGD on the swapper loss.

    The per-epoch history holds the mean training-batch loss of the epoch and
    the held-out loss after it. A non-finite loss aborts with
    :class:`TrainingDiverged`.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("training needs at least one pair")
    train, test = split_pairs(pairs, cfg.split, cfg.seed) if len(pairs) > 1 else (pairs, [])
    net = network or SwapperNetwork(*backend.shape.latent_shape, seed=cfg.seed, **net_kwargs)
    L_S, L_R, T, E = _stack(train, backend)
    test_arrays = _stack(test, backend) if test else None
    rng = np.random.default_rng(cfg.seed + 1)
    train_hist, test_hist = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for k in range(0, len(order), cfg.batch_size):
            b = order[k : k + cfg.batch_size]
            loss, grads = net.loss_and_grad(L_S[b], L_R[b], T[b], E[b], backend, cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch + 1}; lower the learning rate")
            for name, g in grads.items():
                net.params[name] -= cfg.learning_rate * g
            losses.append(loss)
        train_hist.append(float(np.mean(losses)))
        if test_arrays is not None:
            tl, _ = net.loss_and_grad(*test_arrays, backend, cfg, need_grad=False)
            test_hist.append(tl)
        log.info("epoch %d train %.4f test %s", epoch + 1, train_hist[-1], test_hist[-1] if test_hist else "-")
    return TrainingResult(net, train_hist, test_hist, cfg, len(train), len(test),
                          notes={"optimizer": "sgd", "identity_sign": cfg.identity_sign,
                                 "latent_norm": cfg.latent_norm})


def anonymize_with_swapper(net: SwapperNetwork, S, seed: int, backend) -> np.ndarray:
    """``generate(blend(encode(S), sample_random_latent(seed), alpha))``."""
    L_S = backend.encode(S)
    L_R = backend.sample_random_latent(seed)
    _, L_hat = net.forward(L_S, L_R)
    return backend.generate(L_hat)
