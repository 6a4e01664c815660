"""Command-line entry point: ``latentanon <command> [flags]``.

Commands: ``search-layers``, ``search-channels``, ``anonymize``,
``train-swapper``, ``evaluate``, plus ``ingest``, ``cache`` and
``make-synthetic`` for data plumbing. Exit status is 0 on success, otherwise
the category code of :mod:`latentanon.errors` (2 config, 3 data, 4 backend,
5 diverged training, 1 other).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import latentanon
from latentanon import _accel, evaluation, masking, metrics, plots, search, storage, swapper
from latentanon.backends import SyntheticWorld, load_backend
from latentanon.config import RunConfig
from latentanon.errors import ConfigError, DataError, LatentAnonError
from latentanon.latent import mask_from_selection, swap_channels, swap_layers

log = logging.getLogger("latentanon")


def derive_seed(seed: int, *parts) -> int:
    """Per-item seed from the run seed and stable item keys."""
    keys = [zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# run plumbing
# ---------------------------------------------------------------------------


class Run:
    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.errors: dict = {}
        self.backend = None

    def start(self):
        self.backend = load_backend(self.cfg.backend)
        self.out.mkdir(parents=True, exist_ok=True)
        return self

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def finish(self, extra: dict | None = None):
        meta = {
            "command": self.command,
            "config": self.cfg.as_dict(),
            "seed": self.cfg.seed,
            "version": latentanon.__version__,
            "backend_id": getattr(self.backend, "backend_id", None),
            "numba": _accel.USE_NUMBA,
            **(extra or {}),
        }
        self.write_json("run.json", meta)
        err_path = self.out / "errors.json"
        if self.errors:
            self.write_json("errors.json", self.errors)
        elif err_path.exists():
            err_path.unlink()

    def fail(self, exc: Exception):
        self.errors["fatal"] = f"{type(exc).__name__}: {exc}"
        if self.out.is_dir():
            self.write_json("errors.json", self.errors)


def _manifest(cfg: RunConfig):
    return storage.ingest(cfg.data, cfg.labels or None)


def _image_latents(cfg, backend, manifest):
    """Encode (or read cached latents for) every manifest image, in manifest order."""
    if cfg.cache:
        rep = storage.cache_latents(manifest, backend, cfg.cache)
        if rep.failed:
            raise DataError(f"encode failed for {sorted(rep.failed)}")
        return np.stack([storage.cached_latent(cfg.cache, i) for i in manifest.ids])
    return np.stack([backend.encode(img) for _, img in manifest.load_images()])


def _latent_pairs(cfg, backend):
    """Source/target latent stacks: halves of the data set, or sampled pairs."""
    if cfg.data:
        lat = _image_latents(cfg, backend, _manifest(cfg))
        half = len(lat) // 2
        if half < 1:
            raise DataError("need at least two images to form source/target pairs")
        return lat[:half], lat[half : 2 * half]
    src = np.stack([backend.sample_random_latent(derive_seed(cfg.seed, "source", i)) for i in range(cfg.n_pairs)])
    tgt = np.stack([backend.sample_random_latent(derive_seed(cfg.seed, "target", i)) for i in range(cfg.n_pairs)])
    return src, tgt


def _metric_cfg(cfg: RunConfig) -> search.MetricConfig:
    return search.MetricConfig(alpha=cfg.alpha, beta=cfg.beta, use_logit=cfg.use_logit, workers=cfg.workers)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_search_layers(run: Run):
    cfg, be = run.cfg, run.backend
    src, tgt = _latent_pairs(cfg, be)
    res = search.layer_window_search(src, tgt, cfg.m_tuple, be, _metric_cfg(cfg))
    k = len(cfg.layer_tuple)
    run.write("layer_scores.csv", res.to_csv())
    summary = {
        "best_consecutive": list(res.best_consecutive),
        "top_individual": res.top_individual,
        "greedy_k": k,
        "greedy_layers": list(search.greedy_layer_select(res, k)),
        "n_pairs": int(len(src)),
        "id_stats": [res.id_stats.x_min, res.id_stats.x_max],
        "attr_stats": [res.attr_stats.x_min, res.attr_stats.x_max],
    }
    run.write_json("layer_summary.json", summary)
    plots.layer_heatmap(res, be.shape.n_layers, run.out / "layer_scores.png")
    return summary


def cmd_search_channels(run: Run):
    cfg, be = run.cfg, run.backend
    src, tgt = _latent_pairs(cfg, be)
    table = search.channel_score_scan(src, tgt, cfg.scan_layer_tuple, cfg.block_size, be, _metric_cfg(cfg))
    sel = search.greedy_block_select(table, be, src, tgt, budget=cfg.budget_value, threshold=cfg.threshold_value)
    run.write("channel_scores.csv", table.to_csv())
    run.write("block_selection.csv", sel.to_csv())
    summary = {
        "block_size": cfg.block_size,
        "n_channels": sel.n_channels,
        "final_distance": sel.final_distance,
        "stop_reason": sel.stop_reason,
        "embedder": sel.embedder,
        "blocks": [list(b) for b in sel.picks],
    }
    run.write_json("channel_summary.json", summary)
    if sel.cum_channels:
        plots.line(sel.cum_channels, sel.id_distance, "swapped channels", "identity distance",
                   run.out / "block_selection.png", hline=cfg.threshold_value)
    return summary


def _anonymizer(cfg: RunConfig, backend):
    mode = cfg.mode
    if mode == "swapper":
        net = swapper.SwapperNetwork.load(cfg.checkpoint)
        if net.latent_shape != backend.shape.latent_shape:
            raise ConfigError("checkpoint latent shape does not match the backend")
    id_mask = mask_from_selection(cfg.layer_tuple, backend.shape.latent_shape)

    def apply(be, img, seed, seg):
        if mode == "layers":
            return be.generate(swap_layers(be.encode(img), be.sample_random_latent(seed), cfg.layer_tuple))
        if mode == "channels":
            return be.generate(swap_channels(be.encode(img), be.sample_random_latent(seed), cfg.block_tuple))
        if mode == "mask":
            return masking.anonymize_masked(img, cfg.region_tuple, seed, id_mask, be, color=cfg.color,
                                            operands=cfg.operands, seg=seg)
        return swapper.anonymize_with_swapper(net, img, seed, be)

    return apply


def cmd_anonymize(run: Run):
    cfg, be = run.cfg, run.backend
    manifest = _manifest(cfg)
    apply = _anonymizer(cfg, be)
    entries = manifest.entries
    pool = [be] + [be.clone() for _ in range(min(cfg.workers, max(len(entries), 1)) - 1)]

    def task(k):
        e = entries[k]
        worker = pool[k % len(pool)]
        img, info = storage.read_image(e.path)
        seg = storage.read_segmentation(e.segmentation) if e.segmentation else None
        out = apply(worker, img, derive_seed(cfg.seed, e.image_id), seg)
        dest = run.out / "images" / Path(e.path).name
        storage.write_image(dest, out, info["bit_depth"])
        e_src, a_src = worker.score_images(img)
        e_out, a_out = worker.score_images(out)
        return e.image_id, (e_src, e_out), (a_src, a_out)

    def safe(k):
        try:
            return task(k)
        except LatentAnonError as exc:
            return entries[k].image_id, exc, None

    # one in-flight call per backend instance: worker w handles indices k with k % n == w
    def lane(w):
        return [safe(k) for k in range(w, len(entries), len(pool))]

    with ThreadPoolExecutor(max_workers=len(pool)) as ex:
        lanes = list(ex.map(lane, range(len(pool))))
    results = sorted((r for ln in lanes for r in ln), key=lambda r: r[0])
    id_pairs, attr_pairs, done = [], [], []
    for image_id, ids, attrs in results:
        if isinstance(ids, Exception):
            run.errors[image_id] = f"{type(ids).__name__}: {ids}"
            continue
        done.append(image_id)
        id_pairs.append(ids)
        attr_pairs.append(attrs)
    summary = {"n_images": len(entries), "n_done": len(done), "n_failed": len(run.errors), "mode": cfg.mode}
    if done:
        priv = metrics.privacy_metric(id_pairs, cfg.gamma, normalized_embeddings=be.embedding_normalized)
        util = metrics.utility_metric(attr_pairs, cfg.theta, cfg.use_logit)
        run.write("privacy.csv", _with_ids(priv.to_csv(), done))
        run.write("privacy.json", priv.to_json() + "\n")
        run.write("utility.csv", _with_ids(util.to_csv(), done))
        run.write("utility.json", util.to_json() + "\n")
        summary.update(I=priv.I, p_above=priv.p_above, A=util.A)
    run.write_json("anonymize_summary.json", summary)
    return summary


def _with_ids(csv_text: str, ids) -> str:
    """Replace the leading pair-index column with image ids."""
    lines = csv_text.splitlines()
    out = ["image_id," + lines[0].split(",", 1)[1]]
    out += [f"{iid},{ln.split(',', 1)[1]}" for iid, ln in zip(ids, lines[1:])]
    return "\n".join(out) + "\n"


def _training_images(cfg, be):
    if cfg.data:
        m = _manifest(cfg)
        return m.load_images()
    return [(f"sample_{i:05d}", be.generate(be.sample_random_latent(derive_seed(cfg.seed, "image", i))))
            for i in range(cfg.n_pairs)]


def cmd_train_swapper(run: Run):
    cfg, be = run.cfg, run.backend
    images = _training_images(cfg, be)
    id_mask = mask_from_selection(cfg.layer_tuple, be.shape.latent_shape)
    seeds = [derive_seed(cfg.seed, iid) for iid, _ in images]
    pairs = swapper.build_ground_truth(images, id_mask, seeds, be, swap_regions=cfg.region_tuple,
                                       operands=cfg.operands, color=cfg.color)
    run.errors.update({iid: "skipped: parse failure" for iid, _ in images
                       if iid not in {p.source_id for p in pairs}})
    tcfg = swapper.TrainingConfig(lambda_l2=cfg.lambda_l2, lambda_id=cfg.lambda_id, learning_rate=cfg.learning_rate,
                                  split=cfg.split, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                  identity_sign=cfg.identity_sign, seed=cfg.seed)
    log.info("training with learning rate %g", tcfg.learning_rate)
    res = swapper.train_swapper(tcfg, pairs, be, pass_mode=cfg.pass_mode)
    res.network.save(run.out / "swapper.npz", extra={"backend_id": be.backend_id, "training": vars(tcfg)})
    run.write("loss_history.csv", res.history_csv())
    epochs = list(range(1, len(res.train_loss) + 1))
    if res.test_loss:
        plots.line([epochs, epochs], [res.train_loss, res.test_loss], "epoch", "loss",
                   run.out / "loss_history.png", labels=["train", "test"])
    else:
        plots.line(epochs, res.train_loss, "epoch", "loss", run.out / "loss_history.png")
    summary = {"n_pairs": len(pairs), "n_train": res.n_train, "n_test": res.n_test,
               "final_train_loss": res.train_loss[-1],
               "final_test_loss": res.test_loss[-1] if res.test_loss else None,
               "learning_rate": tcfg.learning_rate, "lambda_l2": tcfg.lambda_l2, "lambda_id": tcfg.lambda_id,
               "identity_sign": tcfg.identity_sign, "latent_norm": tcfg.latent_norm, "optimizer": "sgd",
               "pass_mode": cfg.pass_mode}
    run.write_json("training_summary.json", summary)
    return summary


def _evaluate_method(run, name, manifest, originals, orig_scores):
    cfg, be = run.cfg, run.backend
    d = Path(run.cfg.anonymized_dirs()[name])
    anon = {}
    for e in manifest.entries:
        p = d / Path(e.path).name
        if not p.is_file():
            run.errors[f"{name}/{e.image_id}"] = "missing anonymized image"
            continue
        anon[e.image_id] = storage.read_image(p)[0]
    ids = [i for i in manifest.ids if i in anon]
    if not ids:
        raise DataError(f"no anonymized images found for {name!r}")
    pos = {iid: k for k, iid in enumerate(manifest.ids)}
    e_anon, a_anon = be.score_images(np.stack([anon[i] for i in ids]))
    e_orig = orig_scores[0][[pos[i] for i in ids]]
    a_orig = orig_scores[1][[pos[i] for i in ids]]
    sub = run.out / name
    priv = metrics.privacy_metric(list(zip(e_orig, e_anon)), cfg.gamma)
    util = metrics.utility_metric(list(zip(a_orig, a_anon)), cfg.theta, cfg.use_logit)
    dist = evaluation.attribute_distribution(a_orig, a_anon, theta=cfg.theta)
    run.write(f"{name}/privacy.csv", _with_ids(priv.to_csv(), ids))
    run.write(f"{name}/utility.csv", _with_ids(util.to_csv(), ids))
    run.write(f"{name}/attribute_distribution.csv", dist.to_csv())
    plots.bars(dist.attrs, dist.before, dist.after, sub / "attribute_distribution.png")
    row = {"identity_distance": (priv.I, float(np.std(priv.distances))), "attribute_distance": util.A}
    labels = manifest.identities
    if labels is not None:
        lab = np.array(labels)[[pos[i] for i in ids]]
        gen, imp = evaluation.verification_pairs(lab, min(1000, len(ids)), min(1000, len(ids)),
                                                 seed=derive_seed(cfg.seed, "pairs"))
        # second image of every pair is replaced by its anonymized version
        g_d = [metrics.identity_distance(e_orig[a], e_anon[b]) for a, b in gen]
        i_d = [metrics.identity_distance(e_orig[a], e_anon[b]) for a, b in imp]
        roc = evaluation.roc_from_distances(g_d, i_d)
        run.write(f"{name}/roc.csv", roc.to_csv())
        plots.line(roc.fpr, roc.tpr, "false positive rate", "true positive rate", sub / "roc.png")
        gal, prb = evaluation.split_gallery_probe(lab, seed=derive_seed(cfg.seed, "gallery"))
        if len(prb):
            rank = evaluation.identification_rank(e_orig[gal], lab[gal], e_anon[prb], lab[prb])
            run.write(f"{name}/rank.csv", rank.to_csv())
            row["rank"] = (rank.mean, rank.std)
        n_ids = len(set(lab.tolist()))
        div = evaluation.identity_diversity(e_anon, k_grid=range(2, min(len(ids), 2 * n_ids + 1)),
                                            original_count=n_ids, seed=cfg.seed)
        run.write(f"{name}/diversity.json", div.to_json() + "\n")
        row.update(auc=roc.auc, accuracy=roc.accuracy, diversity_ratio=div.ratio)
    return row


def cmd_evaluate(run: Run):
    cfg, be = run.cfg, run.backend
    manifest = _manifest(cfg)
    if not manifest.entries:
        raise DataError("no original images to evaluate")
    methods = cfg.anonymized_dirs()
    if not methods:
        raise ConfigError("evaluate needs at least one anonymized=name=dir entry")
    originals = manifest.load_images()
    orig_scores = be.score_images(np.stack([img for _, img in originals]))
    rows = {name: _evaluate_method(run, name, manifest, originals, orig_scores) for name in sorted(methods)}
    table = evaluation.compare_methods(rows)
    run.write("comparison.csv", table.to_csv())
    run.write("comparison.json", table.to_json() + "\n")
    return {"methods": sorted(methods)}


def cmd_ingest(run: Run):
    m = _manifest(run.cfg)
    run.write("manifest.json", m.to_json() + "\n")
    return {"n_images": len(m)}


def cmd_cache(run: Run):
    cfg = run.cfg
    m = _manifest(cfg)
    rep = storage.cache_latents(m, run.backend, cfg.cache or run.out / "latents")
    run.errors.update(rep.failed)
    run.write("cache_report.json", rep.to_json() + "\n")
    return {"encoded": len(rep.encoded), "skipped": len(rep.skipped), "failed": len(rep.failed)}


def cmd_make_synthetic(run: Run, n_identities: int, per_identity: int):
    """Write a labeled SyntheticWorld face set: ``.npy`` images, ``labels.csv`` and the world config."""
    be = run.backend
    if not isinstance(be, SyntheticWorld):
        raise ConfigError("make-synthetic needs a synthetic backend")
    cfg = run.cfg
    rows = []
    for k in range(n_identities):
        ident = be.sample_random_latent(derive_seed(cfg.seed, "identity", k))
        for j in range(per_identity):
            base = be.sample_random_latent(derive_seed(cfg.seed, "image", k, j))
            lat = np.where(be.identity_mask, ident, base)
            img = be.generate(lat)
            iid = f"id{k:04d}_{j:02d}"
            storage.write_image(run.out / "images" / f"{iid}.npy", img)
            attrs = be.predict_attributes(img)
            rows.append([iid, f"id{k:04d}", *(repr(float(a)) for a in attrs)])
    header = ["image_id", "identity", *(f"attr_{j}" for j in range(be.shape.n_attributes))]
    run.write("labels.csv", "\n".join(",".join(r) for r in [header, *rows]) + "\n")
    run.write("world.cfg", be.config.to_text())
    return {"n_images": len(rows)}


COMMANDS = {
    "search-layers": cmd_search_layers,
    "search-channels": cmd_search_channels,
    "anonymize": cmd_anonymize,
    "train-swapper": cmd_train_swapper,
    "evaluate": cmd_evaluate,
    "ingest": cmd_ingest,
    "cache": cmd_cache,
    "make-synthetic": cmd_make_synthetic,
}

# flag -> config key
FLAGS = {
    "backend": "backend", "seed": "seed", "out": "out", "data": "data", "labels": "labels", "mode": "mode",
    "layers": "layers", "blocks": "blocks", "regions": "regions", "checkpoint": "checkpoint",
    "block_size": "block_size", "budget": "budget", "threshold": "threshold", "anonymized": "anonymized",
    "workers": "workers", "cache": "cache", "epochs": "epochs", "learning_rate": "learning_rate",
    "n_pairs": "n_pairs", "m_values": "m_values", "scan_layers": "scan_layers",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentanon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=latentanon.__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value run configuration file")
        for flag in FLAGS:
            sp.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "make-synthetic":
            sp.add_argument("--identities", type=int, default=20)
            sp.add_argument("--per-identity", type=int, default=5)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        overrides = {key: getattr(args, flag) for flag, key in FLAGS.items()}
        for item in args.set:
            k, sep, v = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[k.strip()] = v
        cfg = RunConfig.load(args.config, overrides).validate(args.command)
        run = Run(args.command, cfg).start()
        if args.command == "make-synthetic":
            summary = cmd_make_synthetic(run, args.identities, args.per_identity)
        else:
            summary = COMMANDS[args.command](run)
        run.finish({"summary": summary})
        print(json.dumps(summary, sort_keys=True))
        if run.errors:
            print(f"{len(run.errors)} item(s) failed; see {run.out / 'errors.json'}", file=sys.stderr)
            return DataError.exit_code
        return 0
    except LatentAnonError as exc:
        if run is not None:
            run.fail(exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
