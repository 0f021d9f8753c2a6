"""Command-line entry points wiring the pipeline together.

Every command takes an optional JSON config file plus flag overrides,
validates against a schema (errors name the offending field), seeds all
randomness from the config, and leaves a manifest in its output
directory.  Plot-ready data (DET points, loss curves) is emitted as CSV.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as dat
from . import fr as frmod
from . import latent_opt as lo
from . import mad as madmod
from . import metrics
from . import training
from .config import ConfigError, Field, load_config_file, merge_cli_overrides, \
    nonnegative, positive, validate
from .losses import LossWeights
from .manifest import RunManifest
from .nets import NetworkConfig


def _parse_floats(text):
    if text is None or isinstance(text, list):
        return text
    return [float(v) for v in str(text).split(",") if v != ""]


def _parse_strs(text):
    if text is None or isinstance(text, list):
        return text
    return [v for v in str(text).split(",") if v != ""]


def _parse_ints(text):
    if text is None or isinstance(text, list):
        return text
    return [int(v) for v in str(text).split(",") if v != ""]


def _load_images_dir(path):
    files = sorted(Path(path).rglob("*.png"))
    if not files:
        raise ValueError(f"no PNG images under {path}")
    return np.stack([dat.load_image_png(f) for f in files]), files


def _hash_inputs(man: RunManifest, cfg: dict):
    for key, value in cfg.items():
        if key == "out_dir" or not isinstance(value, str):
            continue
        p = Path(value)
        if p.is_file():
            man.add_input(key, p)
        elif p.is_dir():
            for probe in ("dataset.json", "labels.csv"):
                if (p / probe).is_file():
                    man.add_input(f"{key}/{probe}", p / probe)


def _finish(command, cfg, out_dir, artifacts, t0):
    man = RunManifest(command=command, config=cfg, seed=cfg.get("seed", 0),
                      wall_clock_sec=time.monotonic() - t0)
    _hash_inputs(man, cfg)
    for a in artifacts:
        man.add_artifact(a)
    man.write(out_dir)


COMMON = [
    Field("seed", int, 0, nonnegative),
    Field("out_dir", str),
]


# ---------------------------------------------------------------- synth-data

SYNTH_SCHEMA = COMMON + [
    Field("n_identities", int, 40, lambda v: v >= 10, "need >= 10 identities"),
    Field("samples_per_identity", int, 16, positive),
    Field("image_size", int, 32, lambda v: v in (8, 16, 32, 64, 128, 256, 512),
          "must be a power of two in [8, 512]"),
]


def cmd_synth_data(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    ds = dat.generate_synthetic_dataset(cfg["n_identities"],
                                        cfg["samples_per_identity"],
                                        cfg["seed"], cfg["image_size"])
    dat.save_dataset(ds, out_dir)
    _finish("synth-data", cfg, out_dir, ["dataset.json", "labels.csv", "images"], t0)
    print(f"wrote {len(ds.images)} images to {out_dir}")
    return 0


# ------------------------------------------------------------------ train-fr

TRAIN_FR_SCHEMA = COMMON + [
    Field("data", str),
    Field("backend_id", str, "fr"),
    Field("role", str, frmod.ROLE_BLACK_BOX,
          lambda v: v in (frmod.ROLE_WHITE_BOX, frmod.ROLE_BLACK_BOX),
          "role must be white-box or black-box"),
    Field("embed_dim", int, 64, positive),
    Field("base_width", int, 32, positive),
    Field("epochs", int, 30, positive),
    Field("batch_size", int, 64, positive),
    Field("lr", float, 1e-3, positive),
    Field("margin", float, 0.2, nonnegative),
    Field("logit_scale", float, 16.0, positive),
    Field("holdout_per_identity", int, 4, positive),
]


def cmd_train_fr(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = dat.load_dataset(cfg["data"])
    train_idx, held_idx = ds.holdout_split(cfg["holdout_per_identity"])
    toy_cfg = frmod.ToyFrConfig(
        embed_dim=cfg["embed_dim"], base_width=cfg["base_width"],
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        margin=cfg["margin"], logit_scale=cfg["logit_scale"], seed=cfg["seed"])
    backend = frmod.train_toy_fr(ds.images[train_idx], ds.labels[train_idx],
                                 ds.image_size, toy_cfg, cfg["backend_id"],
                                 role=cfg["role"])
    held_scores = frmod.pair_scores(backend, ds.images[held_idx],
                                    ds.labels[held_idx], seed=cfg["seed"])
    eer = frmod.equal_error_rate(held_scores)
    ckpt_path = out_dir / "fr.bin"
    frmod.save_backend(backend, ckpt_path)
    frmod.save_registry(out_dir / "registry.json", [backend], [ckpt_path])
    (out_dir / "eer.json").write_text(json.dumps({"held_out_eer": eer}) + "\n")
    _finish("train-fr", cfg, out_dir, ["fr.bin", "registry.json", "eer.json"], t0)
    print(f"backend {backend.id}: held-out EER {eer:.4f}")
    return 0


# ----------------------------------------------------------------- train-gen

TRAIN_GEN_SCHEMA = COMMON + [
    Field("data", str),
    Field("latent_dim", int, 128, positive),
    Field("base_width", int, 64, positive),
    Field("batch_size", int, 32, lambda v: v >= 2, "pairing needs >= 2"),
    Field("critic_updates_per_gen", int, 5, positive),
    Field("baseline_epochs", int, 60, positive),
    Field("lr_critic", float, 1e-4, positive),
    Field("lr_generator", float, 1e-4, positive),
    Field("lambda_gp", float, 10.0, nonnegative),
]


def cmd_train_gen(cfg):
    out_dir = Path(cfg["out_dir"])
    ds = dat.load_dataset(cfg["data"])
    train_cfg = training.TrainingConfig(
        batch_size=cfg["batch_size"],
        critic_updates_per_gen=cfg["critic_updates_per_gen"],
        baseline_epochs=cfg["baseline_epochs"],
        lr_critic=cfg["lr_critic"], lr_generator=cfg["lr_generator"],
        seed=cfg["seed"])
    net_cfg = NetworkConfig(image_size=ds.image_size, channels=3,
                            latent_dim=cfg["latent_dim"],
                            base_width=cfg["base_width"])
    w = LossWeights(lambda_gp=cfg["lambda_gp"])
    training.train(train_cfg, net_cfg, w, ds.images, out_dir, baseline_only=True)
    print(f"baseline checkpoint at {out_dir / 'checkpoints' / 'baseline.bin'}")
    return 0


# -------------------------------------------------------------- finetune-gen

FINETUNE_SCHEMA = COMMON + [
    Field("data", str),
    Field("checkpoint", str),
    Field("fr", str),
    Field("finetune_epochs", int, 15, positive),
    Field("batch_size", int, 32, lambda v: v >= 2, "pairing needs >= 2"),
    Field("critic_updates_per_gen", int, 5, positive),
    Field("lr_critic", float, 1e-4, positive),
    Field("lr_generator", float, 1e-4, positive),
    Field("lambda_gp", float, 10.0, nonnegative),
    Field("gamma", list, [1.0, 1.0, 1.0, 1.0, 1.0],
          lambda v: len(v) == 5 and all(g >= 0 for g in v),
          "gamma needs 5 nonnegative entries"),
]


def cmd_finetune_gen(cfg):
    out_dir = Path(cfg["out_dir"])
    ds = dat.load_dataset(cfg["data"])
    backend = frmod.load_backend(cfg["fr"])
    train_cfg = training.TrainingConfig(
        batch_size=cfg["batch_size"],
        critic_updates_per_gen=cfg["critic_updates_per_gen"],
        finetune_epochs=cfg["finetune_epochs"],
        lr_critic=cfg["lr_critic"], lr_generator=cfg["lr_generator"],
        seed=cfg["seed"])
    w = LossWeights(lambda_gp=cfg["lambda_gp"], gamma=tuple(cfg["gamma"]))
    training.run_finetune(train_cfg, w, ds.images, backend,
                          cfg["checkpoint"], out_dir)
    print(f"finetuned checkpoint at {out_dir / 'checkpoints' / 'finetune.bin'}")
    return 0


# ---------------------------------------------------------------- gen-morphs

GEN_MORPHS_SCHEMA = COMMON + [
    Field("data", str),
    Field("checkpoint", str),
    Field("fr", list),                 # one or more backend checkpoint paths
    Field("fr_weights", list, None),
    Field("protocol", str, None),
    Field("n_pairs", int, 100, positive),
    Field("top_fraction", float, 0.10, lambda v: 0 < v <= 1, "in (0, 1]"),
    Field("steps_phase1", int, 150, nonnegative),
    Field("steps_phase2", int, 150, nonnegative),
    Field("adam_alpha", float, 0.05, positive),
    Field("adam_beta1", float, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
    Field("adam_beta2", float, 0.999, lambda v: 0 <= v < 1, "in [0, 1)"),
]


def cmd_gen_morphs(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    (out_dir / "morphs").mkdir(parents=True, exist_ok=True)
    ds = dat.load_dataset(cfg["data"])
    _, _, encoder, decoder, _ = training.load_models(cfg["checkpoint"])
    encoder.eval()
    decoder.eval()
    for p in list(encoder.parameters()) + list(decoder.parameters()):
        p.requires_grad_(False)
    backend = lo.GeneratorBackend.from_models(encoder, decoder)
    fr_set = [frmod.load_backend(p) for p in cfg["fr"]]
    weights = cfg["fr_weights"] or [1.0] * len(fr_set)
    if len(weights) != len(fr_set):
        raise ConfigError("field 'fr_weights': must align with 'fr' list")
    opt_cfg = lo.OptimizationConfig(
        steps_phase1=cfg["steps_phase1"], steps_phase2=cfg["steps_phase2"],
        adam_alpha=cfg["adam_alpha"], adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"],
        fr_weights=tuple((b.id, w) for b, w in zip(fr_set, weights)))
    if cfg["protocol"]:
        protocol = dat.read_protocol(cfg["protocol"])
    else:
        protocol = dat.select_pairs(ds, fr_set[0], cfg["n_pairs"],
                                    cfg["seed"], cfg["top_fraction"])
    dat.write_protocol(protocol, out_dir / "protocol.jsonl")

    with (out_dir / "metadata.jsonl").open("w") as meta:
        for entry in protocol.entries:
            result = lo.generate_morph(backend, fr_set,
                                       ds.images[entry.image_a],
                                       ds.images[entry.image_b], opt_cfg)
            dat.save_image_png(out_dir / "morphs" / f"{entry.pair_id}.png",
                               result.image)
            meta.write(json.dumps(lo.morph_metadata(entry.pair_id, result),
                                  sort_keys=True) + "\n")
    _finish("gen-morphs", cfg, out_dir,
            ["protocol.jsonl", "metadata.jsonl", "morphs"], t0)
    print(f"wrote {len(protocol)} morphs to {out_dir / 'morphs'}")
    return 0


# ----------------------------------------------------------------- calibrate

CALIBRATE_SCHEMA = COMMON + [
    Field("data", str),
    Field("fr", str),
    Field("fmr_bound", float, 0.001, lambda v: 0 < v < 1, "in (0, 1)"),
    Field("holdout_per_identity", int, 4, positive),
]


def cmd_calibrate(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = dat.load_dataset(cfg["data"])
    backend = frmod.load_backend(cfg["fr"])
    _, held_idx = ds.holdout_split(cfg["holdout_per_identity"])
    scores = frmod.pair_scores(backend, ds.images[held_idx],
                               ds.labels[held_idx], seed=cfg["seed"])
    t = frmod.calibrate_threshold(scores, cfg["fmr_bound"])
    backend.threshold = t
    ckpt_path = out_dir / "fr_calibrated.bin"
    frmod.save_backend(backend, ckpt_path)
    frmod.save_registry(out_dir / "registry.json", [backend], [ckpt_path])
    report = {
        "threshold": t,
        "fmr": frmod.fmr_at(scores, t),
        "fnmr": frmod.fnmr_at(scores, t),
        "eer": frmod.equal_error_rate(scores),
        "fmr_bound": cfg["fmr_bound"],
    }
    (out_dir / "calibration.json").write_text(json.dumps(report, indent=2) + "\n")
    _finish("calibrate", cfg, out_dir,
            ["fr_calibrated.bin", "registry.json", "calibration.json"], t0)
    print(f"backend {backend.id}: threshold {t:.6f} "
          f"(FMR {report['fmr']:.6f}, FNMR {report['fnmr']:.4f})")
    return 0


# ---------------------------------------------------------------- eval-mmpmr

EVAL_MMPMR_SCHEMA = COMMON + [
    Field("scores", str, None),
    Field("threshold", float, None),
    Field("data", str, None),
    Field("protocol", str, None),
    Field("morph_dir", str, None),
    Field("fr", str, None),
    Field("morph_set", str, "morphs"),
]


def _score_morphs(ds, protocol, morph_dir, backend):
    ids, d1, d2 = [], [], []
    for entry in protocol.entries:
        morph = dat.load_image_png(Path(morph_dir) / f"{entry.pair_id}.png")
        em = backend.embedding_of(morph)
        pa = backend.embedding_of(ds.images[entry.probe_a])
        pb = backend.embedding_of(ds.images[entry.probe_b])
        ids.append(entry.pair_id)
        d1.append(backend.distance(em, pa))
        d2.append(backend.distance(em, pb))
    return metrics.MorphScoreTable(morph_ids=ids, d1=np.array(d1), d2=np.array(d2))


def cmd_eval_mmpmr(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = ["mmpmr_report.csv"]
    if cfg["scores"]:
        if cfg["threshold"] is None:
            raise ConfigError("field 'threshold': required with 'scores'")
        table = metrics.MorphScoreTable.from_csv(cfg["scores"])
        t = cfg["threshold"]
        backend_id = "external"
    else:
        for need in ("data", "protocol", "morph_dir", "fr"):
            if not cfg[need]:
                raise ConfigError(f"field '{need}': required without 'scores'")
        ds = dat.load_dataset(cfg["data"])
        protocol = dat.read_protocol(cfg["protocol"])
        backend = frmod.load_backend(cfg["fr"])
        t = cfg["threshold"] if cfg["threshold"] is not None \
            else backend.require_threshold()
        table = _score_morphs(ds, protocol, cfg["morph_dir"], backend)
        table.to_csv(out_dir / "score_table.csv")
        artifacts.append("score_table.csv")
        backend_id = backend.id
    value = metrics.mmpmr(table, t)
    metrics.write_mmpmr_report(out_dir / "mmpmr_report.csv",
                               [(backend_id, cfg["morph_set"], t, value)])
    _finish("eval-mmpmr", cfg, out_dir, artifacts, t0)
    print(f"{value:.4f}")
    return 0


# ---------------------------------------------------------------- eval-bound

EVAL_BOUND_SCHEMA = COMMON + [
    Field("data", str),
    Field("protocol", str),
    Field("fr", str),
    Field("from_sources", bool, False),
]


def cmd_eval_bound(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = dat.load_dataset(cfg["data"])
    protocol = dat.read_protocol(cfg["protocol"])
    backend = frmod.load_backend(cfg["fr"])
    key_a = "image_a" if cfg["from_sources"] else "probe_a"
    key_b = "image_b" if cfg["from_sources"] else "probe_b"
    p1 = [backend.embedding_of(ds.images[getattr(e, key_a)]) for e in protocol.entries]
    p2 = [backend.embedding_of(ds.images[getattr(e, key_b)]) for e in protocol.entries]
    indicators, bound = metrics.worst_case_bound(p1, p2, backend)
    metrics.write_bounds_csv(out_dir / "bounds.csv",
                             [(backend.id, e.pair_id, m)
                              for e, m in zip(protocol.entries, indicators)])
    _finish("eval-bound", cfg, out_dir, ["bounds.csv"], t0)
    print(f"{bound:.4f}")
    return 0


# ----------------------------------------------------------------- mad-train

MAD_TRAIN_SCHEMA = COMMON + [
    Field("kind", str, "smad", lambda v: v in ("smad", "dmad")),
    Field("bona_fide_dir", str, None),
    Field("morph_dir", str, None),
    Field("data", str, None),
    Field("protocol", str, None),
    Field("fr", str, None),
    Field("grid", list, [4, 4], lambda v: len(v) == 2 and min(v) >= 1),
    Field("bins", int, 256, lambda v: v in (256, 59)),
    Field("reg", float, 1e-4, positive),
    Field("iterations", int, 2000, positive),
]


def _smad_matrix(cfg, bona_images, morph_images):
    lbp_cfg = madmod.LbpConfig(grid=tuple(cfg["grid"]), bins=cfg["bins"])
    x = np.concatenate([madmod.smad_features(bona_images, lbp_cfg),
                        madmod.smad_features(morph_images, lbp_cfg)])
    y = np.concatenate([np.zeros(len(bona_images), dtype=np.int64),
                        np.ones(len(morph_images), dtype=np.int64)])
    return x, y, lbp_cfg


def _dmad_matrix(cfg):
    for need in ("data", "protocol", "fr", "morph_dir"):
        if not cfg[need]:
            raise ConfigError(f"field '{need}': required for kind=dmad")
    ds = dat.load_dataset(cfg["data"])
    protocol = dat.read_protocol(cfg["protocol"])
    backend = frmod.load_backend(cfg["fr"])
    feats, labels = [], []
    for e in protocol.entries:
        morph = dat.load_image_png(Path(cfg["morph_dir"]) / f"{e.pair_id}.png")
        for probe in (e.probe_a, e.probe_b):
            feats.append(madmod.dmad_features(backend, morph,
                                              ds.images[probe])[0])
            labels.append(1)
        feats.append(madmod.dmad_features(backend, ds.images[e.image_a],
                                          ds.images[e.probe_a])[0])
        feats.append(madmod.dmad_features(backend, ds.images[e.image_b],
                                          ds.images[e.probe_b])[0])
        labels.extend([0, 0])
    return np.stack(feats), np.array(labels, dtype=np.int64)


def cmd_mad_train(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["kind"] == "smad":
        for need in ("bona_fide_dir", "morph_dir"):
            if not cfg[need]:
                raise ConfigError(f"field '{need}': required for kind=smad")
        bona, _ = _load_images_dir(cfg["bona_fide_dir"])
        morphs, _ = _load_images_dir(cfg["morph_dir"])
        x, y, lbp_cfg = _smad_matrix(cfg, bona, morphs)
        clf = madmod.train_linear_hinge(x, y, reg=cfg["reg"],
                                        iterations=cfg["iterations"],
                                        lbp_config=lbp_cfg)
    else:
        x, y = _dmad_matrix(cfg)
        clf = madmod.train_linear_hinge(x, y, reg=cfg["reg"],
                                        iterations=cfg["iterations"])
    clf.save(out_dir / "classifier.json")
    _finish("mad-train", cfg, out_dir, ["classifier.json"], t0)
    print(f"trained {cfg['kind']} classifier on {len(y)} samples")
    return 0


# ------------------------------------------------------------------ mad-eval

MAD_EVAL_SCHEMA = COMMON + [
    Field("classifier", str),
    Field("kind", str, "smad", lambda v: v in ("smad", "dmad")),
    Field("bona_fide_dir", str, None),
    Field("morph_dir", str, None),
    Field("data", str, None),
    Field("protocol", str, None),
    Field("fr", str, None),
    Field("apcer_bounds", list, [0.05, 0.10],
          lambda v: all(0 <= b <= 1 for b in v)),
]


def cmd_mad_eval(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    clf = madmod.LinearHingeClassifier.load(cfg["classifier"])
    if cfg["kind"] == "smad":
        for need in ("bona_fide_dir", "morph_dir"):
            if not cfg[need]:
                raise ConfigError(f"field '{need}': required for kind=smad")
        bona, _ = _load_images_dir(cfg["bona_fide_dir"])
        morphs, _ = _load_images_dir(cfg["morph_dir"])
        lbp_cfg = clf.lbp_config or madmod.LbpConfig()
        x = np.concatenate([madmod.smad_features(bona, lbp_cfg),
                            madmod.smad_features(morphs, lbp_cfg)])
        y = np.concatenate([np.zeros(len(bona), dtype=np.int64),
                            np.ones(len(morphs), dtype=np.int64)])
    else:
        x, y = _dmad_matrix(cfg)
    scores = madmod.mad_evaluate(clf, x, y)
    with (out_dir / "scores.csv").open("w") as fh:
        fh.write("label,score\n")
        for s in scores.bona_fide:
            fh.write(f"bona_fide,{float(s)!r}\n")
        for s in scores.attack:
            fh.write(f"attack,{float(s)!r}\n")
    report = {f"bpcer_at_apcer_{b}": metrics.bpcer_at_apcer(
        scores.bona_fide, scores.attack, b) for b in cfg["apcer_bounds"]}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2,
                                                    sort_keys=True) + "\n")
    _finish("mad-eval", cfg, out_dir, ["scores.csv", "report.json"], t0)
    for key in sorted(report):
        print(f"{key}: {report[key]:.4f}")
    return 0


# ---------------------------------------------------------------- det-export

DET_SCHEMA = COMMON + [
    Field("scores", str),
    Field("name", str, "scores"),
]

_LOW_LABELS = {"genuine", "bona_fide", "0"}
_HIGH_LABELS = {"impostor", "attack", "1"}


def cmd_det_export(cfg):
    t0 = time.monotonic()
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    low, high = [], []
    seen = set()
    with Path(cfg["scores"]).open() as fh:
        header = fh.readline().strip().split(",")
        if header != ["label", "score"]:
            raise ConfigError("field 'scores': expected header 'label,score'")
        for line in fh:
            label, value = line.strip().split(",")
            seen.add(label)
            if label in _LOW_LABELS:
                low.append(float(value))
            elif label in _HIGH_LABELS:
                high.append(float(value))
            else:
                raise ConfigError(f"field 'scores': unknown label {label!r}")
    points = metrics.det_points(np.array(low), np.array(high))
    names = ("apcer", "bpcer") if seen & {"bona_fide", "attack"} else ("fmr", "fnmr")
    out = out_dir / f"det_{cfg['name']}.csv"
    metrics.write_det_csv(out, points, rate_names=names)
    _finish("det-export", cfg, out_dir, [out.name], t0)
    print(f"wrote {out}")
    return 0


# ------------------------------------------------------------------ dispatch

COMMANDS = {
    "synth-data": (SYNTH_SCHEMA, cmd_synth_data),
    "train-fr": (TRAIN_FR_SCHEMA, cmd_train_fr),
    "train-gen": (TRAIN_GEN_SCHEMA, cmd_train_gen),
    "finetune-gen": (FINETUNE_SCHEMA, cmd_finetune_gen),
    "gen-morphs": (GEN_MORPHS_SCHEMA, cmd_gen_morphs),
    "calibrate": (CALIBRATE_SCHEMA, cmd_calibrate),
    "eval-mmpmr": (EVAL_MMPMR_SCHEMA, cmd_eval_mmpmr),
    "eval-bound": (EVAL_BOUND_SCHEMA, cmd_eval_bound),
    "mad-train": (MAD_TRAIN_SCHEMA, cmd_mad_train),
    "mad-eval": (MAD_EVAL_SCHEMA, cmd_mad_eval),
    "det-export": (DET_SCHEMA, cmd_det_export),
}

_LIST_PARSERS = {
    "fr": _parse_strs,
    "fr_weights": _parse_floats,
    "gamma": _parse_floats,
    "grid": _parse_ints,
    "apcer_bounds": _parse_floats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphlab",
        description="Morph generation and FR vulnerability benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (schema, _) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override it")
        for f in schema:
            flag = "--" + f.name.replace("_", "-")
            if f.type is bool:
                p.add_argument(flag, action="store_const", const=True,
                               default=None, dest=f.name)
            elif f.type is list:
                p.add_argument(flag, type=str, default=None, dest=f.name,
                               help="comma-separated list")
            else:
                p.add_argument(flag, type=f.type, default=None, dest=f.name)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    schema, handler = COMMANDS[args.command]
    file_cfg = load_config_file(args.config) if args.config else {}
    overrides = {}
    for f in schema:
        value = getattr(args, f.name, None)
        if value is not None and f.type is list:
            value = _LIST_PARSERS[f.name](value)
        overrides[f.name] = value
    cfg = validate(schema, merge_cli_overrides(file_cfg, overrides))
    return handler(cfg)


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - surfaced verbatim by contract
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
