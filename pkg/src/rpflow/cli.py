"""Command-line entry point: ``rpflow <command> [options]``.

Every command resolves a flat ``key = value`` configuration (file first, then
flags), writes it to ``<out>/<command>-<hash8>/config.txt`` and puts its
artifacts next to it. All randomness flows from ``--seed``.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import data as dataio
from . import tensorio
from .errors import ConfigError, IoError, ParseError, RPFError, VersionMismatch

log = logging.getLogger("rpflow")


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str = ""


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


REQUIRED = object()

SCHEMAS = {
    "gen-data": {
        "task": Key(str, "cylinder", "cylinder, registration or multipart"),
        "scheme": Key(str, "horizontal", "cylinder cut: horizontal, axial or random"),
        "count": Key(int, 10),
        "points_per_part": Key(int, 512),
        "min_parts": Key(int, 2, "multipart only"),
        "max_parts": Key(int, 8, "multipart only"),
    },
    "pretrain": {
        "data": Key(str, REQUIRED, "dataset directory"),
        "steps": Key(int, 500),
        "lr": Key(float, 1e-3),
        "batch_size": Key(int, 8),
        "points_per_part": Key(int, 128),
        "epsilon_scale": Key(float, 0.025, "overlap radius as a fraction of object scale"),
        "translation_range": Key(float, 0.5),
        "augment": Key(bool, True),
        "weight_decay": Key(float, 1e-4),
        "feature_dim": Key(int, 64),
        "num_layers": Key(int, 3),
    },
    "train": {
        "data": Key(str, REQUIRED, "dataset directory"),
        "encoder": Key(str, REQUIRED, "encoder checkpoint"),
        "steps": Key(int, 2000),
        "lr": Key(float, 1e-3),
        "batch_size": Key(int, 16),
        "points_per_part": Key(int, 128),
        "hidden": Key(int, 64),
        "heads": Key(int, 4),
        "blocks": Key(int, 2),
        "num_freqs": Key(int, 4),
        "time_alpha": Key(float, 0.5),
        "weight_decay": Key(float, 1e-4),
        "halve_after": Key(int, 5000),
        "halve_every": Key(int, 1000),
        "repose": Key(bool, True),
    },
    "assemble": {
        "data": Key(str, REQUIRED, "dataset directory"),
        "encoder": Key(str, "", "encoder checkpoint (unused with flow = oracle)"),
        "flow": Key(str, REQUIRED, "flow checkpoint, or 'oracle' for the ground-truth velocity"),
        "steps": Key(int, 20, "Euler steps K"),
        "noise": Key(str, "", "noise file from an earlier run; fixes noise and sampled rows"),
        "points_per_part": Key(int, 128),
    },
    "interpolate": {
        "data": Key(str, REQUIRED, "dataset directory"),
        "encoder": Key(str, ""),
        "flow": Key(str, REQUIRED),
        "noise_a": Key(str, REQUIRED, "noise file at s = 0"),
        "noise_b": Key(str, REQUIRED, "noise file at s = 1"),
        "steps": Key(int, 20),
    },
    "symmetry-report": {
        "data": Key(str, REQUIRED, "dataset directory (ground truth required)"),
        "orders": Key(str, "2,3,4,6", "candidate rotation orders"),
    },
    "evaluate": {
        "data": Key(str, REQUIRED, "dataset directory (ground truth required)"),
        "pred": Key(str, REQUIRED, "output directory of an assemble run"),
    },
}

INTERP_S = (0.0, 0.25, 0.5, 0.75, 1.0)


# ---------------------------------------------------------------------------
# Configuration


def read_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(command, key, value):
    spec = SCHEMAS[command][key]
    try:
        if spec.type is bool:
            return value if isinstance(value, bool) else _parse_bool(value)
        return spec.type(value)
    except ValueError:
        raise ConfigError(f"{command}: {key} = {value!r} is not a valid {spec.type.__name__}") from None


def resolve_config(command, file_values, flag_values, seed):
    schema = SCHEMAS[command]
    unknown = sorted(set(file_values) - set(schema) - {"seed"})
    if unknown:
        raise ConfigError(f"{command}: unknown config key(s) {', '.join(unknown)}; "
                          f"valid keys are {', '.join(sorted(schema))}")
    merged = {}
    for key, spec in schema.items():
        if flag_values.get(key) is not None:
            merged[key] = _coerce(command, key, flag_values[key])
        elif key in file_values:
            merged[key] = _coerce(command, key, file_values[key])
        elif spec.default is REQUIRED:
            raise ConfigError(f"{command}: missing required setting '{key}' (--{key.replace('_', '-')})")
        else:
            merged[key] = spec.default
    if seed is None:
        seed = int(file_values.get("seed", 0))
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    merged["seed"] = seed
    return merged


def format_config(command, cfg):
    lines = [f"command = {command}"] + [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def run_directory(out, command, cfg):
    digest = hashlib.sha256(format_config(command, cfg).encode("utf-8")).hexdigest()[:8]
    path = os.path.join(out, f"{command}-{digest}")
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Shared helpers


def _existing(path, what):
    if not path or not os.path.exists(path):
        raise IoError(f"{what} not found: {path!r}")
    return path


def _load_dataset(directory, need_truth=True):
    _existing(directory, "dataset directory")
    names = dataio.list_samples(directory)
    if not names:
        raise IoError(f"no .mpc samples in {directory}")
    samples = [dataio.read_sample(directory, n) for n in names]
    if need_truth:
        missing = [s.name for s in samples if s.assembled is None or s.poses is None]
        if missing:
            raise IoError(f"ground truth (.gt.mpc/.pose) missing for {', '.join(missing[:5])}")
    return samples


def _load_models(cfg):
    from .encoder import OverlapEncoder
    from .flow import VelocityNetwork

    if cfg["flow"] == "oracle":
        return None, None
    model = VelocityNetwork.load(_existing(cfg["flow"], "flow checkpoint"))
    encoder = None
    if model.cfg.feature_dim:
        encoder = OverlapEncoder.load(_existing(cfg["encoder"], "encoder checkpoint"))
        if encoder.feature_dim != model.cfg.feature_dim:
            raise ConfigError(f"encoder feature width {encoder.feature_dim} does not match the flow "
                              f"checkpoint's {model.cfg.feature_dim}")
    return model, encoder


def _oracle_field(sample, indices, noise):
    """Constant ground-truth velocity ``z - x0`` for the given rows and noise."""
    from .geometry import apply_transform

    if sample.poses is None:
        raise IoError(f"{sample.name}: flow = oracle needs the .pose file")
    x0 = np.concatenate([apply_transform(T, p.points[i])
                         for T, p, i in zip(sample.poses, sample.condition.parts, indices)])
    v = noise - x0

    def field(t, x):
        return v[None]
    return field


def _noise_key(name, what, k=None):
    return f"{name}/{what}" if k is None else f"{name}/{what}/{k}"


def _read_noise(path):
    return tensorio.load_tensors(_existing(path, "noise file"), tensorio.NOISE_MAGIC)


def _noise_for(tensors, sample, path):
    key = _noise_key(sample.name, "noise")
    if key not in tensors:
        raise IoError(f"noise file {path} has no entry for sample {sample.name}")
    idx = [tensors[_noise_key(sample.name, "indices", k)].astype(np.int64)
           for k in range(sample.condition.num_parts)]
    return tensors[key], idx


def _assemble_one(sample, model, encoder, K, rng, M, noise=None, indices=None):
    from .flow import condition_rows, infer

    if model is None:
        if noise is None:
            picks, pts, *_ = condition_rows(sample.condition, M, rng, indices)
            noise, indices = rng.standard_normal(pts.shape), picks
        field = _oracle_field(sample, indices, noise)
        return infer(None, None, sample.condition, K, noise=noise, indices=indices, velocity_fn=field)
    return infer(model, encoder, sample.condition, K, rng=rng, noise=noise, M=M, indices=indices)


def _write_prediction(directory, name, sample, pred):
    from .flow import recover_poses

    poses, errors = recover_poses(sample.condition, pred)
    for k, err in errors.items():
        log.warning("%s part %d: pose recovery failed (%s)", name, k, err)
    tensors = {}
    for k, (pts, idx) in enumerate(zip(pred.points, pred.indices)):
        tensors[f"points/{k}"] = pts
        tensors[f"indices/{k}"] = idx
    tensors["noise"] = pred.noise
    base = os.path.join(directory, name)
    tensorio.save_tensors(base + ".pred.bin", tensorio.NOISE_MAGIC, tensors)
    if not errors:
        dataio.write_mpc(base + ".pred.mpc", sample.condition.transformed(poses, assembled=True))
        dataio.write_pose(base + ".pred.pose", poses)
    return poses


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(cfg, outdir):
    from .data import DatasetSpec, generate

    try:
        spec = DatasetSpec(cfg["task"], cfg["count"], cfg["points_per_part"], cfg["seed"], cfg["scheme"],
                           (cfg["min_parts"], cfg["max_parts"]))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    samples = generate(spec)
    dataio.write_dataset(outdir, samples)
    log.info("wrote %d samples to %s", len(samples), outdir)


def cmd_pretrain(cfg, outdir):
    from .encoder import PretrainConfig, pretrain

    samples = _load_dataset(cfg["data"])
    pc = PretrainConfig(epsilon_scale=cfg["epsilon_scale"], lr=cfg["lr"], steps=cfg["steps"],
                        batch_size=cfg["batch_size"], points_per_part=cfg["points_per_part"],
                        translation_range=cfg["translation_range"], augment=cfg["augment"],
                        weight_decay=cfg["weight_decay"], feature_dim=cfg["feature_dim"],
                        num_layers=cfg["num_layers"], seed=cfg["seed"] % 2 ** 63)
    encoder, losses = pretrain(pc, samples)
    encoder.save(os.path.join(outdir, "encoder.bin"))
    _write_losses(os.path.join(outdir, "losses.txt"), losses)


def cmd_train(cfg, outdir):
    from .encoder import OverlapEncoder
    from .flow import NetworkConfig, TrainConfig, train

    samples = _load_dataset(cfg["data"])
    encoder = OverlapEncoder.load(_existing(cfg["encoder"], "encoder checkpoint"))
    net = NetworkConfig(hidden=cfg["hidden"], heads=cfg["heads"], blocks=cfg["blocks"], num_freqs=cfg["num_freqs"])
    if net.hidden % net.heads:
        raise ConfigError(f"hidden = {net.hidden} must be divisible by heads = {net.heads}")
    tc = TrainConfig(lr=cfg["lr"], steps=cfg["steps"], batch_size=cfg["batch_size"],
                     points_per_part=cfg["points_per_part"], time_alpha=cfg["time_alpha"],
                     weight_decay=cfg["weight_decay"], halve_after=cfg["halve_after"],
                     halve_every=cfg["halve_every"], repose=cfg["repose"], seed=cfg["seed"] % 2 ** 63, network=net)
    model, losses = train(tc, samples, encoder)
    model.save(os.path.join(outdir, "flow.bin"))
    _write_losses(os.path.join(outdir, "losses.txt"), losses)


def cmd_assemble(cfg, outdir):
    if cfg["steps"] < 1:
        raise ConfigError(f"steps must be >= 1, got {cfg['steps']}")
    samples = _load_dataset(cfg["data"], need_truth=cfg["flow"] == "oracle")
    model, encoder = _load_models(cfg)
    fixed = _read_noise(cfg["noise"]) if cfg["noise"] else None
    rng = np.random.default_rng(cfg["seed"])
    record = {}
    for s in samples:
        noise = indices = None
        if fixed is not None:
            noise, indices = _noise_for(fixed, s, cfg["noise"])
        pred = _assemble_one(s, model, encoder, cfg["steps"], rng, cfg["points_per_part"], noise, indices)
        _write_prediction(outdir, s.name, s, pred)
        record[_noise_key(s.name, "noise")] = pred.noise
        for k, idx in enumerate(pred.indices):
            record[_noise_key(s.name, "indices", k)] = idx
    tensorio.save_tensors(os.path.join(outdir, "noise.bin"), tensorio.NOISE_MAGIC, record)
    log.info("assembled %d samples with K=%d", len(samples), cfg["steps"])


def cmd_interpolate(cfg, outdir):
    from .flow import interpolate_noise

    samples = _load_dataset(cfg["data"], need_truth=cfg["flow"] == "oracle")
    model, encoder = _load_models(cfg)
    za, zb = _read_noise(cfg["noise_a"]), _read_noise(cfg["noise_b"])
    rng = np.random.default_rng(cfg["seed"])
    for s in samples:
        a, idx = _noise_for(za, s, cfg["noise_a"])
        b, _ = _noise_for(zb, s, cfg["noise_b"])
        if a.shape != b.shape:
            raise IoError(f"{s.name}: noise shapes differ between files ({a.shape} vs {b.shape})")
        for sv in INTERP_S:
            # rows come from the first file so every s moves the same points
            pred = _assemble_one(s, model, encoder, cfg["steps"], rng, None, interpolate_noise(a, b, sv), idx)
            _write_prediction(outdir, f"{s.name}.s{sv:g}", s, pred)


def cmd_symmetry_report(cfg, outdir):
    from .geometry import object_scale, rotation_geodesic_deg
    from .symmetry import find_identical_parts, find_stabilizer

    try:
        orders = tuple(int(x) for x in cfg["orders"].split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"orders must be a comma-separated list of integers, got {cfg['orders']!r}") from None
    if not orders or min(orders) < 2:
        raise ConfigError("orders must list integers >= 2")
    lines = ["object\tpart\tclass\tstabilizer_size\tangles_deg"]
    for s in _load_dataset(cfg["data"]):
        classes = find_identical_parts(s.assembled)
        label = {i: c for c, members in enumerate(classes) for i in members}
        D = object_scale(s.assembled.points())
        for part in s.assembled.parts:
            stab = find_stabilizer(part.points, orders, scale=None)
            angles = ",".join(f"{rotation_geodesic_deg(np.eye(3), R):.6g}" for R in stab)
            lines.append(f"{s.name}\t{part.part_index}\t{label[part.part_index]}\t{len(stab)}\t{angles}")
        log.info("%s: classes %s (D = %.4g)", s.name, classes, D)
    with open(os.path.join(outdir, "symmetry.tsv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def cmd_evaluate(cfg, outdir):
    from .metrics import evaluate_dataset, write_report

    samples = _load_dataset(cfg["data"])
    pred_dir = _existing(cfg["pred"], "prediction directory")

    def predictor(sample):
        base = os.path.join(pred_dir, sample.name)
        t = tensorio.load_tensors(base + ".pred.bin", tensorio.NOISE_MAGIC)
        H = sample.condition.num_parts
        pts = [t[f"points/{k}"] for k in range(H)]
        idx = [t[f"indices/{k}"].astype(np.int64) for k in range(H)]
        poses = dataio.read_pose(base + ".pred.pose")
        return pts, idx, poses

    record = evaluate_dataset(predictor, samples)
    write_report(os.path.join(outdir, "report.tsv"), record)
    for name, msg in record.failures.items():
        log.warning("%s: %s", name, msg)
    agg = record.aggregate()
    log.info("part accuracy %.4f over %d objects", agg["part_accuracy"], agg["objects"])


def _write_losses(path, losses):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(f"{k}\t{v!r}\n" for k, v in enumerate(losses))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "assemble": cmd_assemble,
    "interpolate": cmd_interpolate,
    "symmetry-report": cmd_symmetry_report,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------
# Entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="rpflow", description="Rectified point flow for multi-part assembly.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed for all randomness (default 0)")
        p.add_argument("--out", default="runs", help="parent directory for the run directory")
        p.add_argument("--threads", type=int, default=None, help="cap on torch worker threads")
        for key, spec in schema.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=spec.help or None)
    return parser


def _setup_logging():
    level = os.environ.get("RPF_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"RPF_LOG must be one of error, info, debug; got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(f"--threads must be >= 1, got {args.threads}")
            import torch

            torch.set_num_threads(args.threads)
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in SCHEMAS[args.command]}
        cfg = resolve_config(args.command, file_values, flags, args.seed)
        outdir = run_directory(args.out, args.command, cfg)
        text = format_config(args.command, cfg)
        with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        log.info("resolved config:\n%s", text.rstrip())
        COMMANDS[args.command](cfg, outdir)
    except ConfigError as e:
        print(f"ConfigError: {e}", file=sys.stderr)
        return 2
    except (IoError, ParseError, VersionMismatch, OSError) as e:
        print(f"IoError: {e}", file=sys.stderr)
        return 3
    except RPFError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 4
    print(outdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
