"""Command line entry point: ``glandseg <subcommand> ...``.

Exit codes: 0 success, 2 validation or configuration error, 3 I/O error.
Diagnostics go to stderr; machine-readable output only to files. Each run
also writes a replayable run manifest next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentConfig, augment_sample
from .core import (
    FormatError,
    MetricConfig,
    ValidationError,
    atomic_write_bytes,
    load_image,
    load_instance_map,
    load_probability_map,
    load_score_table,
    save_boxes,
    save_count_map,
    save_image,
    save_instance_map,
    save_mask,
    save_probability_map,
)
from .labelgen import derive_all, instance_separated_mask
from .metrics import aggregate, evaluate_image, rank_table, ranked_table_csv
from .synth import SynthConfig, make_sample

log = logging.getLogger("glandseg")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3

CHANNEL_SUFFIXES = ("_fg.png", "_edge.png", "_box.png")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(defaults: dict, config: dict, flags: dict) -> dict:
    """defaults <- config file <- explicit flags (flags win)."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return out


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _run_manifest(path, args, resolved: dict, inputs, outputs, started: float) -> None:
    manifest = {
        "subcommand": args.command,
        "argv": getattr(args, "_argv", None),
        "config": resolved,
        "seed": resolved.get("seed", getattr(args, "seed", None)),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "duration_seconds": round(time.time() - started, 3),
    }
    _write_json(path, manifest)


def _png_files(directory, suffix: str = ".png") -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.name.endswith(suffix))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_derive(args) -> int:
    started = time.time()
    cfg = _resolve({"edge_radius": 3, "border": "replicate"}, _load_config(args.config),
                   {"edge_radius": args.edge_radius, "border": args.border})
    src = Path(args.instances)
    files = _png_files(src) if src.is_dir() else [src]
    out = Path(args.out)
    outputs = []
    for f in files:
        z = load_instance_map(f)
        edges, boxes, counts = derive_all(z, cfg["edge_radius"], cfg["border"])
        stem = f.name[:-4]
        targets = (out / f"{stem}_edge.png", out / f"{stem}_boxes.json", out / f"{stem}_boxcount.png")
        save_mask(edges, targets[0])
        save_boxes(boxes, targets[1])
        save_count_map(counts, targets[2])
        outputs += targets
    _run_manifest(out / "run_manifest.json", args, cfg, files, outputs, started)
    return EXIT_OK


def _evaluate_one(item):
    name, gt_path, pred_path, cfg = item
    rec = evaluate_image(load_instance_map(gt_path), load_instance_map(pred_path), cfg)
    return {"name": name, **rec}


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = _resolve({"iou_threshold": 0.5, "detection_overlap_rule": "intersection_over_gt"},
                   _load_config(args.config),
                   {"iou_threshold": args.iou_threshold, "detection_overlap_rule": args.overlap_rule})
    mcfg = MetricConfig(**cfg)
    gt_files = _png_files(args.gt)
    if not gt_files:
        raise ValidationError(f"no PNG files in {args.gt}")
    items = []
    for g in gt_files:
        p = Path(args.pred) / g.name
        if not p.is_file():
            raise FileNotFoundError(f"prediction missing for {g.name}: {p}")
        items.append((g.name, g, p, mcfg))
    records = _pool_map(_evaluate_one, items, args.jobs)
    report = {
        "tool": "glandseg",
        "tool_version": __version__,
        "config": cfg,
        "aggregate": aggregate(records),
        "images": records,
    }
    _write_json(args.out, report)
    _run_manifest(Path(str(args.out) + ".manifest.json"), args, cfg,
                  [args.gt, args.pred], [args.out], started)
    return EXIT_OK


def cmd_rank(args) -> int:
    started = time.time()
    cfg = _resolve({"weight_a": 0.75, "weight_b": 0.25, "ties": "first"}, _load_config(args.config),
                   {"weight_a": args.weight_a, "weight_b": args.weight_b, "ties": args.ties})
    table = rank_table(load_score_table(args.scores), cfg["weight_a"], cfg["weight_b"], cfg["ties"])
    atomic_write_bytes(args.out, ranked_table_csv(table).encode())
    _run_manifest(Path(str(args.out) + ".manifest.json"), args, cfg, [args.scores], [args.out], started)
    return EXIT_OK


def _augment_one(item):
    index, stem, img_path, inst_path, cfg, out = item
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    img = load_image(img_path)
    z = load_instance_map(inst_path)
    written, variants = [], []
    for j, v in enumerate(augment_sample(img, [z], cfg, rng)):
        ip = Path(out) / f"{stem}_aug{j:02d}_image.png"
        zp = Path(out) / f"{stem}_aug{j:02d}_instances.png"
        save_image(v["image"], ip)
        save_instance_map(v["labels"][0], zp)
        written += [str(ip), str(zp)]
        variants.append({"name": f"{stem}_aug{j:02d}", "quarter_turns": v["quarter_turns"],
                         "hflip": v["hflip"], "k1": v["k1"]})
    return written, variants


def cmd_augment(args) -> int:
    started = time.time()
    defaults = {"strategy": "I", "crop_size": 400, "radial_k1": [-0.15, 0.15], "seed": 0}
    cfg = _resolve(defaults, _load_config(args.config),
                   {"strategy": args.strategy, "crop_size": args.crop, "seed": args.seed})
    acfg = AugmentConfig(cfg["strategy"], int(cfg["crop_size"]), tuple(cfg["radial_k1"]), int(cfg["seed"]))
    images = _png_files(args.input, "_image.png")
    if not images:
        raise ValidationError(f"no *_image.png files in {args.input}")
    items = []
    for i, ip in enumerate(images):
        stem = ip.name[: -len("_image.png")]
        zp = ip.with_name(f"{stem}_instances.png")
        if not zp.is_file():
            raise FileNotFoundError(f"missing instance map for {ip.name}: {zp}")
        items.append((i, stem, ip, zp, acfg, args.out))
    results = _pool_map(_augment_one, items, args.jobs)
    outputs = [p for written, _ in results for p in written]
    _write_json(Path(args.out) / "augment_manifest.json",
                {"config": cfg, "variants": [v for _, vs in results for v in vs]})
    _run_manifest(Path(args.out) / "run_manifest.json", args, cfg, images, outputs, started)
    return EXIT_OK


def _synth_one(item):
    cfg, index, out = item
    s = make_sample(cfg, index)
    stem = Path(out) / f"sample_{index:04d}"
    paths = {
        "image": f"{stem}_image.png",
        "instances": f"{stem}_instances.png",
        "fg": f"{stem}_fg.png",
        "edge": f"{stem}_edge.png",
        "box": f"{stem}_box.png",
    }
    save_image(s["image"], paths["image"])
    save_instance_map(s["instances"], paths["instances"])
    for plane, key in zip(s["channels"], ("fg", "edge", "box")):
        save_probability_map(plane, paths[key])
    return {"index": index, "instance_count": int(s["instances"].max()),
            "files": {k: Path(v).name for k, v in paths.items()}}


def cmd_synth(args) -> int:
    started = time.time()
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    scfg = SynthConfig.from_dict(config)
    if args.count < 0:
        raise ValidationError("--count must be non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _pool_map(_synth_one, [(scfg, i, out) for i in range(args.count)], args.jobs)
    _write_json(out / "manifest.json", {"config": scfg.to_dict(), "count": args.count, "samples": records})
    outputs = [out / f for r in records for f in r["files"].values()]
    _run_manifest(out / "run_manifest.json", args, scfg.to_dict(), [], outputs, started)
    return EXIT_OK


def load_channel_stack(directory, stem: str) -> np.ndarray:
    planes = [load_probability_map(Path(directory) / f"{stem}{s}") for s in CHANNEL_SUFFIXES]
    return np.stack(planes)


def _channel_stems(directory) -> list[str]:
    return [p.name[: -len(CHANNEL_SUFFIXES[0])] for p in _png_files(directory, CHANNEL_SUFFIXES[0])]


def cmd_train_fusion(args) -> int:
    from .fusionnet.io import save_model
    from .fusionnet.network import DEFAULT_DILATIONS, DEFAULT_WIDTHS, FusionNet, default_layers
    from .fusionnet.optim import TrainConfig, train

    started = time.time()
    defaults = {**asdict(TrainConfig()), "widths": list(DEFAULT_WIDTHS),
                "dilations": list(DEFAULT_DILATIONS)}
    cfg = _resolve(defaults, _load_config(args.config),
                   {"seed": args.seed, "iterations": args.iterations})
    widths, dilations = cfg["widths"], cfg["dilations"]
    tcfg = TrainConfig(**{k: v for k, v in cfg.items() if k not in ("widths", "dilations")})
    stems = _channel_stems(args.data)
    if not stems:
        raise ValidationError(f"no *{CHANNEL_SUFFIXES[0]} channel files in {args.data}")
    X, Y = [], []
    for stem in stems:
        X.append(load_channel_stack(args.data, stem))
        Y.append(instance_separated_mask(load_instance_map(Path(args.data) / f"{stem}_instances.png")))
    net = FusionNet(default_layers(X[0].shape[0], widths, dilations), seed=tcfg.seed)
    losses = train(net, X, Y, tcfg)
    out = Path(args.out)
    save_model(net, out, extra={"train_config": cfg, "n_samples": len(X)})
    _write_json(out / "loss_curve.json", {"loss": [float(v) for v in losses]})
    _run_manifest(out / "run_manifest.json", args, cfg, [args.data],
                  [out / "manifest.json", out / "weights.bin", out / "loss_curve.json"], started)
    return EXIT_OK


def cmd_infer_fusion(args) -> int:
    from .fusionnet.io import load_model
    from .fusionnet.network import forward
    from .postprocess import instances_from_probabilities

    started = time.time()
    cfg = _resolve({"min_area": 100, "connectivity": 4, "fill_holes": True, "edge_split": False,
                    "edge_threshold": 0.5},
                   _load_config(args.config),
                   {"min_area": args.min_area, "connectivity": args.connectivity,
                    "edge_split": args.edge_split or None,
                    "fill_holes": False if args.no_fill_holes else None})
    net = load_model(args.model)
    out = Path(args.out)
    outputs = []
    stems = _channel_stems(args.channels)
    if not stems:
        raise ValidationError(f"no *{CHANNEL_SUFFIXES[0]} channel files in {args.channels}")
    for stem in stems:
        x = load_channel_stack(args.channels, stem)
        p = forward(net, x)
        edges = (x[1] > cfg["edge_threshold"]).astype(np.uint8) if cfg["edge_split"] else None
        z = instances_from_probabilities(p, cfg["connectivity"], cfg["min_area"],
                                         cfg["fill_holes"], edges)
        path = out / f"{stem}_instances.png"
        save_instance_map(z, path)
        outputs.append(path)
    _run_manifest(out / "run_manifest.json", args, cfg, [args.model, args.channels], outputs, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; explicit flags override it")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="glandseg", description="Gland instance segmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"glandseg {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("derive", parents=[common], help="edge mask, boxes and box counts from instances")
    p.add_argument("--instances", required=True, help="16-bit instance PNG or a directory of them")
    p.add_argument("--out", required=True)
    p.add_argument("--edge-radius", type=int, dest="edge_radius")
    p.add_argument("--border", choices=("replicate", "constant"))
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("evaluate", parents=[common], help="object-level metrics for a prediction set")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou-threshold", type=float, dest="iou_threshold")
    p.add_argument("--overlap-rule", choices=("intersection_over_gt", "iou"), dest="overlap_rule")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", parents=[common], help="ranks, rank sum and weighted rank sum")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", default="ranked.csv")
    p.add_argument("--weight-a", type=float, dest="weight_a")
    p.add_argument("--weight-b", type=float, dest="weight_b")
    p.add_argument("--ties", choices=("first", "min"))
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("augment", parents=[common], help="offline augmentation (Strategy I or II)")
    p.add_argument("--strategy", choices=("I", "II"))
    p.add_argument("--crop", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", parents=[common], help="synthetic images, instances and channels")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-fusion", parents=[common], help="train the fusion network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("infer-fusion", parents=[common], help="fuse channels into instance maps")
    p.add_argument("--model", required=True)
    p.add_argument("--channels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-area", type=int, dest="min_area")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--edge-split", action="store_true", dest="edge_split")
    p.add_argument("--no-fill-holes", action="store_true", dest="no_fill_holes")
    p.set_defaults(func=cmd_infer_fusion)
    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    args._argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (FileNotFoundError, FormatError, PermissionError, IsADirectoryError) as exc:
        print(f"glandseg {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, TypeError) as exc:
        print(f"glandseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"glandseg {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
