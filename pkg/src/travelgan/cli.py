"""Command-line entry point: synth | train | generate | eval | analyze.

Configuration is a flat ``key = value`` file (``#`` starts a comment) plus
``key=value`` overrides after the command. Precedence, lowest first:
command defaults, ``--config`` file, global flags, overrides. Every run
writes ``resolved_config.txt`` into its output directory; feeding that file
back with ``--config`` reproduces the run.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .data import (DataError, DatasetSpec, empty_record, export_domain, full_board_path, gen_domain,
                   load_factors, load_image_folder, manipulation_sequence, render_factors, save_png,
                   to_tensor, to_uint8, to_unit)
from .networks import ArchitectureSpec, ConfigError
from .losses import LossConfig
from .trainer import DirectorySink, TrainingConfig, TrainingDiverged, direction_names, train

log = logging.getLogger("travelgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SOURCE_DOMAIN = {"xy": "beads", "yx": "grid"}

_COMMON = {"seed": 0, "out": ""}
DEFAULTS = {
    "synth": {**_COMMON, "count": 512, "count_x": -1, "count_y": -1, "image_size": 32,
              "min_objects": 3, "max_objects": 6},
    "train": {**_COMMON, "data_x": "", "data_y": "", "image_size": 32, "base_filters": 16, "latent_dim": 1000,
              "batch_size": 16, "steps": 3000, "directions": "both", "siamese_sharing": "per_direction",
              "margin": 1.0, "dist_metric": "cosine", "l2_weight": 0.0, "adv_weight": 1.0,
              "travel_weight": 1.0, "lr": 0.0002, "beta1": 0.5, "beta2": 0.9, "checkpoint_every": 500,
              "log_every": 10, "resume": ""},
    "generate": {**_COMMON, "checkpoint": "", "input": "", "manipulation": False, "direction": "xy",
                 "image_size": 0, "limit": 0},
    "eval": {**_COMMON, "checkpoint": "", "data_x": "", "data_y": "", "metrics": "all", "limit": 256,
             "dscore_train_steps": 200, "extractor": "seeded_random_convnet", "extractor_seed": 1234,
             "feature_dim": 64},
    "analyze": {**_COMMON, "checkpoint": "", "mode": "pca", "data_x": "", "data_y": "", "direction": "xy",
                "limit": 64, "tile": 256},
}


class UsageError(Exception):
    pass


# --- config ----------------------------------------------------------------------


def _coerce(key, raw, default):
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None
    return str(raw)


def parse_config_text(text, source="config"):
    """Flat ``key = value`` lines -> dict of raw strings."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_config(command, cfg):
    lines = [f"# travelgan {__version__} resolved configuration", f"command = {command}"]
    lines += [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def resolve_config(command, config_path=None, overrides=(), seed=None, out=None):
    defaults = DEFAULTS[command]
    raw = {}
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise UsageError(f"config file {p} not found")
        raw.update(parse_config_text(p.read_text(), str(p)))
        file_cmd = raw.pop("command", command)
        if file_cmd != command:
            raise UsageError(f"config file {p} is for command {file_cmd!r}, not {command!r}")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = dict(defaults)
    for k, v in raw.items():
        cfg[k] = _coerce(k, v, defaults[k])
    if not cfg["out"]:
        cfg["out"] = f"travelgan_out/{command}"
    return cfg


def _prepare_out(cfg, force):
    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing_dir(path, key):
    if not path:
        raise UsageError(f"{key} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{key}: dataset path {p} does not exist")
    return p


def _load_set(path, key, d, limit=0):
    p = _existing_dir(path, key)
    imgs, manifest = load_image_folder(p, d)
    factors = load_factors(p)
    if limit:
        imgs = imgs[:limit]
        factors = factors[:limit] if factors else factors
    return np.stack(imgs), factors, manifest


def _load_state(cfg, image_size=0):
    if not cfg["checkpoint"]:
        raise UsageError("checkpoint is required")
    p = Path(cfg["checkpoint"])
    if not p.is_file():
        raise UsageError(f"checkpoint {p} does not exist")
    state = load_checkpoint(p)
    d = state.config.arch.image_size
    if image_size and image_size != d:
        raise CheckpointError(f"checkpoint image size {d} is incompatible with requested image_size {image_size}")
    return state


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _image_grid(pairs):
    """Rows of (input | output) uint8 HWC images -> one image."""
    rows = [np.concatenate(p, axis=1) for p in pairs]
    return np.concatenate(rows, axis=0)


# --- commands --------------------------------------------------------------------


def cmd_synth(cfg, out):
    counts = {"x": cfg["count_x"] if cfg["count_x"] >= 0 else cfg["count"],
              "y": cfg["count_y"] if cfg["count_y"] >= 0 else cfg["count"]}
    result = {}
    for tag, kind in (("x", "beads"), ("y", "grid")):
        if counts[tag] <= 0:
            raise DataError(f"domain_{tag}: count must be positive, got {counts[tag]}")
        spec = DatasetSpec(kind=kind, count=counts[tag], seed=cfg["seed"], image_size=cfg["image_size"],
                           min_objects=cfg["min_objects"], max_objects=cfg["max_objects"])
        imgs, recs = gen_domain(spec)
        export_domain(imgs, recs, out / f"domain_{tag}")
        result[f"domain_{tag}"] = len(imgs)
    return result


def cmd_train(cfg, out):
    d = cfg["image_size"]
    dx, _, _ = _load_set(cfg["data_x"], "data_x", d)
    dy, _, _ = _load_set(cfg["data_y"], "data_y", d)
    config = TrainingConfig(
        arch=ArchitectureSpec(image_size=d, base_filters=cfg["base_filters"], latent_dim=cfg["latent_dim"]),
        loss=LossConfig(margin=cfg["margin"], dist_metric=cfg["dist_metric"], l2_weight=cfg["l2_weight"],
                        adv_weight=cfg["adv_weight"], travel_weight=cfg["travel_weight"]),
        batch_size=cfg["batch_size"], steps=cfg["steps"], seed=cfg["seed"], directions=cfg["directions"],
        siamese_sharing=cfg["siamese_sharing"], checkpoint_every=cfg["checkpoint_every"],
        log_every=cfg["log_every"], lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"])
    state = None
    if cfg["resume"]:
        state = load_checkpoint(cfg["resume"], expected_config=config)
    sink = DirectorySink(out)
    t0 = time.perf_counter()
    try:
        state = train(config, dx, dy, sink=sink, state=state)
    except TrainingDiverged as exc:
        (out / "diverged.json").write_text(json.dumps(exc.diagnostics, indent=2, sort_keys=True, default=float))
        raise
    finally:
        sink.close()
    return {"steps": state.step, "seconds": round(time.perf_counter() - t0, 2),
            "final_checkpoint": str(out / "final.trvl")}


def _run_generator(net, x):
    from .evaluation.analysis import _numpy_fn
    return _numpy_fn(net)(np.asarray(x, dtype=np.float32))


def cmd_generate(cfg, out):
    state = _load_state(cfg, cfg["image_size"])
    d = state.config.arch.image_size
    names = direction_names(state.config)
    if cfg["direction"] not in names:
        raise UsageError(f"direction {cfg['direction']!r} not trained in this checkpoint ({list(names)})")
    gen = state.generator(cfg["direction"])
    if cfg["manipulation"]:
        domain = SOURCE_DOMAIN[cfg["direction"]]
        path = full_board_path()
        x = to_tensor(np.stack(manipulation_sequence(empty_record(), path, domain, d)))
        (out / "sequence").mkdir()
        for i, img in enumerate(to_uint8(x)):
            save_png(img, out / "sequence" / f"frame_{i}.png")
        (out / "sequence" / "path.json").write_text(json.dumps([list(c) for c in path]))
    else:
        if not cfg["input"]:
            raise UsageError("generate needs input=FOLDER or manipulation=true")
        x, _, _ = _load_set(cfg["input"], "input", d, cfg["limit"])
    y = _run_generator(gen, x)
    (out / "outputs").mkdir()
    xs, ys = to_uint8(x), to_uint8(y)
    for i, img in enumerate(ys):
        save_png(img, out / "outputs" / f"{i:05d}.png")
    save_png(_image_grid(list(zip(xs, ys))), out / "grid.png")
    return {"outputs": len(ys), "grid": str(out / "grid.png")}


def cmd_eval(cfg, out):
    from .evaluation import METRICS, EvalOptions, FeatureExtractorSpec, evaluate_state

    state = _load_state(cfg)
    d = state.config.arch.image_size
    x, fx_, _ = _load_set(cfg["data_x"], "data_x", d, cfg["limit"])
    y, fy_, _ = _load_set(cfg["data_y"], "data_y", d, cfg["limit"])
    metrics = METRICS if cfg["metrics"] in ("all", "") else tuple(m.strip() for m in cfg["metrics"].split(","))
    try:
        opts = EvalOptions(metrics=metrics, seed=cfg["seed"], dscore_train_steps=cfg["dscore_train_steps"],
                           extractor=FeatureExtractorSpec(cfg["extractor"], cfg["extractor_seed"],
                                                          cfg["feature_dim"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if opts.extractor.kind != "seeded_random_convnet":
        raise UsageError("eval: only the seeded_random_convnet extractor can be selected from the command line")
    report = evaluate_state(state, x, y, fx_, fy_, opts)
    (out / "eval_report.json").write_text(report.to_json())
    return report.headline()


def _save_heatmap(values, path, title=""):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(3, 3), dpi=80)
    im = ax.imshow(values, cmap="magma")
    ax.set_axis_off()
    ax.set_title(title, fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path)
    plt.close(fig)


def _save_scatter(groups, path, xlabel, ylabel):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4), dpi=80)
    for label, (a, b) in groups.items():
        ax.scatter(a, b, s=6, alpha=0.6, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(groups) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_analyze(cfg, out):
    from .evaluation import embed, pairwise_distance_correlation, pca_projection, salience_map

    state = _load_state(cfg)
    d = state.config.arch.image_size
    names = direction_names(state.config)
    direction = cfg["direction"]
    if direction not in names:
        raise UsageError(f"direction {direction!r} not trained in this checkpoint ({list(names)})")
    mode = cfg["mode"]
    if mode not in ("salience", "pca", "distances"):
        raise UsageError(f"mode must be salience, pca or distances, got {mode!r}")
    src_key = "data_x" if direction == "xy" else "data_y"
    gen, siamese = state.generator(direction), state.siamese(direction)

    if mode == "salience":
        x, _, manifest = _load_set(cfg[src_key], src_key, d, cfg["limit"])
        for i, img in enumerate(x):
            s = salience_map(gen, img, tile=cfg["tile"])
            np.savetxt(out / f"salience_{i:05d}.csv", s, delimiter=",", fmt="%.8g")
            _save_heatmap(s, out / f"salience_{i:05d}.png", manifest["files"][i])
        return {"maps": len(x)}

    if mode == "pca":
        x, _, _ = _load_set(cfg["data_x"], "data_x", d, cfg["limit"])
        y, _, _ = _load_set(cfg["data_y"], "data_y", d, cfg["limit"])
        groups = {("x", "real"): x, ("y", "real"): y}
        if "xy" in names:
            groups[("y", "generated")] = _run_generator(state.generator("xy"), x)
        if "yx" in names:
            groups[("x", "generated")] = _run_generator(state.generator("yx"), y)
        keys = list(groups)
        lat = [embed(siamese, groups[k]) for k in keys]
        res = pca_projection(np.concatenate(lat), k=2)
        rows, plot, start = [], {}, 0
        for k, z in zip(keys, lat):
            pts = res.points[start:start + len(z)]
            start += len(z)
            rows += [[f"{p[0]:.8g}", f"{p[1]:.8g}", k[0], k[1]] for p in pts]
            plot[f"{k[0]} {k[1]}"] = (pts[:, 0], pts[:, 1])
        _write_csv(out / "pca.csv", ["pc1", "pc2", "domain", "kind"], rows)
        _save_scatter(plot, out / "pca.png", "PC1", "PC2")
        (out / "pca_summary.json").write_text(json.dumps(
            {"explained_ratio": res.explained_ratio.tolist(), "rank_deficient": res.rank_deficient}, indent=2))
        return {"points": len(rows), "explained_ratio": res.explained_ratio.tolist()}

    x, factors, _ = _load_set(cfg[src_key], src_key, d, cfg["limit"])
    g = _run_generator(gen, x)
    panels = {}
    if factors is not None:
        target = "grid" if direction == "xy" else "beads"
        truth = to_tensor(np.stack([render_factors(r, target, d) for r in factors]))
        panels["pixel_pixel"] = pairwise_distance_correlation(to_unit(x), to_unit(truth), "pixel")
    panels["pixel_genpixel"] = pairwise_distance_correlation(to_unit(x), to_unit(g), "pixel")
    panels["latent_latent"] = pairwise_distance_correlation(x, g, "latent", siamese=siamese)
    summary = {}
    for name, res in panels.items():
        _write_csv(out / f"distances_{name}.csv", ["dist_real", "dist_other"],
                   [[f"{a:.8g}", f"{b:.8g}"] for a, b in zip(res.dist_a, res.dist_b)])
        _save_scatter({name: (res.dist_a, res.dist_b)}, out / f"distances_{name}.png", "real", "paired")
        summary[name] = {"r2": None if not res.ok else res.r2, "pairs": res.n_pairs, "flag": res.flag}
    (out / "distances_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "generate": cmd_generate, "eval": cmd_eval,
            "analyze": cmd_analyze}
HELP = {
    "synth": "write the synthetic beads (domain_x) and grid (domain_y) datasets",
    "train": "train generators, discriminators and siamese networks",
    "generate": "translate a folder of images or the 9-frame manipulation sequence",
    "eval": "compute the evaluation report for a checkpoint",
    "analyze": "salience maps, siamese-space PCA or pairwise-distance scatter data",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="travelgan", description="Unpaired domain translation toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name],
                           epilog="keys: " + ", ".join(sorted(DEFAULTS[name])))
        if name == "eval":
            p.add_argument("--metric", action="append", help="restrict to this metric (repeatable)")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        overrides = list(args.overrides)
        if getattr(args, "metric", None):
            overrides.append("metrics=" + ",".join(args.metric))
        cfg = resolve_config(args.command, args.config, overrides, args.seed, args.out)
        out = _prepare_out(cfg, args.force)
        (out / "resolved_config.txt").write_text(format_config(args.command, cfg))
        result = COMMANDS[args.command](cfg, out)
    except (UsageError, ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
