"""Command-line entry point: ``mscl <command> [flags]``.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

import argparse
import dataclasses
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig, build_config, parse_overrides

log = logging.getLogger("mscl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad flags are a validation error, not argparse's default exit 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def version_string():
    """``git describe``-style string; the package version when git is unavailable."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"v{__version__}-g{desc}" if desc else f"v{__version__}"


# ----------------------------------------------------------------- commands


def cmd_gen_data(args):
    from .flow_ops import flow_to_rgb, write_ppm
    from .synth import corpus_checksum, default_classes, generate_corpus, read_video

    if args.frames < 2:
        raise ValueError(f"--frames must be at least 2, got {args.frames}")
    if args.per_class < 1:
        raise ValueError(f"--per-class must be positive, got {args.per_class}")
    entries = generate_corpus(
        args.out, default_classes(args.classes), per_class=args.per_class,
        train_fraction=args.train_fraction, frames=args.frames, size=args.size,
        stride=args.stride, seed=args.seed, force=args.force,
    )
    for e in entries[: args.preview]:
        v = read_video(Path(args.out, e.path))
        stem = Path(args.out, "preview", Path(e.path).stem)
        stem.parent.mkdir(exist_ok=True)
        write_ppm(f"{stem}_rgb.ppm", v.frames[0])
        write_ppm(f"{stem}_flow.ppm", flow_to_rgb(v.flows[0]))
    n_train = sum(e.split == "train" for e in entries)
    print(f"corpus {args.out}: {args.classes} classes, {len(entries)} videos "
          f"({n_train} train / {len(entries) - n_train} test)")
    print(f"checksum {corpus_checksum(args.out)}")
    return 0


def cmd_score_clips(args):
    from .flow_ops import default_block
    from .motion_sampling import mds_select, score_clips
    from .synth import read_manifest, read_video

    entries = read_manifest(args.corpus)
    if args.split != "all":
        entries = [e for e in entries if e.split == args.split]
    lines = ["video\tstart\tscore\tselected"]
    for e in entries:
        v = read_video(Path(args.corpus, e.path))
        r = args.block or default_block(v.flows.shape[1])
        scores = score_clips(v.flows, args.clip_len, args.stride, r)
        chosen = set(mds_select(scores))
        for s in scores:
            lines.append(f"{e.path}\t{s.start}\t{s.score!r}\t{int(s.start in chosen)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(lines) - 1} clip scores to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _config_from(args):
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, "cfg_" + f.name, None)
        if v is not None:
            overrides[f.name] = v
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides.update(parse_overrides({k: v}, source="--set"))
    if args.seed is not None:
        overrides["seed"] = args.seed
    return build_config(args.config, overrides)


def cmd_pretrain(args):
    from .checkpoint import save_model
    from .synth import corpus_checksum, load_split
    from .training import pretrain

    config = _config_from(args)
    videos = load_split(args.corpus, "train", verify=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, metrics = pretrain(config, videos)
    paths = {"checkpoint": out / "model.ckpt", "metrics": out / "metrics.tsv", "manifest": out / "run.json"}
    save_model(paths["checkpoint"], model)
    metrics.write(paths["metrics"])
    manifest = {
        "version": version_string(),
        "config": dataclasses.asdict(config),
        "corpus": str(args.corpus),
        "corpus_checksum": corpus_checksum(args.corpus),
        "outputs": {k: str(v) for k, v in paths.items()},
        "wall_clock_s": round(metrics.wall_clock, 3),
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    first, last = metrics.rows[0][-1], metrics.rows[-1][-1]
    print(f"pretrained {len(metrics.rows)} steps in {metrics.wall_clock:.1f}s; total loss {first:.4f} -> {last:.4f}")
    print(f"wrote {paths['checkpoint']}, {paths['metrics']}, {paths['manifest']}")
    return 0


def _encoder(args):
    """``(query RGB encoder, config)`` from ``--checkpoint``, or a random init."""
    from .checkpoint import load_model
    from .training import MSCLModel

    if args.checkpoint:
        model = load_model(args.checkpoint)
        return model.rgb, model.config
    config = _config_from(args)
    return MSCLModel(config).rgb, config


def _features(args, encoder, config):
    from .evaluation import embed_videos
    from .synth import load_split

    train, test = load_split(args.corpus, "train"), load_split(args.corpus, "test")
    if not train or not test:
        raise ValueError(f"{args.corpus}: both train and test splits must be non-empty")
    feats = [embed_videos(encoder, vs, config.clip_len, config.stride) for vs in (train, test)]
    return feats[0], [v.label for v in train], feats[1], [v.label for v in test]


def cmd_probe(args):
    from .evaluation import linear_probe

    enc, config = _encoder(args)
    xtr, ytr, xte, yte = _features(args, enc, config)
    acc = linear_probe(xtr, ytr, xte, yte, epochs=args.probe_epochs, lr=args.probe_lr, seed=args.seed or 0)
    print(f"linear probe top-1 {acc:.4f}")
    return 0


def cmd_retrieve(args):
    from .evaluation import retrieval

    enc, config = _encoder(args)
    xtr, ytr, xte, yte = _features(args, enc, config)
    res = retrieval(xtr, ytr, xte, yte, tuple(args.k))
    for k in args.k:
        print(f"R@{k}\t{res[k]:.4f}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import EPS, check_losses

    errors = check_losses(seed=args.seed or 0, eps=EPS)
    worst = 0.0
    for name, err in errors.items():
        ok = err < args.tol
        worst = max(worst, err)
        print(f"{name:16s} rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    if worst >= args.tol or not np.isfinite(worst):
        print(f"gradient check failed: worst relative error {worst:.3e} >= {args.tol:g}", file=sys.stderr)
        return 2
    return 0


def cmd_plot(args):
    from .plot import metrics_svg
    from .training import read_metrics

    rows = read_metrics(args.metrics)
    if not rows:
        raise ValueError(f"{args.metrics}: no metric rows to plot")
    Path(args.out).write_text(metrics_svg(rows))
    print(f"wrote {args.out} ({len(rows)} steps)")
    return 0


# ----------------------------------------------------------------- parser


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file (flags override it)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra config override, repeatable")
    g = p.add_argument_group("training config (override --config)")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = f.type if isinstance(f.type, type) else type(f.default)
        conv = (lambda name, k: lambda raw: parse_overrides({name: raw}, source=flag)[name])(f.name, kind)
        g.add_argument(flag, dest="cfg_" + f.name, type=conv, default=None, metavar=kind.__name__.upper(),
                       help=f"default {f.default!r}")


def _add_eval_flags(p):
    p.add_argument("--corpus", required=True, help="corpus directory with train/ and test/ splits")
    p.add_argument("--checkpoint", help="pre-trained checkpoint; omitted means a random-init encoder")
    _add_config_flags(p)


def build_parser():
    parser = _Parser(prog="mscl", description="Motion-sensitive contrastive learning on synthetic video.")
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.add_argument("--preview", type=int, default=0, help="dump PPM previews of the first N videos")
    p.set_defaults(func=cmd_gen_data, seed_default=0)

    p = sub.add_parser("score-clips", help="motion-differential score of every candidate clip")
    p.add_argument("--corpus", required=True)
    p.add_argument("--clip-len", type=int, default=8)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--block", type=int, default=0, help="coarsening block; 0 derives it from the frame size")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--out", help="TSV path (stdout when omitted)")
    p.set_defaults(func=cmd_score_clips)

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run directory for checkpoint, metrics and manifest")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    _add_eval_flags(p)
    p.add_argument("--probe-epochs", type=int, default=100)
    p.add_argument("--probe-lr", type=float, default=0.1)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("retrieve", help="k-NN retrieval recall")
    _add_eval_flags(p)
    p.add_argument("--k", type=int, nargs="+", default=[1, 5, 10])
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render a metrics TSV to SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=None, help="random seed (deterministic under a fixed value)")
    return parser


def main(argv=None):
    from .training import NumericalError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if getattr(args, "seed_default", None) is not None and args.seed is None:
        args.seed = args.seed_default
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
