"""``cogan`` command line: synth-data, train, evaluate, ablate, report.

Exit codes: 0 success, 1 validation error (bad arguments, config or inputs),
2 runtime failure. Every command that writes an output directory echoes the
fully resolved configuration to ``<out>/resolved_config.json`` and keeps an
``INCOMPLETE`` marker there until it finishes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .data import DatasetManifest, SyntheticSpec, generate_synthetic_dataset
from .evaluation import emit_report, evaluate_encoders, load_report
from .models import load_encoders
from .training import (
    TrainConfig,
    WORKERS_ENV,
    apply_overrides,
    default_config_dict,
    run_ablation_grid,
    train_and_evaluate,
    train_cogan,
)

log = logging.getLogger("cogan")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
INCOMPLETE = "INCOMPLETE"


class ValidationError(Exception):
    """Raised for problems detected before any work starts (exit code 1)."""


# -- config resolution ------------------------------------------------------


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def resolve_config(config_path: str | None, overrides: list[str], profile: str | None = None) -> TrainConfig:
    """Defaults, then the JSON file, then ``--set`` overrides; the seed must come from the latter two."""
    doc = json.loads(Path(config_path).read_text()) if config_path else {}
    if not isinstance(doc, dict):
        raise ValidationError(f"{config_path}: top level must be a JSON object")
    profile = profile or doc.get("profile", "desk")
    base = default_config_dict(0, profile)
    del base["seed"]
    seeded = "seed" in doc or any(o.split("=", 1)[0].strip() == "seed" for o in overrides)
    if not seeded:
        raise ValidationError("config must set 'seed' (in the config file or via --set seed=N)")
    base["seed"] = None
    try:
        merged = apply_overrides(base, _flatten(doc))
        merged = apply_overrides(merged, overrides)
        return TrainConfig.from_dict(merged)
    except KeyError as exc:
        raise ValidationError(exc.args[0] if exc.args else str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid config: {exc}") from exc


def _load_manifest(path: str) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise ValidationError(f"manifest not found: {p}")
    try:
        return DatasetManifest.load(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"{p}: {exc}") from exc


def _begin(out: Path, command: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / INCOMPLETE).write_text(f"{command} started\n")
    (out / "resolved_config.json").write_text(json.dumps({"command": command, **resolved}, indent=2) + "\n")


def _finish(out: Path) -> None:
    (out / INCOMPLETE).unlink(missing_ok=True)


# -- commands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    try:
        spec = SyntheticSpec(args.classes, args.samples, args.image_size, seed=args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise ValidationError(f"{out} exists and is not empty (use --overwrite)")
    manifest = generate_synthetic_dataset(spec, out, args.train_subjects, args.profile, overwrite=args.overwrite)
    print(
        f"wrote {len(manifest.records)} images for {args.classes} classes to {out} "
        f"({len(manifest.classes('TRAIN'))} TRAIN / {len(manifest.classes('TEST'))} TEST classes)"
    )
    return EXIT_OK


def _resolved(args, config: TrainConfig | None = None, **extra) -> dict:
    doc = {"argv": sys.argv[1:] if args.argv is None else args.argv, **extra}
    if config is not None:
        doc["config"] = config.to_dict()
    return doc


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.set, args.profile)
    manifest = _load_manifest(args.data)
    out = Path(args.out)
    _begin(out, "train", _resolved(args, config, data=str(Path(args.data).resolve())))
    if args.no_eval:
        train_cogan(config, manifest, out)
    else:
        _, report = train_and_evaluate(config, manifest, out)
        print(f"TEST AUC {report.auc:.4f}  EER {report.eer:.4f}  ({report.counts[0]} genuine / {report.counts[1]} imposter)")
    _finish(out)
    return EXIT_OK


def _checkpoint_dir(path: Path) -> Path:
    if (path / "checkpoints" / "latest").is_file():
        return path / "checkpoints" / (path / "checkpoints" / "latest").read_text().strip()
    return path


def cmd_evaluate(args) -> int:
    ckpt = _checkpoint_dir(Path(args.checkpoint))
    if not (ckpt / "config.json").is_file():
        raise ValidationError(f"no checkpoint at {ckpt}")
    manifest = _load_manifest(args.data)
    out = Path(args.out)
    _begin(out, "evaluate", _resolved(args, checkpoint=str(ckpt.resolve()), split=args.split, batch_size=args.batch_size))
    model_cfg, enc_v, enc_i = load_encoders(ckpt)
    report, scores, _ = evaluate_encoders(
        (enc_v, enc_i), manifest, args.split, args.batch_size, config={"checkpoint": str(ckpt), "model": model_cfg.to_dict()}
    )
    emit_report(report, out, scores if args.scores else None)
    print(f"{args.split} AUC {report.auc:.4f}  EER {report.eer:.4f}  FRR@1% {report.frr_at_far_1pct:.4f}  FRR@10% {report.frr_at_far_10pct:.4f}")
    _finish(out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_config(args.config, args.set, args.profile)
    manifest = _load_manifest(args.data)
    out = Path(args.out)
    _begin(out, "ablate", _resolved(args, config, grid=args.grid, data=str(Path(args.data).resolve())))
    manifest_path = Path(args.data)
    manifest_path = manifest_path / "manifest.json" if manifest_path.is_dir() else manifest_path
    table = run_ablation_grid(config, manifest, args.grid, out, workers=args.workers, manifest_path=manifest_path)
    print(format_ablation(table))
    _finish(out)
    return EXIT_OK


def format_ablation(table: dict) -> str:
    lines = [f"ablation grid {table['grid']} (seed {table['seed']})"]
    if table["grid"] == "table3":
        cols = table["cols"]["lambda_C"]
        lines.append("|z| \\ lambda_C " + "".join(f"{c:>9g}" for c in cols))
        for dim, row in zip(table["rows"]["embedding_dim"], table["auc"]):
            lines.append(f"{dim:>14d} " + "".join(f"{a:9.4f}" for a in row))
    elif table["grid"] == "table4":
        lines.append("lambda_C lambda_A lambda_R lambda_P      AUC")
        for *lam, auc in table["rows"]:
            lines.append("".join(f"{v:>9g}" for v in lam) + f"{auc:9.4f}")
    else:
        for cell in table["cells"]:
            lines.append(f"{cell['key']:<40s} AUC {cell['auc']:.4f}")
    return "\n".join(lines)


def _plot_history(history: list[dict], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    for key in ("contrastive", "adversarial_D", "adversarial_G", "reconstruction", "perceptual", "total"):
        vals = [h[key] for h in history]
        if any(vals):
            ax.plot(epochs, vals, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise ValidationError(f"{run} is not a directory")
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"run {run}"]
    if (run / INCOMPLETE).exists():
        lines.append("WARNING: run is marked INCOMPLETE")
    found = False
    hist_path = run / "history.jsonl"
    if hist_path.is_file():
        history = [json.loads(line) for line in hist_path.read_text().splitlines() if line.strip()]
        if history:
            found = True
            first, last = history[0], history[-1]
            lines.append(f"epochs {len(history)}; active terms {', '.join(last.get('active_terms', []))}")
            lines.append(f"total loss {first['total']:.4f} -> {last['total']:.4f}")
            lines.append(f"contrastive {first['contrastive']:.4f} -> {last['contrastive']:.4f}")
            _plot_history(history, out / "losses.png")
    for rp in sorted(run.rglob("report.json")):
        found = True
        r = load_report(rp)
        lines.append(
            f"{rp.parent.relative_to(run) if rp.parent != run else '.'}: AUC {r.auc:.4f} EER {r.eer:.4f} "
            f"FRR@1% {r.frr_at_far_1pct:.4f} FRR@10% {r.frr_at_far_10pct:.4f} pairs {r.counts[0]}/{r.counts[1]}"
        )
    tp = run / "ablation_table.json"
    if tp.is_file():
        found = True
        lines.append(format_ablation(json.loads(tp.read_text())))
    cv = run / "cv_report.json"
    if cv.is_file():
        found = True
        doc = json.loads(cv.read_text())
        for p in doc["points"]:
            lines.append(f"cv {p['key']}: mean AUC {p['mean_auc']:.4f} +- {p['std_auc']:.4f}")
        lines.append(f"cv selected: {doc['selected']}")
    if not found:
        raise ValidationError(f"{run} holds no history, report, ablation table or CV report")
    text = "\n".join(lines)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cogan", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="render a deterministic synthetic VIS/NIR corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=80)
    s.add_argument("--samples", type=int, default=6, help="samples per class and spectrum")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--image-size", type=int, default=64)
    s.add_argument("--train-subjects", type=float, default=None, help="default: half of the subjects")
    s.add_argument("--profile", default="desk", choices=["desk", "paper"])
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_synth_data)

    def config_args(sp):
        sp.add_argument("--config", help="JSON config (keys as in resolved_config.json)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
        sp.add_argument("--profile", choices=["desk", "paper"], default=None)
        sp.add_argument("--data", required=True, help="manifest.json or the dataset directory holding it")
        sp.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train and (by default) evaluate on the TEST split")
    config_args(t)
    t.add_argument("--no-eval", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score the open-world protocol with a checkpoint's encoders")
    e.add_argument("--checkpoint", required=True, help="checkpoint directory or a run directory")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="TEST", choices=["TEST", "TRAIN"])
    e.add_argument("--batch-size", type=int, default=128)
    e.add_argument("--scores", action="store_true", help="also write scores.csv")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help=f"run an ablation grid (workers from --workers or ${WORKERS_ENV})")
    config_args(a)
    a.add_argument("--grid", required=True, choices=["table3", "table4"])
    a.add_argument("--workers", type=int, default=None)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="summarize stored artifacts of a run directory")
    r.add_argument("--run", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime failure
        out = getattr(args, "out", None)
        if out and Path(out).is_dir() and args.command != "report":
            (Path(out) / INCOMPLETE).write_text(f"{args.command} failed: {exc!r}\n{traceback.format_exc()}")
        print(f"runtime failure: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
