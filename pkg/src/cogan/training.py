"""Multi-task training loop, cross-validation harness and ablation grid runner."""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .data import TEST, TRAIN, DatasetManifest, ImageBank, compute_channel_stats, sample_pair_batch
from .evaluation import emit_report, evaluate_encoders
from .losses import (
    ADVERSARIAL_MODES,
    NON_SATURATING,
    LossWeights,
    adversarial_loss_terms_from_logits,
    contrastive_loss,
    coupled,
    generator_adversarial_from_logits,
    perceptual_loss,
    reconstruction_loss,
    squared_parameter_norm,
    total_objective,
)
from .models import ModelBundle, ModelConfig, instantiate_models, save_checkpoint, state_hash

log = logging.getLogger(__name__)

WORKERS_ENV = "COGAN_WORKERS"


@dataclass
class TrainConfig:
    seed: int
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    profile: str = "desk"
    batch_pairs: int = 8
    epochs: int = 30
    steps_per_epoch: int | None = None  # None: one step per batch_pairs TRAIN images, both spectra counted
    learning_rate: float = 1e-3  # desk; the paper preset uses 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    genuine_prob: float = 0.5
    adversarial_mode: str = NON_SATURATING
    augment: bool = True
    deterministic: bool = True
    checkpoint_every: int = 1
    keep_checkpoints: int = 1
    eval_every: int = 0  # validation cadence when a validation split is given; 0 = final epoch only

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ValueError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        if self.model.profile != self.profile:
            self.model = replace(self.model, profile=self.profile)

    @classmethod
    def paper(cls, seed: int, **overrides) -> "TrainConfig":
        """The published recipe: 256 px, 100 pairs per batch, 300 epochs, lr 1e-4."""
        base = dict(
            seed=seed,
            profile="paper",
            model=ModelConfig.for_profile("paper"),
            batch_pairs=100,
            epochs=300,
            learning_rate=1e-4,
            weights=LossWeights(lambda_C=5.0),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise KeyError("config must set 'seed'")
        if isinstance(d.get("weights"), dict):
            wnames = {f.name for f in fields(LossWeights)}
            bad = set(d["weights"]) - wnames
            if bad:
                raise KeyError(f"unknown config keys: {sorted('weights.' + b for b in bad)}")
            d["weights"] = LossWeights(**d["weights"])
        profile = d.get("profile", "desk")
        if isinstance(d.get("model"), dict):
            m = d["model"]
            base = ModelConfig.for_profile(m.get("profile", profile)).to_dict()
            bad = set(m) - set(base)
            if bad:
                raise KeyError(f"unknown config keys: {sorted('model.' + b for b in bad)}")
            d["model"] = ModelConfig.from_dict({**base, **m, "profile": profile})
        elif "model" not in d:
            d["model"] = ModelConfig.for_profile(profile)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["weights"] = asdict(self.weights)
        d["model"] = self.model.to_dict()
        d["betas"] = list(self.betas)
        return d


def apply_overrides(config: dict, overrides: dict | list[str]) -> dict:
    """Apply dotted ``key=value`` overrides; every key must already exist in ``config``."""
    if isinstance(overrides, list):
        parsed = {}
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            try:
                parsed[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                parsed[key.strip()] = raw
        overrides = parsed
    out = copy.deepcopy(config)
    for key, value in overrides.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise KeyError(f"unknown config key {key!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise KeyError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return out


def default_config_dict(seed: int = 0, profile: str = "desk") -> dict:
    if profile == "paper":
        return TrainConfig.paper(seed).to_dict()
    return TrainConfig(seed=seed, profile=profile, model=ModelConfig.for_profile(profile)).to_dict()


class TrainingError(RuntimeError):
    pass


@dataclass
class CheckpointRecord:
    epoch: int
    path: Path | None
    hashes: dict[str, str]
    losses: dict[str, float]
    validation: dict | None = None


@dataclass
class TrainResult:
    bundle: ModelBundle
    history: list[dict]
    checkpoints: list[CheckpointRecord]
    run_dir: Path | None
    best_checkpoint: Path | None = None


def set_deterministic(enabled: bool = True) -> None:
    torch.use_deterministic_algorithms(enabled)
    torch.backends.cudnn.benchmark = False


def _active_terms(w: LossWeights) -> dict[str, bool]:
    return {
        "contrastive": w.lambda_C > 0,
        "adversarial": w.lambda_A > 0,
        "reconstruction": w.lambda_R > 0,
        "perceptual": w.lambda_P > 0,
    }


def _validate(bundle: ModelBundle, val_manifest: DatasetManifest, val_bank: ImageBank) -> dict:
    from .evaluation import compute_roc_metrics, enumerate_test_pairs, score_pairs

    pairs = enumerate_test_pairs(val_manifest)
    scores = score_pairs(bundle.encoders, pairs, val_manifest, bank=val_bank)
    rep = compute_roc_metrics(scores)
    return {"auc": rep.auc, "eer": rep.eer}


def train_cogan(
    config: TrainConfig,
    manifest: DatasetManifest,
    run_dir: str | Path | None = None,
    val_manifest: DatasetManifest | None = None,
    bank: ImageBank | None = None,
) -> TrainResult:
    """Alternate one discriminator step and one generator/encoder step per minibatch.

    Terms whose coefficient is zero are neither evaluated nor back-propagated and
    are logged as 0. When no adversarial term is active the discriminators are
    not updated; when no image-synthesis term is active only the encoders run.
    Weight decay enters the loss as ``lambda_L2 * sum(theta**2)`` for both the
    generator side and the discriminators.
    """
    set_deterministic(config.deterministic)
    if manifest.channel_stats is None:
        raise ValueError("manifest lacks TRAIN channel statistics")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    model_cfg = replace(config.model, weight_seed=config.seed, profile=config.profile)
    bundle = instantiate_models(model_cfg)
    w = config.weights
    active = _active_terms(w)
    synth = active["adversarial"] or active["reconstruction"] or active["perceptual"]

    if bank is None:
        bank = ImageBank(manifest, manifest.indices(TRAIN), config.profile)
    val_bank = None
    if val_manifest is not None:
        val_bank = ImageBank(val_manifest, val_manifest.indices(TEST), config.profile)

    enc_v, enc_i = bundle.encoders
    g_params = bundle.generator_parameters() if synth else [*enc_v.parameters(), *enc_i.parameters()]
    opt_g = torch.optim.Adam(g_params, lr=config.learning_rate, betas=config.betas)
    d_params = bundle.discriminator_parameters()
    opt_d = torch.optim.Adam(d_params, lr=config.learning_rate, betas=config.betas)
    d_v, d_i = bundle.discriminator_V, bundle.discriminator_I
    phi = bundle.perceptual_net
    mode = config.adversarial_mode

    steps = config.steps_per_epoch or max(1, math.ceil(len(manifest.indices(TRAIN)) / config.batch_pairs))

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
        (run_path / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
        (run_path / "history.jsonl").write_text("")
    history: list[dict] = []
    checkpoints: list[CheckpointRecord] = []
    best: tuple[float, Path | None] = (-math.inf, None)
    step_index = 0
    keys = ("contrastive", "adversarial_D", "adversarial_G", "reconstruction", "perceptual", "weight_decay", "total")

    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(keys, 0.0)
        t0 = time.perf_counter()
        bundle.train()
        for _ in range(steps):
            batch = sample_pair_batch(
                manifest, config.batch_pairs, config.genuine_prob, rng, bank=bank, augment=config.augment
            )
            vis, nir = batch.vis_images, batch.nir_images
            if synth:
                rec_v, z_v = bundle.generator_V(vis)
                rec_i, z_i = bundle.generator_I(nir)
            else:
                z_v, z_i = enc_v(vis), enc_i(nir)

            zero = torch.zeros(())
            d_term = zero
            if active["adversarial"]:
                d_loss_v, _ = adversarial_loss_terms_from_logits(d_v(vis, vis), d_v(rec_v.detach(), vis), mode)
                d_loss_i, _ = adversarial_loss_terms_from_logits(d_i(nir, nir), d_i(rec_i.detach(), nir), mode)
                d_term = coupled(d_loss_v, d_loss_i)
                d_total = d_term + w.lambda_L2 * squared_parameter_norm(d_params)
                if not torch.isfinite(d_total):
                    raise TrainingError(f"step {step_index}: non-finite discriminator loss {float(d_total)}")
                opt_d.zero_grad(set_to_none=True)
                d_total.backward()
                opt_d.step()

            l_c = contrastive_loss(z_v, z_i, batch.labels, w.margin_m) if active["contrastive"] else zero
            l_a = l_r = l_p = zero
            if active["adversarial"]:
                for p in d_params:
                    p.requires_grad_(False)
                l_a = coupled(
                    generator_adversarial_from_logits(d_v(rec_v, vis), mode),
                    generator_adversarial_from_logits(d_i(rec_i, nir), mode),
                )
                for p in d_params:
                    p.requires_grad_(True)
            if active["reconstruction"]:
                l_r = coupled(reconstruction_loss(vis, rec_v), reconstruction_loss(nir, rec_i))
            if active["perceptual"]:
                l_p = coupled(perceptual_loss(vis, rec_v, phi), perceptual_loss(nir, rec_i, phi))
            norms = squared_parameter_norm(g_params)
            try:
                total, breakdown = total_objective(l_c, l_a, l_r, l_p, w, norms, d_term)
            except FloatingPointError as exc:
                raise TrainingError(f"step {step_index}: {exc}") from exc
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            for k in keys:
                sums[k] += getattr(breakdown, k)
            step_index += 1

        record = {"epoch": epoch, "steps": steps, **{k: sums[k] / steps for k in keys}}
        record["active_terms"] = [k for k, v in active.items() if v]
        record["weight_decay_path"] = "loss"
        validation = None
        last = epoch == config.epochs
        if val_manifest is not None and (last or (config.eval_every and epoch % config.eval_every == 0)):
            bundle.eval()
            validation = _validate(bundle, val_manifest, val_bank)
            record["validation"] = validation
        log.info("epoch %d/%d %.1fs total=%.4f", epoch, config.epochs, time.perf_counter() - t0, record["total"])
        history.append(record)

        ckpt_path = None
        if run_path is not None:
            with open(run_path / "history.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if last or epoch % config.checkpoint_every == 0:
                ckpt_path = save_checkpoint(
                    bundle, run_path / "checkpoints" / f"epoch_{epoch:03d}", extra={"epoch": epoch, "train": config.to_dict()}
                )
                (run_path / "checkpoints" / "latest").write_text(ckpt_path.name + "\n")
                if validation is not None and validation["auc"] > best[0]:
                    best = (validation["auc"], ckpt_path)
                    (run_path / "checkpoints" / "best").write_text(ckpt_path.name + "\n")
                _prune_checkpoints(run_path / "checkpoints", config.keep_checkpoints, best[1])
        hashes = {name: state_hash(net) for name, net in bundle.networks().items()}
        checkpoints.append(CheckpointRecord(epoch, ckpt_path, hashes, {k: record[k] for k in keys}, validation))

    bundle.eval()
    return TrainResult(bundle, history, checkpoints, run_path, best[1])


def _prune_checkpoints(directory: Path, keep: int, protect: Path | None) -> None:
    if keep <= 0:
        return
    ckpts = sorted(p for p in directory.glob("epoch_*") if p.is_dir())
    for p in ckpts[:-keep]:
        if protect is None or p.resolve() != protect.resolve():
            shutil.rmtree(p)


def latest_checkpoint(run_dir: str | Path) -> Path:
    ckdir = Path(run_dir) / "checkpoints"
    return ckdir / (ckdir / "latest").read_text().strip()


def train_and_evaluate(config: TrainConfig, manifest: DatasetManifest, run_dir: str | Path | None = None):
    """Train on TRAIN, score the open-world TEST protocol; returns ``(TrainResult, VerificationReport)``."""
    result = train_cogan(config, manifest, run_dir)
    report, scores, _ = evaluate_encoders(result.bundle.encoders, manifest, config=config.to_dict())
    if run_dir is not None:
        emit_report(report, Path(run_dir) / "eval", scores)
    return result, report


# --------------------------------------------------------------------------
# cross-validation


def class_folds(classes: list[str], folds: int, seed: int) -> list[list[str]]:
    """Shuffle classes with ``seed`` and split them into ``folds`` disjoint, covering groups."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(classes) < folds:
        raise ValueError(f"{len(classes)} TRAIN classes cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(sorted(classes))
    return [sorted(str(c) for c in chunk) for chunk in np.array_split(order, folds)]


def fold_manifest(manifest: DatasetManifest, val_classes: list[str]) -> DatasetManifest:
    """TRAIN classes outside ``val_classes`` keep TRAIN; ``val_classes`` become the TEST split."""
    val = set(val_classes)
    split = {c: (TEST if c in val else TRAIN) for c in manifest.classes(TRAIN)}
    sub = manifest.subset(split)
    sub.channel_stats = compute_channel_stats(sub, manifest.profile)
    return sub


def grid_points(**axes) -> list[dict]:
    """Cartesian product of dotted-key axes, e.g. ``grid_points(**{"weights.lambda_C": [1, 5]})``."""
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]


def cell_key(overrides: dict) -> str:
    return ",".join(f"{k}={json.dumps(v)}" for k, v in sorted(overrides.items())) or "base"


def _with_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    return TrainConfig.from_dict(apply_overrides(config.to_dict(), overrides))


def run_cross_validation(
    config: TrainConfig,
    manifest: DatasetManifest,
    folds: int = 5,
    search_space: list[dict] | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    """Class-disjoint k-fold CV over TRAIN; selects the grid point with the best mean validation AUC."""
    points = search_space or [{}]
    keys = [cell_key(p) for p in points]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate grid points in search space")
    groups = class_folds(manifest.classes(TRAIN), folds, config.seed)
    fold_manifests = [fold_manifest(manifest, g) for g in groups]
    results = []
    for point, key in zip(points, keys):
        cfg = _with_overrides(config, point)
        aucs = []
        for k, fm in enumerate(fold_manifests):
            run_dir = Path(out_dir) / "cv" / key / f"fold_{k}" if out_dir else None
            res = train_cogan(cfg, fm, run_dir, val_manifest=fm)
            aucs.append(res.history[-1]["validation"]["auc"])
        results.append(
            {"key": key, "overrides": point, "aucs": aucs, "mean_auc": float(np.mean(aucs)), "std_auc": float(np.std(aucs))}
        )
    selected = max(range(len(results)), key=lambda i: (results[i]["mean_auc"], -i))
    report = {"folds": groups, "points": results, "selected": results[selected]["key"], "selected_index": selected}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "cv_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


# --------------------------------------------------------------------------
# ablations

TABLE3_DIMS = (32, 64, 128, 256)
TABLE3_LAMBDA_C = (1.0, 2.0, 5.0, 10.0)
TABLE4_ROWS = (
    (1.0, 0.0, 0.0, 0.0),
    (5.0, 1.0, 0.0, 0.0),
    (5.0, 1.0, 1.0, 0.0),
    (5.0, 1.0, 0.0, 1.0),
    (5.0, 1.0, 1.0, 1.0),
)


def ablation_cells(grid: str) -> list[dict]:
    if grid == "table3":
        return [
            {"model.embedding_dim": d, "weights.lambda_C": c} for d in TABLE3_DIMS for c in TABLE3_LAMBDA_C
        ]
    if grid == "table4":
        return [
            {"weights.lambda_C": c, "weights.lambda_A": a, "weights.lambda_R": r, "weights.lambda_P": p}
            for c, a, r, p in TABLE4_ROWS
        ]
    raise ValueError(f"unknown ablation grid {grid!r}; expected 'table3' or 'table4'")


def _run_cell(args) -> dict:
    cfg_dict, manifest_path_or_obj, run_dir = args
    manifest = (
        DatasetManifest.load(manifest_path_or_obj)
        if isinstance(manifest_path_or_obj, (str, Path))
        else manifest_path_or_obj
    )
    cfg = TrainConfig.from_dict(cfg_dict)
    _, report = train_and_evaluate(cfg, manifest, run_dir)
    return {
        "auc": report.auc,
        "eer": report.eer,
        "frr_at_far_1pct": report.frr_at_far_1pct,
        "frr_at_far_10pct": report.frr_at_far_10pct,
    }


def run_ablation_grid(
    base: TrainConfig,
    manifest: DatasetManifest,
    axes: str | list[dict],
    out_dir: str | Path | None = None,
    workers: int | None = None,
    manifest_path: str | Path | None = None,
) -> dict:
    """Train and evaluate one run per cell with the base seed; return the table document.

    ``axes`` is ``"table3"`` (|z| x lambda_C), ``"table4"`` (loss-term rows) or an
    explicit list of override dicts. Cells run in ``workers`` processes
    (default from ``COGAN_WORKERS``, else 1).
    """
    grid = axes if isinstance(axes, str) else "custom"
    cells = ablation_cells(axes) if isinstance(axes, str) else list(axes)
    if not cells:
        raise ValueError("ablation axes are empty")
    keys = [cell_key(c) for c in cells]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate ablation cells")
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    out = Path(out_dir) if out_dir else None
    jobs = []
    for cell, key in zip(cells, keys):
        cfg = apply_overrides(base.to_dict(), cell)
        run_dir = out / "cells" / _safe_name(key) if out else None
        jobs.append((cfg, manifest_path if (manifest_path and workers > 1) else manifest, run_dir))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            metrics = list(pool.map(_run_cell, jobs))
    else:
        metrics = [_run_cell(j) for j in jobs]
    results = {key: {"overrides": cell, **m} for cell, key, m in zip(cells, keys, metrics)}
    table = {"grid": grid, "seed": base.seed, "cells": [results[k] | {"key": k} for k in keys]}
    if grid == "table3":
        table["rows"] = {"embedding_dim": list(TABLE3_DIMS)}
        table["cols"] = {"lambda_C": list(TABLE3_LAMBDA_C)}
        table["auc"] = [
            [results[cell_key({"model.embedding_dim": d, "weights.lambda_C": c})]["auc"] for c in TABLE3_LAMBDA_C]
            for d in TABLE3_DIMS
        ]
    elif grid == "table4":
        table["columns"] = ["lambda_C", "lambda_A", "lambda_R", "lambda_P", "auc"]
        table["rows"] = [[*row, results[k]["auc"]] for row, k in zip(TABLE4_ROWS, keys)]
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation_table.json").write_text(json.dumps(table, indent=2) + "\n")
    return table


def _safe_name(key: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._=-" else "_" for ch in key)

