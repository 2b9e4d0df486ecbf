"""Open-world verification: pair enumeration, encoder-only scoring and ROC metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import NIR, TEST, VIS, DatasetManifest, ImageBank, get_profile
from .models import encode

GENUINE_RULE = "genuine: same class_id and vis.sample_index < nir.sample_index; imposter: all cross-class (vis, nir)"
REPORT_SCHEMA_VERSION = 1


@dataclass
class PairList:
    """Cross-spectral test pairs as manifest record indices (column 0 visible, column 1 NIR)."""

    genuine: np.ndarray
    imposter: np.ndarray
    protocol_hash: str

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.genuine), len(self.imposter)


def _split_arrays(manifest: DatasetManifest, split: str):
    vis = manifest.indices(split, VIS)
    nir = manifest.indices(split, NIR)
    if not len(vis) or not len(nir):
        raise ValueError(f"{split} split is empty")
    classes = {c: k for k, c in enumerate(dict.fromkeys(manifest.records[i].class_id for i in np.concatenate([vis, nir])))}
    vis_cls = np.array([classes[manifest.records[i].class_id] for i in vis])
    nir_cls = np.array([classes[manifest.records[i].class_id] for i in nir])
    missing = set(vis_cls) ^ set(nir_cls)
    if missing:
        names = [c for c, k in classes.items() if k in missing]
        raise ValueError(f"{split} classes missing a spectrum: {names}")
    vis_idx = np.array([manifest.records[i].sample_index for i in vis])
    nir_idx = np.array([manifest.records[i].sample_index for i in nir])
    return vis, nir, vis_cls, nir_cls, vis_idx, nir_idx


def protocol_hash(manifest: DatasetManifest, split: str = TEST) -> str:
    h = hashlib.sha256(GENUINE_RULE.encode())
    keys = sorted((r.class_id, r.spectrum, r.sample_index) for r in manifest.records if r.split == split)
    for key in keys:
        h.update(repr(key).encode())
    return h.hexdigest()


def expected_pair_counts(manifest: DatasetManifest, split: str = TEST) -> tuple[int, int]:
    """Closed-form genuine/imposter counts without materializing the pairs."""
    _, _, vis_cls, nir_cls, vis_idx, nir_idx = _split_arrays(manifest, split)
    genuine = 0
    same_class = 0
    for c in np.unique(vis_cls):
        a = np.sort(vis_idx[vis_cls == c])
        b = np.sort(nir_idx[nir_cls == c])
        genuine += int(np.sum(len(b) - np.searchsorted(b, a, side="right")))
        same_class += len(a) * len(b)
    return genuine, len(vis_cls) * len(nir_cls) - same_class


def enumerate_test_pairs(manifest: DatasetManifest, split: str = TEST) -> PairList:
    """All genuine and imposter cross-spectral pairs of the one-against-all protocol."""
    vis, nir, vis_cls, nir_cls, vis_idx, nir_idx = _split_arrays(manifest, split)
    same = vis_cls[:, None] == nir_cls[None, :]
    gen_mask = same & (vis_idx[:, None] < nir_idx[None, :])
    gi, gj = np.nonzero(gen_mask)
    ii, ij = np.nonzero(~same)
    genuine = np.column_stack([vis[gi], nir[gj]])
    imposter = np.column_stack([vis[ii], nir[ij]])
    pairs = PairList(genuine, imposter, protocol_hash(manifest, split))
    if pairs.counts != expected_pair_counts(manifest, split):
        raise AssertionError("pair enumeration disagrees with the closed-form counts")
    return pairs


@dataclass
class ScoreSet:
    distances: np.ndarray  # float64, lower = more likely genuine
    labels: np.ndarray  # 0 genuine, 1 imposter
    pairs: np.ndarray | None = None

    @classmethod
    def from_lists(cls, genuine, imposter) -> "ScoreSet":
        g = np.asarray(genuine, dtype=np.float64)
        i = np.asarray(imposter, dtype=np.float64)
        return cls(np.concatenate([g, i]), np.concatenate([np.zeros(len(g), int), np.ones(len(i), int)]))

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vis_record", "nir_record", "distance", "label"])
            pairs = self.pairs if self.pairs is not None else np.full((len(self.distances), 2), -1)
            for (v, n), d, y in zip(pairs, self.distances, self.labels):
                w.writerow([int(v), int(n), repr(float(d)), int(y)])


def embed_records(encoder, bank: ImageBank, record_indices, batch_size: int = 128) -> np.ndarray:
    out = []
    for start in range(0, len(record_indices), batch_size):
        chunk = record_indices[start : start + batch_size]
        out.append(encode(encoder, bank.get(chunk)).double().numpy())
    if not out:
        return np.zeros((0, 0))
    return np.concatenate(out)


def score_pairs(
    encoders,
    pairs: PairList,
    manifest: DatasetManifest,
    profile=None,
    batch_size: int = 128,
    bank: ImageBank | None = None,
) -> ScoreSet:
    """Distances between encoder embeddings; each image is embedded exactly once."""
    enc_v, enc_i = encoders
    all_pairs = np.concatenate([pairs.genuine, pairs.imposter])
    labels = np.concatenate([np.zeros(len(pairs.genuine), int), np.ones(len(pairs.imposter), int)])
    vis_ids = np.unique(all_pairs[:, 0])
    nir_ids = np.unique(all_pairs[:, 1])
    if bank is None:
        missing = [int(i) for i in np.concatenate([vis_ids, nir_ids]) if not manifest.abspath(manifest.records[i]).is_file()]
        if missing:
            affected = int(np.isin(all_pairs, missing).any(axis=1).sum())
            paths = [manifest.records[i].path for i in missing[:5]]
            raise FileNotFoundError(f"{len(missing)} image files missing (e.g. {paths}); {affected} pairs affected")
        bank = ImageBank(manifest, np.concatenate([vis_ids, nir_ids]), get_profile(profile or manifest.profile))
    z_v = embed_records(enc_v, bank, vis_ids, batch_size)
    z_i = embed_records(enc_i, bank, nir_ids, batch_size)
    row_v = np.searchsorted(vis_ids, all_pairs[:, 0])
    row_i = np.searchsorted(nir_ids, all_pairs[:, 1])
    dist = np.empty(len(all_pairs))
    step = 1 << 18
    for s in range(0, len(all_pairs), step):
        dist[s : s + step] = np.linalg.norm(z_v[row_v[s : s + step]] - z_i[row_i[s : s + step]], axis=1)
    return ScoreSet(dist, labels, all_pairs)


@dataclass
class VerificationReport:
    roc: list[tuple[float, float, float]]  # (FAR, FRR, threshold); threshold -inf for the first point
    auc: float
    eer: float
    frr_at_far_1pct: float
    frr_at_far_10pct: float
    counts: tuple[int, int]
    config: dict = field(default_factory=dict)
    protocol_hash: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        d["roc"] = [[far, frr, None if math.isinf(t) else t] for far, frr, t in self.roc]
        d["counts"] = {"genuine": self.counts[0], "imposter": self.counts[1]}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "VerificationReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            roc=[(far, frr, -math.inf if t is None else t) for far, frr, t in d["roc"]],
            auc=d["auc"],
            eer=d["eer"],
            frr_at_far_1pct=d["frr_at_far_1pct"],
            frr_at_far_10pct=d["frr_at_far_10pct"],
            counts=(d["counts"]["genuine"], d["counts"]["imposter"]),
            config=d.get("config", {}),
            protocol_hash=d.get("protocol_hash", ""),
        )


def roc_points(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR/FRR at every distinct distance (accept iff distance <= threshold), plus the reject-all point."""
    d = np.asarray(scores.distances, dtype=np.float64)
    y = np.asarray(scores.labels)
    gen = np.sort(d[y == 0])
    imp = np.sort(d[y == 1])
    if not len(gen) or not len(imp):
        raise ValueError("ROC needs at least one genuine and one imposter score")
    thresholds = np.unique(d)
    far = np.searchsorted(imp, thresholds, side="right") / len(imp)
    frr = 1.0 - np.searchsorted(gen, thresholds, side="right") / len(gen)
    return (
        np.concatenate([[0.0], far]),
        np.concatenate([[1.0], frr]),
        np.concatenate([[-np.inf], thresholds]),
    )


def eer_from_roc(far: np.ndarray, frr: np.ndarray) -> float:
    """Linear interpolation at the first sign change of FAR − FRR."""
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(far[k])
    d0, d1 = diff[k - 1], diff[k]
    s = -d0 / (d1 - d0)
    return float(far[k - 1] + s * (far[k] - far[k - 1]))


def frr_at_far(far: np.ndarray, frr: np.ndarray, target: float) -> float:
    """FRR at FAR = ``target``, interpolating from the last point with FAR <= target."""
    j = int(np.searchsorted(far, target, side="right")) - 1
    if far[j] == target or j == len(far) - 1:
        return float(frr[j])
    s = (target - far[j]) / (far[j + 1] - far[j])
    return float(frr[j] + s * (frr[j + 1] - frr[j]))


def compute_roc_metrics(scores: ScoreSet, config: dict | None = None, protocol: str = "") -> VerificationReport:
    far, frr, thr = roc_points(scores)
    tpr = 1.0 - frr
    auc = float(np.sum((far[1:] - far[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    n_gen = int(np.sum(np.asarray(scores.labels) == 0))
    return VerificationReport(
        roc=[(float(a), float(b), float(t)) for a, b, t in zip(far, frr, thr)],
        auc=auc,
        eer=eer_from_roc(far, frr),
        frr_at_far_1pct=frr_at_far(far, frr, 0.01),
        frr_at_far_10pct=frr_at_far(far, frr, 0.10),
        counts=(n_gen, len(scores.labels) - n_gen),
        config=dict(config or {}),
        protocol_hash=protocol,
    )


def emit_report(report: VerificationReport, out: str | Path, scores: ScoreSet | None = None) -> dict[str, Path]:
    """Write ``report.json`` and ``roc.png`` (and ``scores.csv`` when scores are given)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "roc": out / "roc.png"}
    paths["report"].write_text(json.dumps(report.to_json(), indent=1) + "\n")

    far = np.array([p[0] for p in report.roc])
    frr = np.array([p[1] for p in report.roc])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(far, 1 - frr, lw=1.5, label=f"AUC {report.auc:.4f}, EER {report.eer:.4f}")
    ax.plot([0, 1], [0, 1], ls=":", c="grey", lw=0.8)
    ax.set_xlabel("false accept rate")
    ax.set_ylabel("1 - false reject rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(paths["roc"], dpi=100)
    plt.close(fig)

    if scores is not None:
        paths["scores"] = out / "scores.csv"
        scores.save_csv(paths["scores"])
    return paths


def load_report(path: str | Path) -> VerificationReport:
    return VerificationReport.from_json(json.loads(Path(path).read_text()))


def evaluate_encoders(encoders, manifest: DatasetManifest, split: str = TEST, batch_size: int = 128, config=None):
    """Enumerate, score and summarize one split; returns ``(report, scores, pairs)``."""
    pairs = enumerate_test_pairs(manifest, split)
    with torch.no_grad():
        scores = score_pairs(encoders, pairs, manifest, batch_size=batch_size)
    report = compute_roc_metrics(scores, config, pairs.protocol_hash)
    return report, scores, pairs
