"""Dataset cataloging, preprocessing, augmentation and pair sampling.

On-disk layout consumed by :func:`build_manifest`::

    root/<subject>/<eye>/<spectrum>/<index>.png

``spectrum`` is ``VIS`` or ``NIR``. Each (subject, eye) is its own class.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter
from scipy.special import expit

log = logging.getLogger(__name__)

VIS = "VIS"
NIR = "NIR"
SPECTRA = (VIS, NIR)
TRAIN = "TRAIN"
TEST = "TEST"

MANIFEST_SCHEMA_VERSION = 1
STD_EPS = 1e-6


@dataclass(frozen=True)
class ScaleProfile:
    name: str
    size: int
    pad: int
    channels: int = 3


PROFILES = {
    "paper": ScaleProfile("paper", 256, 8),
    "desk": ScaleProfile("desk", 64, 2),
}


def get_profile(profile: str | ScaleProfile) -> ScaleProfile:
    if isinstance(profile, ScaleProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown scale profile {profile!r}; expected one of {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class ImageRecord:
    path: str  # relative to the manifest root
    class_id: str
    spectrum: str
    sample_index: int
    split: str
    subject: str = ""
    eye: str = ""


@dataclass
class ChannelStats:
    mean: list[float]
    std: list[float]
    degenerate: bool = False


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    root: Path
    channel_stats: ChannelStats | None = None
    profile: str = "desk"
    train_subjects: float | None = None

    def classes(self, split: str | None = None) -> list[str]:
        seen = dict.fromkeys(r.class_id for r in self.records if split is None or r.split == split)
        return list(seen)

    def indices(self, split: str | None = None, spectrum: str | None = None) -> np.ndarray:
        return np.array(
            [
                i
                for i, r in enumerate(self.records)
                if (split is None or r.split == split) and (spectrum is None or r.spectrum == spectrum)
            ],
            dtype=np.int64,
        )

    def abspath(self, record: ImageRecord) -> Path:
        return self.root / record.path

    def subset(self, class_split: dict[str, str]) -> "DatasetManifest":
        """Return a manifest restricted to ``class_split`` keys, relabelled with its splits.

        Channel statistics are dropped; recompute them on the new TRAIN split.
        """
        recs = [
            ImageRecord(**{**asdict(r), "split": class_split[r.class_id]})
            for r in self.records
            if r.class_id in class_split
        ]
        return DatasetManifest(recs, self.root, None, self.profile, None)

    def to_json(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "root": ".",
            "profile": self.profile,
            "train_subjects": self.train_subjects,
            "channel_stats": asdict(self.channel_stats) if self.channel_stats else None,
            "records": [asdict(r) for r in self.records],
        }

    def save(self, path: str | Path) -> Path:
        """Write the manifest as JSON. ``root`` is stored relative to the file location."""
        path = Path(path)
        doc = self.to_json()
        root = self.root.resolve()
        try:
            doc["root"] = str(root.relative_to(path.parent.resolve())) or "."
        except ValueError:
            doc["root"] = str(root)
        path.write_text(json.dumps(doc, indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported manifest schema {doc.get('schema_version')!r}")
        root = Path(doc["root"])
        if not root.is_absolute():
            root = path.parent / root
        stats = ChannelStats(**doc["channel_stats"]) if doc.get("channel_stats") else None
        records = [ImageRecord(**r) for r in doc["records"]]
        manifest = cls(records, root, stats, doc.get("profile", "desk"), doc.get("train_subjects"))
        validate_manifest(manifest)
        return manifest


class ManifestError(ValueError):
    pass


def _natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def validate_manifest(manifest: DatasetManifest) -> None:
    seen: set[tuple[str, str, int]] = set()
    per_class: dict[str, dict[str, set[str]]] = {}
    for r in manifest.records:
        if r.spectrum not in SPECTRA:
            raise ManifestError(f"record {r.path}: unknown spectrum {r.spectrum!r}")
        if r.split not in (TRAIN, TEST):
            raise ManifestError(f"record {r.path}: unknown split {r.split!r}")
        key = (r.class_id, r.spectrum, r.sample_index)
        if key in seen:
            raise ManifestError(f"duplicate record for class {r.class_id!r}, {r.spectrum}, sample {r.sample_index}")
        seen.add(key)
        entry = per_class.setdefault(r.class_id, {"spectra": set(), "splits": set()})
        entry["spectra"].add(r.spectrum)
        entry["splits"].add(r.split)
    for class_id, entry in per_class.items():
        missing = set(SPECTRA) - entry["spectra"]
        if missing:
            raise ManifestError(f"class {class_id!r} has no {'/'.join(sorted(missing))} images")
        if len(entry["splits"]) > 1:
            raise ManifestError(f"class {class_id!r} appears in both TRAIN and TEST")


def _assign_split(subject_rank: int, eye_rank: int, train_subjects: float) -> str:
    whole = int(np.floor(train_subjects))
    if subject_rank < whole:
        return TRAIN
    if subject_rank == whole and train_subjects - whole >= 0.5 and eye_rank == 0:
        return TRAIN
    return TEST


def build_manifest(
    root: str | Path,
    train_subjects: float,
    profile: str | ScaleProfile = "desk",
    compute_stats: bool = True,
) -> DatasetManifest:
    """Catalog a dataset tree and assign open-world splits by subject.

    Subjects are ordered naturally by directory name; the first ``train_subjects``
    go to TRAIN. A fractional part of .5 additionally puts the first eye
    (in sorted order) of the next subject into TRAIN, so ``104.5`` reproduces
    a 209/209 class split on a 209-subject corpus.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} is not a directory")
    prof = get_profile(profile)
    records: list[ImageRecord] = []
    subjects = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: _natural_key(p.name))
    for s_rank, subj in enumerate(subjects):
        eyes = sorted((p for p in subj.iterdir() if p.is_dir()), key=lambda p: _natural_key(p.name))
        for e_rank, eye in enumerate(eyes):
            class_id = f"{subj.name}/{eye.name}"
            split = _assign_split(s_rank, e_rank, train_subjects)
            spectra_found = set()
            for spec_dir in sorted(p for p in eye.iterdir() if p.is_dir()):
                spectrum = spec_dir.name.upper()
                if spectrum not in SPECTRA:
                    raise ManifestError(f"{spec_dir}: unknown spectrum directory")
                seen_idx: dict[int, str] = {}
                for img in sorted(spec_dir.glob("*.png"), key=lambda p: _natural_key(p.name)):
                    if not img.stem.isdigit():
                        raise ManifestError(f"{img}: file name is not a sample index")
                    idx = int(img.stem)
                    if idx in seen_idx:
                        raise ManifestError(
                            f"duplicate sample {idx} for class {class_id!r} {spectrum}: "
                            f"{seen_idx[idx]} and {img.name}"
                        )
                    seen_idx[idx] = img.name
                    records.append(
                        ImageRecord(
                            path=img.relative_to(root).as_posix(),
                            class_id=class_id,
                            spectrum=spectrum,
                            sample_index=idx,
                            split=split,
                            subject=subj.name,
                            eye=eye.name,
                        )
                    )
                if seen_idx:
                    spectra_found.add(spectrum)
            missing = set(SPECTRA) - spectra_found
            if missing:
                raise ManifestError(f"class {class_id!r} has no {'/'.join(sorted(missing))} images")
    manifest = DatasetManifest(records, root, None, prof.name, train_subjects)
    validate_manifest(manifest)
    if compute_stats and manifest.indices(TRAIN).size:
        manifest.channel_stats = compute_channel_stats(manifest, prof)
    return manifest


def load_raw(path: str | Path, profile: str | ScaleProfile) -> np.ndarray:
    """Read an 8-bit image and resize it (bilinear) to the profile size.

    Returns an ``H x W x C`` float64 array in [0, 1]; single-channel images are
    replicated to ``profile.channels``.
    """
    prof = get_profile(profile)
    try:
        with Image.open(path) as im:
            im = im.convert("L" if prof.channels == 1 or im.mode in ("L", "I;16", "I") else "RGB")
            if im.size != (prof.size, prof.size):
                im = im.resize((prof.size, prof.size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], prof.channels, axis=2)
    return arr


def channel_stats_from_images(images: Iterable[np.ndarray]) -> ChannelStats:
    """Per-channel mean and population std over a stream of ``H x W x C`` arrays.

    Per-image moments are merged pairwise (Chan et al.) to avoid cancellation.
    """
    count = 0
    mean = m2 = None
    for img in images:
        planes = np.asarray(img, dtype=np.float64).reshape(-1, img.shape[-1]).T
        n = planes.shape[1]
        # shifting by a sample pixel keeps constant channels exact
        shift = planes[:, 0]
        centred = planes - shift[:, None]
        img_mean = shift + centred.mean(axis=1)
        img_m2 = ((planes - img_mean[:, None]) ** 2).sum(axis=1)
        if mean is None:
            count, mean, m2 = n, img_mean, img_m2
            continue
        delta = img_mean - mean
        total = count + n
        mean = mean + delta * (n / total)
        m2 = m2 + img_m2 + delta**2 * (count * n / total)
        count = total
    if not count:
        raise ValueError("cannot compute channel statistics from an empty image set")
    std = np.sqrt(m2 / count)
    degenerate = bool(np.any(std < STD_EPS))
    if degenerate:
        log.warning("degenerate channel statistics (std %s); clamping to %g", std.tolist(), STD_EPS)
        std = np.maximum(std, STD_EPS)
    return ChannelStats(mean.tolist(), std.tolist(), degenerate)


def compute_channel_stats(manifest: DatasetManifest, profile: str | ScaleProfile | None = None) -> ChannelStats:
    """Statistics over the raw, profile-resized pixels of TRAIN records only."""
    prof = get_profile(profile or manifest.profile)
    train = [r for r in manifest.records if r.split == TRAIN]
    if not train:
        raise ValueError("manifest has an empty TRAIN split")
    return channel_stats_from_images(load_raw(manifest.abspath(r), prof) for r in train)


def standardize(raw: np.ndarray, stats: ChannelStats) -> torch.Tensor:
    mean = np.asarray(stats.mean)
    std = np.asarray(stats.std)
    out = (raw - mean) / std
    return torch.from_numpy(np.ascontiguousarray(out.transpose(2, 0, 1))).float()


def preprocess_image(
    record: ImageRecord, manifest: DatasetManifest, profile: str | ScaleProfile | None = None
) -> torch.Tensor:
    """Load, resize and standardize one image to a ``C x H x W`` float tensor."""
    if manifest.channel_stats is None:
        raise ValueError("manifest has no channel statistics; build it with a non-empty TRAIN split")
    prof = get_profile(profile or manifest.profile)
    return standardize(load_raw(manifest.abspath(record), prof), manifest.channel_stats)


def augment_image(image: torch.Tensor, rng: np.random.Generator, profile: str | ScaleProfile) -> torch.Tensor:
    """Random translated crop from the zero-padded image; output shape equals input shape."""
    pad = get_profile(profile).pad
    if pad == 0:
        return image.clone()
    dy, dx = (int(v) for v in rng.integers(0, 2 * pad + 1, size=2))
    h, w = image.shape[-2:]
    padded = F.pad(image, (pad, pad, pad, pad))
    return padded[..., dy : dy + h, dx : dx + w].clone()


class ImageBank:
    """Preprocessed tensors for a set of manifest records, loaded once and cached."""

    def __init__(self, manifest: DatasetManifest, indices: Sequence[int] | None = None, profile=None):
        self.manifest = manifest
        self.profile = get_profile(profile or manifest.profile)
        idx = manifest.indices() if indices is None else np.asarray(indices, dtype=np.int64)
        self._slot = {int(i): k for k, i in enumerate(idx)}
        if len(idx):
            self.tensor = torch.stack([preprocess_image(manifest.records[i], manifest, self.profile) for i in idx])
        else:
            c, s = self.profile.channels, self.profile.size
            self.tensor = torch.empty(0, c, s, s)

    def __len__(self) -> int:
        return len(self._slot)

    def get(self, record_indices: Sequence[int]) -> torch.Tensor:
        return self.tensor[[self._slot[int(i)] for i in record_indices]]


@dataclass
class PairBatch:
    vis_images: torch.Tensor
    nir_images: torch.Tensor
    labels: torch.Tensor  # 0 genuine, 1 imposter
    pair_ids: np.ndarray  # (B, 2) manifest record indices (vis, nir)


def sample_pairs(
    manifest: DatasetManifest,
    batch_pairs: int,
    genuine_prob: float,
    rng: np.random.Generator,
    split: str = TRAIN,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw cross-spectral pair indices and labels without touching image data.

    Genuine pairs are uniform over all within-class (vis, nir) combinations and
    imposter pairs uniform over all cross-class combinations.
    """
    if not 0.0 <= genuine_prob <= 1.0:
        raise ValueError(f"genuine_prob must lie in [0, 1], got {genuine_prob}")
    if batch_pairs < 1:
        raise ValueError("batch_pairs must be >= 1")
    vis = manifest.indices(split, VIS)
    nir = manifest.indices(split, NIR)
    if not len(vis) or not len(nir):
        raise ValueError(f"{split} split is empty")
    cls_of = np.array([r.class_id for r in manifest.records], dtype=object)
    classes = sorted(set(cls_of[vis]))
    if genuine_prob < 1.0 and len(classes) < 2:
        raise ValueError("imposter pairs requested but the split holds a single class")

    by_class_vis = {c: vis[cls_of[vis] == c] for c in classes}
    by_class_nir = {c: nir[cls_of[nir] == c] for c in classes}
    combos = np.array([len(by_class_vis[c]) * len(by_class_nir[c]) for c in classes], dtype=np.float64)
    class_p = combos / combos.sum()

    is_genuine = rng.random(batch_pairs) < genuine_prob
    pairs = np.empty((batch_pairs, 2), dtype=np.int64)
    for k in range(batch_pairs):
        if is_genuine[k]:
            c = classes[rng.choice(len(classes), p=class_p)]
            pairs[k] = rng.choice(by_class_vis[c]), rng.choice(by_class_nir[c])
        else:
            while True:
                v, n = rng.choice(vis), rng.choice(nir)
                if cls_of[v] != cls_of[n]:
                    break
            pairs[k] = v, n
    labels = (~is_genuine).astype(np.int64)
    return pairs, labels


def sample_pair_batch(
    manifest: DatasetManifest,
    batch_pairs: int,
    genuine_prob: float,
    rng: np.random.Generator,
    bank: ImageBank | None = None,
    augment: bool = True,
    split: str = TRAIN,
) -> PairBatch:
    pairs, labels = sample_pairs(manifest, batch_pairs, genuine_prob, rng, split)
    if bank is None:
        bank = ImageBank(manifest, np.unique(pairs))
    vis = bank.get(pairs[:, 0])
    nir = bank.get(pairs[:, 1])
    if augment:
        vis = torch.stack([augment_image(x, rng, bank.profile) for x in vis])
        nir = torch.stack([augment_image(x, rng, bank.profile) for x in nir])
    return PairBatch(vis, nir, torch.from_numpy(labels), pairs)


# --------------------------------------------------------------------------
# synthetic two-domain corpus


@dataclass(frozen=True)
class SpectralRendering:
    """Global appearance transform applied to the shared identity map."""

    gamma: float
    blur_sigma: float  # pixels at 64 px, scaled with image size
    noise_sigma: float
    contrast: float  # slope of the logistic tone curve around mid-grey
    color: bool


DEFAULT_VIS = SpectralRendering(gamma=1.0, blur_sigma=0.0, noise_sigma=0.02, contrast=1.0, color=True)
DEFAULT_NIR = SpectralRendering(gamma=0.7, blur_sigma=1.0, noise_sigma=0.03, contrast=1.6, color=False)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    samples_per_class: int
    image_size: int = 64
    seed: int = 0
    vis: SpectralRendering = DEFAULT_VIS
    nir: SpectralRendering = DEFAULT_NIR
    jitter_px: float = 1.5  # max translation at 64 px
    jitter_rot_deg: float = 3.0
    illumination: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be >= 2")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")


@dataclass
class _ClassPattern:
    base: float
    gratings: np.ndarray  # (k, 4): cycles, angle, phase, amplitude
    eye: np.ndarray  # cx, cy, rx, ry, iris_r, darkness
    brow: np.ndarray  # offset, thickness, curvature, darkness
    spots: np.ndarray  # (k, 4): x, y, radius, amplitude
    tint: np.ndarray  # rgb
    iris_rgb: np.ndarray


def _class_pattern(seed: int, class_idx: int) -> _ClassPattern:
    rng = np.random.default_rng([seed, class_idx, 0xC1A55])
    k = 3
    gratings = np.column_stack(
        [
            rng.uniform(1.0, 3.5, k),
            rng.uniform(0, np.pi, k),
            rng.uniform(0, 2 * np.pi, k),
            rng.uniform(0.02, 0.07, k),
        ]
    )
    eye = np.array(
        [
            rng.uniform(-0.1, 0.1),
            rng.uniform(-0.05, 0.12),
            rng.uniform(0.16, 0.28),
            rng.uniform(0.07, 0.13),
            rng.uniform(0.04, 0.075),
            rng.uniform(0.25, 0.55),
        ]
    )
    brow = np.array(
        [rng.uniform(0.18, 0.32), rng.uniform(0.03, 0.08), rng.uniform(-0.8, 0.8), rng.uniform(0.15, 0.4)]
    )
    n_spots = 6
    spots = np.column_stack(
        [
            rng.uniform(-0.45, 0.45, n_spots),
            rng.uniform(-0.45, 0.45, n_spots),
            rng.uniform(0.05, 0.12, n_spots),
            rng.uniform(-0.35, 0.35, n_spots),
        ]
    )
    return _ClassPattern(
        base=rng.uniform(0.4, 0.65),
        gratings=gratings,
        eye=eye,
        brow=brow,
        spots=spots,
        tint=rng.uniform(0.8, 1.2, 3),
        iris_rgb=rng.uniform(0.1, 0.8, 3),
    )


def _render_identity(p: _ClassPattern, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Luminance map plus an iris mask at normalized coordinates in [-0.5, 0.5]."""
    lum = np.full_like(xs, p.base)
    for cycles, angle, phase, amp in p.gratings:
        lum += amp * np.sin(2 * np.pi * cycles * (xs * np.cos(angle) + ys * np.sin(angle)) + phase)
    for sx, sy, rad, amp in p.spots:
        lum += amp * np.exp(-((xs - sx) ** 2 + (ys - sy) ** 2) / (2 * rad**2))
    cx, cy, rx, ry, ir, dark = p.eye
    ell = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2
    sclera = expit((1.0 - ell) * 12.0)
    lum = lum * (1 - sclera) + 0.85 * sclera
    iris = expit((1.0 - np.hypot(xs - cx, ys - cy) / ir) * 10.0) * sclera
    lum = lum * (1 - iris) + (0.85 - dark) * iris
    off, thick, curve, bdark = p.brow
    brow_y = cy - off + curve * (xs - cx) ** 2
    lum -= bdark * np.exp(-((ys - brow_y) ** 2) / (2 * thick**2)) * (np.abs(xs - cx) < rx * 1.6)
    return lum, iris


def _render_sample(spec: SyntheticSpec, class_idx: int, spectrum: str, sample: int) -> np.ndarray:
    p = _class_pattern(spec.seed, class_idx)
    rng = np.random.default_rng([spec.seed, class_idx, SPECTRA.index(spectrum), sample])
    size = spec.image_size
    scale = size / 64.0
    t = (np.arange(size) + 0.5) / size - 0.5
    xs, ys = np.meshgrid(t, t)
    shift = rng.uniform(-spec.jitter_px, spec.jitter_px, 2) / 64.0
    rot = np.deg2rad(rng.uniform(-spec.jitter_rot_deg, spec.jitter_rot_deg))
    c, s = np.cos(rot), np.sin(rot)
    u = c * (xs - shift[0]) + s * (ys - shift[1])
    v = -s * (xs - shift[0]) + c * (ys - shift[1])
    lum, iris = _render_identity(p, u, v)
    gain = 1.0 + rng.uniform(-spec.illumination, spec.illumination)
    offset = rng.uniform(-spec.illumination, spec.illumination) / 3
    lum = np.clip(lum * gain + offset, 0.0, 1.0)

    r = spec.vis if spectrum == VIS else spec.nir
    tone = lum**r.gamma
    if r.contrast != 1.0:
        lo, hi = expit(-2.0 * r.contrast), expit(2.0 * r.contrast)
        tone = (expit(4.0 * r.contrast * (tone - 0.5)) - lo) / (hi - lo)
    if r.blur_sigma > 0:
        tone = gaussian_filter(tone, r.blur_sigma * scale, mode="nearest")
    if r.color:
        rgb = tone[:, :, None] * p.tint[None, None, :]
        rgb = rgb * (1 - iris[:, :, None]) + (p.iris_rgb * gain)[None, None, :] * iris[:, :, None]
        img = rgb + rng.normal(0, r.noise_sigma, rgb.shape)
    else:
        img = tone + rng.normal(0, r.noise_sigma, tone.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def synthetic_class_dir(class_idx: int) -> tuple[str, str]:
    """Subject and eye directory names for a synthetic class index."""
    return f"s{class_idx // 2:04d}", "LR"[class_idx % 2]


def generate_synthetic_dataset(
    spec: SyntheticSpec,
    out: str | Path,
    train_subjects: float | None = None,
    profile: str | ScaleProfile = "desk",
    overwrite: bool = False,
) -> DatasetManifest:
    """Render a deterministic two-spectrum corpus and write ``out/manifest.json``.

    Class ``k`` becomes subject ``k // 2``, eye ``L``/``R``. By default the first
    half of the subjects is assigned to TRAIN.
    """
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{out} exists and is not empty (pass overwrite=True)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(spec.num_classes):
        subj, eye = synthetic_class_dir(k)
        for spectrum in SPECTRA:
            d = out / subj / eye / spectrum
            d.mkdir(parents=True, exist_ok=True)
            for i in range(spec.samples_per_class):
                arr = _render_sample(spec, k, spectrum, i)
                Image.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L").save(d / f"{i:02d}.png")
    n_subjects = (spec.num_classes + 1) // 2
    if train_subjects is None:
        train_subjects = n_subjects / 2
    manifest = build_manifest(out, train_subjects, profile)
    manifest.save(out / "manifest.json")
    return manifest


def synthetic_manifest(
    num_classes: int, samples_per_spectrum: int, split: str = TEST, root: str | Path = "."
) -> DatasetManifest:
    """In-memory manifest with placeholder paths, for protocol counting without images."""
    records = []
    for k in range(num_classes):
        subj, eye = synthetic_class_dir(k)
        for spectrum in SPECTRA:
            for i in range(samples_per_spectrum):
                records.append(
                    ImageRecord(f"{subj}/{eye}/{spectrum}/{i:02d}.png", f"{subj}/{eye}", spectrum, i, split, subj, eye)
                )
    return DatasetManifest(records, Path(root))
