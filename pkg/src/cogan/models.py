"""Coupled U-Net generators, conditional discriminators and the fixed perceptual network."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
from torch import nn

from .data import ScaleProfile, get_profile

# VGG16 layer plan; "M" is a 2x2 max-pool.
VGG16_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512)
DESK_PERCEPTUAL_PLAN = (8, "M", 16, "M", 32, "M", 64, "M", 64)

NETWORK_NAMES = ("encoder_V", "decoder_V", "encoder_I", "decoder_I", "discriminator_V", "discriminator_I", "perceptual")
ENCODER_NAMES = ("encoder_V", "encoder_I")


@dataclass
class ModelConfig:
    profile: str = "desk"
    embedding_dim: int = 64
    stem_width: int = 16
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    encoder_blocks: tuple[int, ...] = (2, 2, 2, 2)
    decoder_widths: tuple[int, ...] | None = None  # None mirrors the encoder
    discriminator_widths: tuple[int, ...] = (16, 32, 64, 128)
    perceptual_plan: tuple = DESK_PERCEPTUAL_PLAN
    perceptual_layer: int = -1  # index into the conv layers of the plan; -1 = last
    perceptual_weights: str | None = None
    weight_seed: int = 0

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "ModelConfig":
        if profile == "paper":
            base = dict(
                profile="paper",
                stem_width=64,
                encoder_widths=(64, 128, 256, 512),
                perceptual_plan=VGG16_PLAN,
            )
        else:
            base = dict(profile=get_profile(profile).name)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("encoder_widths", "encoder_blocks", "decoder_widths", "discriminator_widths", "perceptual_plan"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def scale(self) -> ScaleProfile:
        return get_profile(self.profile)

    def validate(self) -> None:
        if self.embedding_dim <= 0:
            raise ValueError(f"embedding_dim must be positive, got {self.embedding_dim}")
        if len(self.encoder_widths) != 4 or len(self.encoder_blocks) != 4:
            raise ValueError("encoder plan needs exactly four residual stages")
        size = self.scale.size
        if size % 32:
            raise ValueError(f"image size {size} must be divisible by 32 for the U-Net generator")
        n_convs = sum(1 for v in self.perceptual_plan if v != "M")
        if not -n_convs <= self.perceptual_layer < n_convs:
            raise ValueError(f"perceptual_layer {self.perceptual_layer} out of range for {n_convs} conv layers")


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResidualEncoder(nn.Module):
    """18-layer residual backbone; the classifier is replaced by an affine projection to |z|."""

    def __init__(self, in_channels: int, stem_width: int, widths, blocks, embedding_dim: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, stem_width, 7, 2, 3, bias=False),
            nn.BatchNorm2d(stem_width),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, 2, 1)
        stages = []
        cin = stem_width
        for i, (w, n) in enumerate(zip(widths, blocks)):
            layers = [BasicBlock(cin, w, 1 if i == 0 else 2)]
            layers += [BasicBlock(w, w) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.project = nn.Linear(cin, embedding_dim)
        self.skip_widths = (stem_width, *widths[:-1])
        self.out_width = cin

    def features(self, x):
        """Return (skip activations shallow->deep, deepest activation)."""
        s0 = self.stem(x)
        h = self.pool(s0)
        skips = [s0]
        for stage in self.stages:
            h = stage(h)
            skips.append(h)
        return skips[:-1], skips[-1]

    def embed(self, deepest):
        return self.project(torch.flatten(nn.functional.adaptive_avg_pool2d(deepest, 1), 1))

    def forward(self, x):
        return self.embed(self.features(x)[1])


def _up(cin, cout):
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 2, 2, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


def _fuse(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class UNetDecoder(nn.Module):
    """Transposed-convolution decoder fusing mirrored encoder activations."""

    def __init__(self, deep_width: int, skip_widths, widths, out_channels: int):
        super().__init__()
        # skip_widths shallow->deep: stem(/2), stage1(/4), stage2(/8), stage3(/16)
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        cin = deep_width
        for skip_w, w in zip(reversed(skip_widths), widths):
            self.ups.append(_up(cin, w))
            self.fuses.append(_fuse(w + skip_w, w))
            cin = w
        self.final_up = _up(cin, cin)
        self.out = nn.Conv2d(cin, out_channels, 3, 1, 1)

    def forward(self, skips, deepest, use_skips: bool = True):
        h = deepest
        for up, fuse, skip in zip(self.ups, self.fuses, reversed(skips)):
            h = up(h)
            if not use_skips:
                skip = torch.zeros_like(skip)
            h = fuse(torch.cat([h, skip], dim=1))
        return self.out(self.final_up(h))


class UNetGenerator(nn.Module):
    """Deterministic conditional autoencoder: reconstructs its input and exposes the embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.scale.channels
        self.encoder = ResidualEncoder(
            c, config.stem_width, config.encoder_widths, config.encoder_blocks, config.embedding_dim
        )
        dec_widths = config.decoder_widths or tuple(reversed((config.stem_width, *config.encoder_widths[:-1])))
        self.decoder = UNetDecoder(self.encoder.out_width, self.encoder.skip_widths, dec_widths, c)

    def forward(self, x, use_skips: bool = True):
        skips, deepest = self.encoder.features(x)
        return self.decoder(skips, deepest, use_skips), self.encoder.embed(deepest)


class ConditionalDiscriminator(nn.Module):
    """Strided 3x3 conv stack over [condition, candidate] channels with a scalar logit head."""

    def __init__(self, in_channels: int, widths, image_size: int):
        super().__init__()
        layers = []
        cin = 2 * in_channels
        for w in widths:
            layers += [nn.Conv2d(cin, w, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
            cin = w
        self.convs = nn.Sequential(*layers)
        side = image_size // 2 ** len(widths)
        self.head = nn.Linear(cin * side * side, 1)
        self.widths = tuple(widths)

    def forward(self, candidate, condition):
        h = self.convs(torch.cat([condition, candidate], dim=1))
        return self.head(torch.flatten(h, 1)).squeeze(1)


class PerceptualNet(nn.Module):
    """Frozen VGG-style extractor truncated after the ReLU of conv layer ``layer``."""

    def __init__(self, in_channels: int, plan, layer: int = -1):
        super().__init__()
        n_convs = sum(1 for v in plan if v != "M")
        if not -n_convs <= layer < n_convs:
            raise IndexError(f"perceptual layer {layer} out of range for {n_convs} conv layers")
        self.layer = layer % n_convs
        mods: list[nn.Module] = []
        cin, seen = in_channels, 0
        for v in plan:
            if v == "M":
                mods.append(nn.MaxPool2d(2, 2))
                continue
            mods += [nn.Conv2d(cin, v, 3, 1, 1), nn.ReLU(inplace=False)]
            cin = v
            if seen == self.layer:
                break
            seen += 1
        self.features = nn.Sequential(*mods)
        self.out_channels = cin
        self.n_pools = sum(isinstance(m, nn.MaxPool2d) for m in mods)

    def output_shape(self, image_size: int) -> tuple[int, int, int]:
        side = image_size // 2**self.n_pools
        return self.out_channels, side, side

    def forward(self, x):
        return self.features(x)

    def train(self, mode: bool = True):
        # never leaves eval mode
        return super().train(False)


def _init_perceptual(net: PerceptualNet, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                m.bias.zero_()


def _load_perceptual_weights(net: PerceptualNet, path: str) -> None:
    """Load conv weights in layer order from a state dict (e.g. torchvision VGG16 ``features``)."""
    state = torch.load(path, map_location="cpu", weights_only=True)
    weights = [v for k, v in state.items() if k.endswith("weight") and v.ndim == 4]
    biases = [v for k, v in state.items() if k.endswith("bias") and v.ndim == 1]
    convs = [m for m in net.modules() if isinstance(m, nn.Conv2d)]
    if len(weights) < len(convs):
        raise ValueError(f"{path}: holds {len(weights)} conv layers, need {len(convs)}")
    with torch.no_grad():
        for conv, w, b in zip(convs, weights, biases):
            if conv.weight.shape != w.shape:
                raise ValueError(f"{path}: shape {tuple(w.shape)} does not match {tuple(conv.weight.shape)}")
            conv.weight.copy_(w)
            conv.bias.copy_(b)


@dataclass
class ModelBundle:
    config: ModelConfig
    generator_V: UNetGenerator
    generator_I: UNetGenerator
    discriminator_V: ConditionalDiscriminator
    discriminator_I: ConditionalDiscriminator
    perceptual_net: PerceptualNet
    parameter_counts: dict[str, int] = field(default_factory=dict)

    @property
    def encoders(self) -> tuple[ResidualEncoder, ResidualEncoder]:
        return self.generator_V.encoder, self.generator_I.encoder

    def networks(self) -> dict[str, nn.Module]:
        return {
            "encoder_V": self.generator_V.encoder,
            "decoder_V": self.generator_V.decoder,
            "encoder_I": self.generator_I.encoder,
            "decoder_I": self.generator_I.decoder,
            "discriminator_V": self.discriminator_V,
            "discriminator_I": self.discriminator_I,
            "perceptual": self.perceptual_net,
        }

    def generator_parameters(self) -> list[nn.Parameter]:
        return [*self.generator_V.parameters(), *self.generator_I.parameters()]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return [*self.discriminator_V.parameters(), *self.discriminator_I.parameters()]

    def train(self, mode: bool = True) -> "ModelBundle":
        for net in (self.generator_V, self.generator_I, self.discriminator_V, self.discriminator_I):
            net.train(mode)
        return self

    def eval(self) -> "ModelBundle":
        return self.train(False)

    def summary(self) -> dict:
        size = self.config.scale.size
        return {
            "parameter_counts": dict(self.parameter_counts),
            "discriminator_widths": list(self.discriminator_V.widths),
            "embedding_dim": self.config.embedding_dim,
            "perceptual_layer": self.perceptual_net.layer,
            "perceptual_feature_shape": list(self.perceptual_net.output_shape(size)),
        }


def instantiate_models(config: ModelConfig) -> ModelBundle:
    """Build both spectral branches with independent weights drawn from ``config.weight_seed``."""
    config.validate()
    prof = config.scale
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.weight_seed)
        g_v = UNetGenerator(config)
        g_i = UNetGenerator(config)
        d_v = ConditionalDiscriminator(prof.channels, config.discriminator_widths, prof.size)
        d_i = ConditionalDiscriminator(prof.channels, config.discriminator_widths, prof.size)
        phi = PerceptualNet(prof.channels, config.perceptual_plan, config.perceptual_layer)
    if config.perceptual_weights:
        _load_perceptual_weights(phi, config.perceptual_weights)
    else:
        _init_perceptual(phi, config.weight_seed + 7919)
    phi.requires_grad_(False)
    phi.eval()
    bundle = ModelBundle(config, g_v, g_i, d_v, d_i, phi)
    bundle.parameter_counts = {
        name: sum(p.numel() for p in net.parameters()) for name, net in bundle.networks().items()
    }
    return bundle


def _check_images(images: torch.Tensor, what: str = "images") -> None:
    if images.ndim != 4:
        raise ValueError(f"{what} must be a B x C x H x W tensor, got shape {tuple(images.shape)}")


def _check_profile_shape(module: nn.Module, images: torch.Tensor) -> None:
    _check_images(images)
    first = next(m for m in module.modules() if isinstance(m, nn.Conv2d))
    if images.shape[1] != first.in_channels:
        raise ValueError(f"expected {first.in_channels} channels, got {images.shape[1]}")
    if images.shape[-1] % 32 or images.shape[-2] % 32:
        raise ValueError(f"spatial size {tuple(images.shape[-2:])} must be divisible by 32")


def encode(encoder: ResidualEncoder, images: torch.Tensor) -> torch.Tensor:
    """Embed a batch in inference mode; returns a ``B x |z|`` matrix."""
    _check_profile_shape(encoder, images)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            return encoder(images)
    finally:
        encoder.train(was_training)


def reconstruct(generator: UNetGenerator, images: torch.Tensor, use_skips: bool = True) -> torch.Tensor:
    _check_profile_shape(generator.encoder, images)
    return generator(images, use_skips=use_skips)[0]


def discriminate(discriminator: ConditionalDiscriminator, candidate: torch.Tensor, condition: torch.Tensor):
    """Probability that ``candidate`` is a real image given ``condition``."""
    _check_images(candidate, "candidate")
    if candidate.shape != condition.shape:
        raise ValueError(f"candidate {tuple(candidate.shape)} and condition {tuple(condition.shape)} differ")
    return torch.sigmoid(discriminator(candidate, condition))


def perceptual_features(perceptual_net: PerceptualNet, images: torch.Tensor) -> torch.Tensor:
    """Activations of the configured layer; gradients reach ``images`` only."""
    _check_profile_shape(perceptual_net, images)
    return perceptual_net(images)


# --------------------------------------------------------------------------
# checkpoints


def state_hash(module: nn.Module) -> str:
    """SHA-256 over parameter/buffer names and raw tensor bytes."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(bundle: ModelBundle, directory: str | Path, encoders_only: bool = False, extra: dict | None = None):
    """Write ``config.json``, one ``<network>.pt`` blob per network and ``hashes.json``.

    The directory is assembled in a temporary sibling and renamed into place, so
    an interrupted write leaves any previous checkpoint at ``directory`` intact.
    """
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        names = ENCODER_NAMES if encoders_only else NETWORK_NAMES
        nets = bundle.networks()
        hashes = {}
        for name in names:
            torch.save(nets[name].state_dict(), tmp / f"{name}.pt")
            hashes[name] = state_hash(nets[name])
        doc = {"model": bundle.config.to_dict(), "networks": list(names), **(extra or {})}
        (tmp / "config.json").write_text(json.dumps(doc, indent=2) + "\n")
        (tmp / "hashes.json").write_text(json.dumps(hashes, indent=2) + "\n")
        if directory.exists():
            old = directory.with_name(directory.name + ".old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(directory, old)
            os.replace(tmp, directory)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def strip_to_encoders(src: str | Path, dst: str | Path) -> Path:
    """Copy only the encoder blobs (plus config and hashes) of a checkpoint."""
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    doc = json.loads((src / "config.json").read_text())
    doc["networks"] = list(ENCODER_NAMES)
    hashes = json.loads((src / "hashes.json").read_text())
    for name in ENCODER_NAMES:
        shutil.copyfile(src / f"{name}.pt", dst / f"{name}.pt")
    (dst / "config.json").write_text(json.dumps(doc, indent=2) + "\n")
    (dst / "hashes.json").write_text(json.dumps({k: hashes[k] for k in ENCODER_NAMES}, indent=2) + "\n")
    return dst


def _load_state(net: nn.Module, directory: Path, name: str, hashes: dict) -> None:
    net.load_state_dict(torch.load(directory / f"{name}.pt", map_location="cpu", weights_only=True))
    if name in hashes and state_hash(net) != hashes[name]:
        raise ValueError(f"{directory / name}.pt: content hash mismatch")


def load_encoders(directory: str | Path) -> tuple[ModelConfig, ResidualEncoder, ResidualEncoder]:
    """Load just the two encoders; works for full and encoder-only checkpoints."""
    directory = Path(directory)
    doc = json.loads((directory / "config.json").read_text())
    hashes = json.loads((directory / "hashes.json").read_text())
    config = ModelConfig.from_dict(doc["model"])
    c = config.scale.channels
    encs = []
    for name in ENCODER_NAMES:
        enc = ResidualEncoder(c, config.stem_width, config.encoder_widths, config.encoder_blocks, config.embedding_dim)
        _load_state(enc, directory, name, hashes)
        enc.eval()
        encs.append(enc)
    return config, encs[0], encs[1]


def load_checkpoint(directory: str | Path) -> ModelBundle:
    directory = Path(directory)
    doc = json.loads((directory / "config.json").read_text())
    missing = [n for n in NETWORK_NAMES if n not in doc["networks"]]
    if missing:
        raise ValueError(f"{directory} is a partial checkpoint (missing {missing}); use load_encoders")
    hashes = json.loads((directory / "hashes.json").read_text())
    bundle = instantiate_models(ModelConfig.from_dict(doc["model"]))
    for name, net in bundle.networks().items():
        _load_state(net, directory, name, hashes)
    bundle.perceptual_net.requires_grad_(False)
    return bundle
