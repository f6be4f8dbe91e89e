"""Tile and location encoders plus the shared-space projection heads.

The tile encoder is a small strided conv net: conv -> scale-shift norm ->
relu per stage, global average pooling, then a linear layer to the feature
dimension. The location encoder lifts (lat, lon) through a sinusoidal wrap
(optionally concatenated with normalized environmental covariates) into an
MLP with residual relu blocks. Five bias-free linear heads project tile
features (three heads) and the raw text / location embeddings (one each)
into one shared unit-norm space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodata import COVARIATE_CHANNELS
from .optim import ParameterStore
from .tape import Node, Tape, l2_normalize_rows

PEFT_MODES = ("full", "scale_shift")

IMAGE_HEADS = ("heads.image.weight", "heads.image_to_text.weight",
               "heads.image_to_location.weight")


@dataclass(frozen=True)
class ImageEncoderConfig:
    in_channels: int = 3
    in_size: int = 32
    widths: tuple[int, ...] = (16, 32)
    d_img: int = 128
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    norm_eps: float = 1e-5
    norm_momentum: float = 0.1

    def __post_init__(self):
        if self.d_img < 8:
            raise ValueError("d_img must be >= 8")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("conv stage widths must be positive")


@dataclass(frozen=True)
class LocationEncoderConfig:
    use_covariates: bool = True
    hidden: int = 64
    depth: int = 2
    d_loc: int = 64  # 256 mirrors the full-scale setup

    def __post_init__(self):
        if self.d_loc < 8:
            raise ValueError("d_loc must be >= 8")
        if self.hidden < 1 or self.depth < 1:
            raise ValueError("hidden width and depth must be >= 1")

    @property
    def input_dim(self) -> int:
        return 4 + (COVARIATE_CHANNELS if self.use_covariates else 0)


@dataclass(frozen=True)
class ModelConfig:
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    location: LocationEncoderConfig = field(default_factory=LocationEncoderConfig)
    d_txt: int = 64
    embed_dim: int = 64  # 512 mirrors the full-scale setup

    def __post_init__(self):
        if self.embed_dim < 1 or self.d_txt < 1:
            raise ValueError("embedding dimensions must be positive")


def location_input_features(lat: float, lon: float,
                            covariates: np.ndarray | None = None) -> np.ndarray:
    """Sinusoidal coordinate wrap, optionally joined with covariates in [-1, 1].

    Longitude is unrestricted (the wrap is 360-degree periodic); latitude must
    be a real coordinate.
    """
    if not -90.0 <= lat <= 90.0 or not np.isfinite(lon):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")
    feats = [math.sin(math.pi * lon / 180.0), math.cos(math.pi * lon / 180.0),
             math.sin(math.pi * lat / 90.0), math.cos(math.pi * lat / 90.0)]
    if covariates is None:
        return np.array(feats)
    covariates = np.asarray(covariates, dtype=np.float64)
    if np.any(np.abs(covariates) > 1.0 + 1e-9):
        raise ValueError("covariates must be normalized to [-1, 1]")
    return np.concatenate([feats, covariates])


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Parameter store, normalization statistics, and eval-mode encoders."""

    def __init__(self, cfg: ModelConfig, params: ParameterStore,
                 stats: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.stats = stats

    @classmethod
    def initialize(cls, cfg: ModelConfig,
                   seed: int | np.random.SeedSequence) -> "Model":
        rng = np.random.default_rng(seed)
        params = ParameterStore()
        stats: dict[str, np.ndarray] = {}

        img = cfg.image
        in_ch = img.in_channels
        for i, width in enumerate(img.widths, start=1):
            fan_in = in_ch * img.kernel * img.kernel
            params.add(f"img.conv{i}.kernel",
                       _uniform_fan_in(rng, (width, in_ch, img.kernel, img.kernel), fan_in))
            params.add(f"img.norm{i}.gamma", np.ones(width))
            params.add(f"img.norm{i}.beta", np.zeros(width))
            stats[f"img.norm{i}.mean"] = np.zeros(width)
            stats[f"img.norm{i}.var"] = np.ones(width)
            in_ch = width
        params.add("img.fc.weight", _uniform_fan_in(rng, (in_ch, img.d_img), in_ch))
        params.add("img.fc.bias", _uniform_fan_in(rng, (img.d_img,), in_ch))

        loc = cfg.location
        params.add("loc.fc0.weight", _uniform_fan_in(rng, (loc.input_dim, loc.hidden),
                                                     loc.input_dim))
        params.add("loc.fc0.bias", _uniform_fan_in(rng, (loc.hidden,), loc.input_dim))
        for i in range(1, loc.depth):
            params.add(f"loc.res{i}.weight", _uniform_fan_in(rng, (loc.hidden, loc.hidden),
                                                             loc.hidden))
            params.add(f"loc.res{i}.bias", _uniform_fan_in(rng, (loc.hidden,), loc.hidden))
        params.add("loc.out.weight", _uniform_fan_in(rng, (loc.hidden, loc.d_loc), loc.hidden))
        params.add("loc.out.bias", _uniform_fan_in(rng, (loc.d_loc,), loc.hidden))

        d = cfg.embed_dim
        for name in IMAGE_HEADS:
            params.add(name, _uniform_fan_in(rng, (img.d_img, d), img.d_img))
        params.add("heads.text.weight", _uniform_fan_in(rng, (cfg.d_txt, d), cfg.d_txt))
        params.add("heads.location.weight", _uniform_fan_in(rng, (loc.d_loc, d), loc.d_loc))
        return cls(cfg, params, stats)

    def copy_stats(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.stats.items()}

    # -- eval-mode paths (fresh tape, batch statistics frozen) --------------

    def _leaves(self, tape: Tape, names: list[str]) -> dict[str, Node]:
        return {name: tape.leaf(name, self.params.get(name)) for name in names}

    def image_features(self, pixels: np.ndarray) -> np.ndarray:
        """Eval-mode features for a batch of tiles, shape (n, d_img)."""
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 4:
            raise ValueError(f"expected (n, C, H, W) pixels, got shape {pixels.shape}")
        tape = Tape()
        x = tape.leaf("pixels", pixels)
        leaves = self._leaves(tape, [n for n in self.params.names() if n.startswith("img.")])
        feat, _ = image_feature_graph(tape, leaves, self.cfg.image, x,
                                      stats=self.stats, training=False)
        return feat.value

    def encode_image(self, pixels: np.ndarray) -> np.ndarray:
        """Eval-mode feature vector for one (C, H, W) tile."""
        pixels = np.asarray(pixels, dtype=np.float64)
        img = self.cfg.image
        if pixels.shape != (img.in_channels, img.in_size, img.in_size):
            raise ValueError(f"expected pixels of shape "
                             f"({img.in_channels}, {img.in_size}, {img.in_size}), "
                             f"got {pixels.shape}")
        return self.image_features(pixels[None])[0]

    def location_embeddings(self, features: np.ndarray) -> np.ndarray:
        """Location-encoder outputs for a batch of input features, (n, d_loc)."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        expected = self.cfg.location.input_dim
        if features.shape[1] != expected:
            raise ValueError(f"location encoder expects {expected} input features "
                             f"(use_covariates={self.cfg.location.use_covariates}), "
                             f"got {features.shape[1]}")
        tape = Tape()
        x = tape.leaf("locfeat", features)
        leaves = self._leaves(tape, [n for n in self.params.names() if n.startswith("loc.")])
        return location_feature_graph(tape, leaves, self.cfg.location, x).value

    def encode_location(self, lat: float, lon: float,
                        covariates: np.ndarray | None = None) -> np.ndarray:
        if self.cfg.location.use_covariates and covariates is None:
            raise ValueError("this model requires covariates for encode_location")
        if not self.cfg.location.use_covariates and covariates is not None:
            raise ValueError("covariates supplied but disabled in the model config")
        return self.location_embeddings(location_input_features(lat, lon, covariates))[0]

    def _project(self, head: str, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return l2_normalize_rows(rows @ self.params.get(head))

    def project_image_heads(self, feature: np.ndarray):
        """Unit-norm (z_image, z_text, z_location) triplet for one tile feature."""
        outs = [self._project(name, feature)[0] for name in IMAGE_HEADS]
        return tuple(outs)

    def project_text(self, raw: np.ndarray) -> np.ndarray:
        return self._project("heads.text.weight", raw)[0]

    def project_location(self, loc_emb: np.ndarray) -> np.ndarray:
        return self._project("heads.location.weight", loc_emb)[0]

    def project_text_rows(self, rows: np.ndarray) -> np.ndarray:
        return self._project("heads.text.weight", rows)

    def tile_text_embeddings(self, pixels: np.ndarray) -> np.ndarray:
        """Unit-norm text-head embeddings for a batch of tiles (retrieval space)."""
        return self._project("heads.image_to_text.weight", self.image_features(pixels))


# -- graph builders (shared by training and eval paths) ----------------------


def image_feature_graph(tape: Tape, leaves: dict[str, Node], cfg: ImageEncoderConfig,
                        x: Node, stats: dict[str, np.ndarray], training: bool):
    """Conv stages + pooling + linear head; returns (feature node, norm nodes)."""
    norm_nodes: list[tuple[str, Node]] = []
    h = x
    for i in range(1, len(cfg.widths) + 1):
        h = tape.conv2d(h, leaves[f"img.conv{i}.kernel"], stride=cfg.stride,
                        padding=cfg.padding)
        norm = tape.channel_norm(h, leaves[f"img.norm{i}.gamma"], leaves[f"img.norm{i}.beta"],
                                 training=training, eps=cfg.norm_eps,
                                 running_mean=None if training else stats[f"img.norm{i}.mean"],
                                 running_var=None if training else stats[f"img.norm{i}.var"])
        norm_nodes.append((f"img.norm{i}", norm))
        h = tape.relu(norm)
    pooled = tape.global_avg_pool(h)
    feat = tape.add(tape.matmul(pooled, leaves["img.fc.weight"]), leaves["img.fc.bias"])
    return feat, norm_nodes


def location_feature_graph(tape: Tape, leaves: dict[str, Node],
                           cfg: LocationEncoderConfig, x: Node) -> Node:
    h = tape.relu(tape.add(tape.matmul(x, leaves["loc.fc0.weight"]), leaves["loc.fc0.bias"]))
    for i in range(1, cfg.depth):
        block = tape.relu(tape.add(tape.matmul(h, leaves[f"loc.res{i}.weight"]),
                                   leaves[f"loc.res{i}.bias"]))
        h = tape.add(h, block)
    return tape.add(tape.matmul(h, leaves["loc.out.weight"]), leaves["loc.out.bias"])


def head_graph(tape: Tape, leaves: dict[str, Node], feat: Node, head: str) -> Node:
    return tape.l2norm_rows(tape.matmul(feat, leaves[head]))


def trainable_mask(mode: str, params: ParameterStore,
                   freeze_location: bool = False) -> frozenset[str]:
    """Names the optimizer may touch under the given fine-tuning mode.

    `full` covers everything; `scale_shift` restricts the tile encoder to its
    normalization scale/shift parameters while heads (and, unless frozen, the
    location encoder) stay trainable.
    """
    if mode not in PEFT_MODES:
        raise ValueError(f"unknown fine-tuning mode {mode!r}, expected one of {PEFT_MODES}")
    names = set(params.names())
    if mode == "scale_shift":
        def keep(name: str) -> bool:
            if name.startswith("img."):
                return ".norm" in name
            return True
        names = {n for n in names if keep(n)}
    if freeze_location:
        names = {n for n in names if not n.startswith("loc.")}
    return frozenset(names)
