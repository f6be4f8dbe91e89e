"""Training loop for the three-term contrastive objective, plus checkpoints.

Each step draws a batch without replacement (reshuffled per epoch, drop-last),
augments the temporal tile pair, builds the full loss graph on a fresh tape,
backpropagates, and applies Adam restricted to the active fine-tuning mask.
Normalization running statistics update with momentum after every step. All
randomness flows from one seeded generator whose state is checkpointed, so a
saved run resumes bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import augment_geometric, augment_photometric, fit_to_input
from .contrastive import LossConfig, trimodal_loss_graph
from .encoders import (ImageEncoderConfig, LocationEncoderConfig, Model, ModelConfig,
                       PEFT_MODES, head_graph, image_feature_graph,
                       location_feature_graph, location_input_features, trainable_mask)
from .geodata import TrainingSample
from .optim import AdamState, ParameterStore, adam_step
from .tape import Tape, backward, channel_batch_stats

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 64
    lr: float = 1e-4
    temperature: float = 0.07
    peft: str = "full"
    freeze_location: bool = False
    seed: int = 0
    crop_size: int = 28
    jitter: float = 0.05
    channel_mix: float = 0.1
    matching_radius: float = 0.05
    image_weight: float = 1.0
    text_weight: float = 1.0
    location_weight: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if self.lr <= 0 or self.temperature <= 0:
            raise ValueError("learning rate and temperature must be positive")
        if self.peft not in PEFT_MODES:
            raise ValueError(f"unknown fine-tuning mode {self.peft!r}")
        if self.crop_size < 1 or self.crop_size > self.model.image.in_size:
            raise ValueError("crop size must be in [1, model input size]")
        if self.jitter < 0 or self.channel_mix < 0 or self.matching_radius <= 0:
            raise ValueError("augmentation scales must be >= 0 and radius positive")
        if min(self.image_weight, self.text_weight, self.location_weight) < 0:
            raise ValueError("loss-term weights must be >= 0")

    def loss_config(self) -> LossConfig:
        return LossConfig(temperature=self.temperature,
                          image_weight=self.image_weight,
                          text_weight=self.text_weight,
                          location_weight=self.location_weight)


def config_to_dict(config: TrainConfig) -> dict:
    out = dataclasses.asdict(config)
    out["model"]["image"]["widths"] = list(config.model.image.widths)
    return out


def config_from_dict(obj: dict) -> TrainConfig:
    obj = dict(obj)
    model = obj.pop("model", {})
    image = dict(model.get("image", {}))
    if "widths" in image:
        image["widths"] = tuple(image["widths"])
    location = dict(model.get("location", {}))
    model_cfg = ModelConfig(image=ImageEncoderConfig(**image),
                            location=LocationEncoderConfig(**location),
                            d_txt=model.get("d_txt", 64),
                            embed_dim=model.get("embed_dim", 64))
    return TrainConfig(model=model_cfg, **obj)


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]
    adam: AdamState
    rng_state: dict
    epoch: int
    epoch_losses: list[float]
    step_losses: list[float]


def initial_model(config: TrainConfig) -> Model:
    """The randomly initialized model a run with this config starts from."""
    init_ss, _ = np.random.SeedSequence(config.seed).spawn(2)
    return Model.initialize(config.model, seed=init_ss)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    params = ParameterStore()
    for name in sorted(ckpt.params):
        params.add(name, ckpt.params[name].copy())
    return Model(ckpt.config.model, params, {k: v.copy() for k, v in ckpt.stats.items()})


def build_training_graph(model: Model, batch: dict[str, np.ndarray],
                         mask: frozenset[str], loss_config: LossConfig,
                         training: bool = True):
    """Full loss graph: two tile towers, the location tower, all five heads.

    Returns the tape (outputs: loss and per-term breakdown) and the list of
    normalization nodes for running-statistics harvesting.
    """
    tape = Tape()
    leaves = {name: tape.leaf(name, model.params.get(name), trainable=name in mask)
              for name in sorted(model.params.names())}
    tiles_a = tape.leaf("batch.tiles_a", batch["tiles_a"])
    tiles_b = tape.leaf("batch.tiles_b", batch["tiles_b"])
    locfeat = tape.leaf("batch.locfeat", batch["locfeat"])
    text = tape.leaf("batch.text", batch["text"])

    img_cfg = model.cfg.image
    feat_a, norms_a = image_feature_graph(tape, leaves, img_cfg, tiles_a,
                                          stats=model.stats, training=training)
    feat_b, norms_b = image_feature_graph(tape, leaves, img_cfg, tiles_b,
                                          stats=model.stats, training=training)
    z_t1 = head_graph(tape, leaves, feat_a, "heads.image.weight")
    z_t2_aug = head_graph(tape, leaves, feat_b, "heads.image.weight")
    z_txt = head_graph(tape, leaves, feat_a, "heads.image_to_text.weight")
    z_loc = head_graph(tape, leaves, feat_a, "heads.image_to_location.weight")
    loc_emb = location_feature_graph(tape, leaves, model.cfg.location, locfeat)
    e_txt = head_graph(tape, leaves, text, "heads.text.weight")
    e_loc = head_graph(tape, leaves, loc_emb, "heads.location.weight")

    total, terms = trimodal_loss_graph(tape, z_t1, z_t2_aug, z_txt, e_txt,
                                       z_loc, e_loc, loss_config)
    tape.mark_output("loss", total)
    for name, node in terms.items():
        tape.mark_output(f"loss_{name}", node)
    return tape, norms_a + norms_b


def assemble_batch(samples: list[TrainingSample], config: TrainConfig,
                   rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Augment and stack one batch. tile_a is deterministically resized and
    photometrically jittered; tile_b additionally gets flips and a random crop."""
    in_size = config.model.image.in_size
    use_cov = config.model.location.use_covariates
    tiles_a, tiles_b, locfeat, text = [], [], [], []
    for sample in samples:
        seed_geo = int(rng.integers(2 ** 63))
        seed_pa = int(rng.integers(2 ** 63))
        seed_pb = int(rng.integers(2 ** 63))
        tile_a = augment_photometric(fit_to_input(sample.tile_a, in_size),
                                     config.jitter, config.channel_mix, seed_pa)
        tile_b = augment_geometric(sample.tile_b, config.crop_size, seed_geo,
                                   out_size=in_size)
        tile_b = augment_photometric(tile_b, config.jitter, config.channel_mix, seed_pb)
        tiles_a.append(tile_a.pixels)
        tiles_b.append(tile_b.pixels)
        locfeat.append(location_input_features(sample.location.lat, sample.location.lon,
                                               sample.covariates if use_cov else None))
        text.append(sample.text.embedding)
    return {"tiles_a": np.stack(tiles_a), "tiles_b": np.stack(tiles_b),
            "locfeat": np.stack(locfeat), "text": np.stack(text)}


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return n_samples // batch_size


def _update_running_stats(model: Model, tape: Tape, norm_nodes) -> None:
    momentum = model.cfg.image.norm_momentum
    for key, node in norm_nodes:
        x = tape.nodes[node.inputs[0]].value
        mean, var = channel_batch_stats(x)
        model.stats[f"{key}.mean"] = (1 - momentum) * model.stats[f"{key}.mean"] + momentum * mean
        model.stats[f"{key}.var"] = (1 - momentum) * model.stats[f"{key}.var"] + momentum * var


def train(config: TrainConfig, samples: list[TrainingSample],
          resume: Checkpoint | None = None) -> Checkpoint:
    """Run the optimization and return the final checkpoint.

    With `resume`, continues a saved run from its epoch boundary; the
    stitched run is bit-identical to an uninterrupted one.
    """
    config.validate()
    if len(samples) < config.batch_size:
        raise ValueError(f"dataset of {len(samples)} samples cannot fill one batch "
                         f"of {config.batch_size}")

    if resume is None:
        model = initial_model(config)
        adam = AdamState(lr=config.lr)
        _, loop_ss = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(loop_ss)
        start_epoch = 0
        epoch_losses: list[float] = []
        step_losses: list[float] = []
    else:
        model = model_from_checkpoint(resume)
        adam = AdamState(lr=resume.adam.lr, beta1=resume.adam.beta1,
                         beta2=resume.adam.beta2, eps=resume.adam.eps, t=resume.adam.t,
                         m={k: v.copy() for k, v in resume.adam.m.items()},
                         v={k: v.copy() for k, v in resume.adam.v.items()})
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        epoch_losses = list(resume.epoch_losses)
        step_losses = list(resume.step_losses)

    mask = trainable_mask(config.peft, model.params, config.freeze_location)
    loss_cfg = config.loss_config()
    n = config.batch_size
    per_epoch = steps_per_epoch(len(samples), n)
    global_step = len(step_losses)

    for _epoch in range(start_epoch, config.epochs):
        order = rng.permutation(len(samples))
        epoch_step_losses = []
        for s in range(per_epoch):
            chosen = [samples[int(i)] for i in order[s * n:(s + 1) * n]]
            batch = assemble_batch(chosen, config, rng)
            tape, norm_nodes = build_training_graph(model, batch, mask, loss_cfg)
            loss = float(tape.output_value("loss"))
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {global_step}")
            grads = backward(tape, output="loss")
            adam_step(model.params, grads, adam)
            _update_running_stats(model, tape, norm_nodes)
            epoch_step_losses.append(loss)
            step_losses.append(loss)
            global_step += 1
        epoch_losses.append(float(np.mean(epoch_step_losses)))

    return Checkpoint(config=config, params=model.params.copy_values(),
                      stats=model.copy_stats(), adam=adam,
                      rng_state=rng.bit_generator.state, epoch=config.epochs,
                      epoch_losses=epoch_losses, step_losses=step_losses)


# -- checkpoint persistence ---------------------------------------------------


def _checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".json":
        prefix = path.with_suffix("")
    elif path.is_dir():
        prefix = path / "ckpt"
    else:
        prefix = path
    return prefix.with_suffix(".json"), prefix.with_suffix(".bin")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> tuple[Path, Path]:
    """Write `<prefix>.json` (header) and `<prefix>.bin` (float64-LE tensors)."""
    json_path, bin_path = _checkpoint_paths(path)
    tensors = []
    blobs = []
    groups = (("param", ckpt.params), ("stat", ckpt.stats),
              ("adam_m", ckpt.adam.m), ("adam_v", ckpt.adam.v))
    for kind, tensor_map in groups:
        for name in sorted(tensor_map):
            arr = np.ascontiguousarray(tensor_map[name], dtype=np.float64)
            tensors.append({"name": name, "shape": list(arr.shape), "kind": kind})
            blobs.append(arr.astype("<f8").tobytes())
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(ckpt.config),
        "dtype": "f64le",
        "tensors": tensors,
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps, "t": ckpt.adam.t},
        "epoch_losses": ckpt.epoch_losses,
        "step_losses": ckpt.step_losses,
    }
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    bin_path.write_bytes(b"".join(blobs))
    return json_path, bin_path


def load_checkpoint(path: str | Path) -> Checkpoint:
    json_path, bin_path = _checkpoint_paths(path)
    if not json_path.exists():
        raise ValueError(f"checkpoint header not found: {json_path}")
    header = json.loads(json_path.read_text())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version mismatch: got {header.get('version')}, "
                         f"expected {CHECKPOINT_VERSION}")
    config = config_from_dict(header["config"])

    raw = bin_path.read_bytes()
    expected = sum(int(np.prod(t["shape"])) if t["shape"] else 1 for t in header["tensors"])
    if len(raw) != expected * 8:
        raise ValueError(f"blob length mismatch: {len(raw)} bytes, "
                         f"expected {expected * 8}")
    blob = np.frombuffer(raw, dtype="<f8")

    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "stat": {},
                                                "adam_m": {}, "adam_v": {}}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = blob[offset:offset + count].reshape(shape).copy()
        offset += count
        if entry["kind"] not in groups:
            raise ValueError(f"unknown tensor kind {entry['kind']!r} "
                             f"for field {entry['name']!r}")
        groups[entry["kind"]][entry["name"]] = arr

    reference = Model.initialize(config.model, seed=0)
    for name, value in reference.params.items():
        if name not in groups["param"]:
            raise ValueError(f"checkpoint missing tensor {name!r}")
        if groups["param"][name].shape != value.shape:
            raise ValueError(f"shape mismatch for tensor {name!r}: "
                             f"{groups['param'][name].shape} vs {value.shape}")
    for name, value in reference.stats.items():
        if name not in groups["stat"] or groups["stat"][name].shape != value.shape:
            raise ValueError(f"shape mismatch for tensor {name!r}")

    adam_cfg = header["adam"]
    adam = AdamState(lr=adam_cfg["lr"], beta1=adam_cfg["beta1"], beta2=adam_cfg["beta2"],
                     eps=adam_cfg["eps"], t=adam_cfg["t"],
                     m=groups["adam_m"], v=groups["adam_v"])
    rng_state = header["rng_state"]
    return Checkpoint(config=config, params=groups["param"], stats=groups["stat"],
                      adam=adam, rng_state=rng_state, epoch=header["epoch"],
                      epoch_losses=list(header["epoch_losses"]),
                      step_losses=list(header["step_losses"]))
