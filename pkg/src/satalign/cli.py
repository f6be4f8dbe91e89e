"""Command-line entry point.

Subcommands: synth, train, gradcheck, probe, index, retrieve, zeroshot,
eval-metrics. Every command is a pure function of its flags, input files, and
seed; outputs are written to a temporary location and renamed on success, and
a run manifest (resolved config, input hashes, wall time) lands beside each
file output. Stdout carries machine-readable TSV or JSON; logs go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .dataio import dataset_from_world, ingest_dataset, save_dataset
from .encoders import (ImageEncoderConfig, LocationEncoderConfig, Model, ModelConfig,
                       location_input_features)
from .evaluate import (ProbeConfig, accuracy, build_index, confusion_matrix,
                       fit_linear_probe, load_index, mean_top_k_accuracy, micro_f1,
                       query_index, save_index, top_k_accuracy, zero_shot_classify)
from .gradcheck import finite_diff_check
from .geodata import pair_samples
from .synthworld import SyntheticWorldConfig, generate_synthetic_world
from .training import (TrainConfig, build_training_graph, config_from_dict,
                       config_to_dict, load_checkpoint, model_from_checkpoint,
                       save_checkpoint, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


# -- manifests and atomic output ----------------------------------------------


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_path(path: str | Path) -> str:
    """Content hash of a file, or of a directory's sorted (relpath, hash) list."""
    path = Path(path)
    if path.is_file():
        return _hash_file(path)
    if path.is_dir():
        h = hashlib.sha256()
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(sub.relative_to(path)).encode())
            h.update(_hash_file(sub).encode())
        return h.hexdigest()
    raise ValueError(f"input path not found: {path}")


def _write_manifest(command: str, config: dict, seed: int | None,
                    inputs: list[Path], outputs: list[Path], started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): hash_path(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_time_s": time.monotonic() - started,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2)
    if outputs:
        anchor = Path(str(outputs[0]).rstrip("/"))
        _atomic_write_text(anchor.parent / (anchor.name + ".manifest.json"), text + "\n")
    else:
        _log(text)


def _atomic_dir(target: Path, build) -> None:
    """Build a directory under a temp name, then swap it into place."""
    target = Path(str(target).rstrip("/"))
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.parent / f".{target.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        build(tmp)
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _atomic_files(out_dir: Path, build) -> list[Path]:
    """Run `build(tmpdir)`, then move every produced file into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / f".tmp-{os.getpid()}"
    tmp.mkdir(exist_ok=True)
    try:
        produced = build(tmp)
        final = []
        for path in produced:
            dest = out_dir / path.name
            os.replace(path, dest)
            final.append(dest)
        return final
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp-{os.getpid()}"
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


# -- subcommands ---------------------------------------------------------------


def _cmd_synth(args) -> int:
    started = time.monotonic()
    overrides = _load_json_config(args.config)
    overrides["seed"] = args.seed
    config = SyntheticWorldConfig(**overrides)
    world = generate_synthetic_world(config)
    dataset = dataset_from_world(world)
    out = Path(args.out)
    _atomic_dir(out, lambda tmp: save_dataset(tmp, dataset))
    _write_manifest("synth", dataclasses.asdict(config), args.seed,
                    [Path(args.config)] if args.config else [], [out], started)
    print(json.dumps({"out": str(out), "tiles": len(world.tiles),
                      "observations": len(world.observations),
                      "species": config.n_species, "habitats": config.n_habitats},
                     sort_keys=True))
    return 0


def _train_config(args) -> TrainConfig:
    overrides = _load_json_config(args.config)
    config = config_from_dict(overrides) if overrides else TrainConfig()
    updates = {}
    for flag in ("seed", "epochs", "batch_size", "lr", "peft"):
        value = getattr(args, flag, None)
        if value is not None:
            updates[flag] = value
    if getattr(args, "freeze_location", False):
        updates["freeze_location"] = True
    config = dataclasses.replace(config, **updates)
    config.validate()
    return config


def _paired_samples(data_dir: str, config: TrainConfig):
    dataset = ingest_dataset(data_dir)
    result = pair_samples(dataset.observations, dataset.tiles, dataset.texts,
                          dataset.raster, matching_radius=config.matching_radius,
                          seed=config.seed)
    return dataset, result


def _cmd_train(args) -> int:
    started = time.monotonic()
    config = _train_config(args)
    dataset, paired = _paired_samples(args.data, config)
    _log(f"paired {len(paired.samples)} samples "
         f"({sum(paired.skips.values())} observations skipped)")
    ckpt = train(config, paired.samples)
    out_json = Path(args.out if args.out.endswith(".json") else args.out + ".json")
    final = _atomic_files(out_json.parent,
                          lambda tmp: list(save_checkpoint(ckpt, tmp / out_json.name)))
    _write_manifest("train", config_to_dict(config), config.seed,
                    [Path(args.data)] + ([Path(args.config)] if args.config else []),
                    final, started)
    print(json.dumps({"ckpt": str(final[0]), "epochs": ckpt.epoch,
                      "steps": len(ckpt.step_losses),
                      "final_epoch_loss": ckpt.epoch_losses[-1]}, sort_keys=True))
    return 0


def _gradcheck_setup(seed: int):
    """Small deterministic model and batch for the full-graph gradient check."""
    cfg = TrainConfig(
        batch_size=4, seed=seed, crop_size=8,
        model=ModelConfig(image=ImageEncoderConfig(in_size=8, widths=(4, 6), d_img=12),
                          location=LocationEncoderConfig(hidden=8, depth=2, d_loc=8),
                          d_txt=10, embed_dim=8))
    model = Model.initialize(cfg.model, seed=seed)
    rng = np.random.default_rng(seed + 1)
    n = cfg.batch_size
    locfeat = np.stack([
        location_input_features(float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)),
                                rng.uniform(-1, 1, size=20))
        for _ in range(n)])
    batch = {
        "tiles_a": rng.random((n, 3, 8, 8)),
        "tiles_b": rng.random((n, 3, 8, 8)),
        "locfeat": locfeat,
        "text": rng.normal(size=(n, cfg.model.d_txt)),
    }
    mask = frozenset(model.params.names())
    tape, _ = build_training_graph(model, batch, mask, cfg.loss_config())
    return tape


def _cmd_gradcheck(args) -> int:
    started = time.monotonic()
    tape = _gradcheck_setup(args.seed)
    report = finite_diff_check(tape, tolerance=args.tolerance)
    lines = [f"max_rel_err\t{report.max_rel_err!r}",
             f"checked\t{report.checked}",
             f"status\t{'PASS' if report.passed else 'FAIL'}"]
    print("\n".join(lines))
    outputs = []
    if args.out:
        out = Path(args.out)
        _atomic_write_text(out, json.dumps({"max_rel_err": report.max_rel_err,
                                            "checked": report.checked,
                                            "passed": report.passed},
                                           sort_keys=True) + "\n")
        outputs.append(out)
    _write_manifest("gradcheck", {"seed": args.seed, "tolerance": args.tolerance},
                    args.seed, [], outputs, started)
    return 0 if report.passed else 2


def _tile_species_targets(dataset, radius: float) -> np.ndarray:
    """Per-tile species presence: 1 when an observation of the species lies
    within the matching radius of the tile center."""
    n_species = max(o.species_id for o in dataset.observations) + 1
    targets = np.zeros((len(dataset.tiles), n_species))
    for t_idx, tile in enumerate(dataset.tiles):
        for obs in dataset.observations:
            if np.hypot(obs.lat - tile.lat, obs.lon - tile.lon) <= radius:
                targets[t_idx, obs.species_id] = 1.0
    return targets


def _probe_metrics(dataset, model: Model, task: str, seed: int,
                   probe_epochs: int, radius: float) -> dict:
    tiles = dataset.tiles
    features = model.image_features(np.stack([t.pixels for t in tiles]))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(tiles))
    n_train = max(1, int(0.75 * len(tiles)))
    train_idx, test_idx = order[:n_train], order[n_train:]
    if test_idx.size == 0:
        raise ValueError("not enough tiles to hold out a test split")
    probe_cfg = ProbeConfig(lr=1e-3, epochs=probe_epochs, seed=seed)

    if task in ("cls", "multilabel"):
        if dataset.truth is None:
            raise ValueError("this task needs ground_truth.json habitat labels")
        labels = np.array([dataset.truth.tile_habitats[t.tile_id] for t in tiles])
        k = dataset.truth.n_habitats
        if task == "cls":
            head = fit_linear_probe(None, features[train_idx], labels[train_idx],
                                    "single_label", probe_cfg)
            preds = head.predict(features[test_idx])
            return {"task": "cls",
                    "train_accuracy": accuracy(head.predict(features[train_idx]),
                                               labels[train_idx]),
                    "test_accuracy": accuracy(preds, labels[test_idx]),
                    "confusion_matrix": confusion_matrix(preds, labels[test_idx],
                                                         k).tolist()}
        onehot = np.zeros((len(tiles), k))
        onehot[np.arange(len(tiles)), labels] = 1.0
        head = fit_linear_probe(None, features[train_idx], onehot[train_idx],
                                "multi_label", probe_cfg)
        preds = head.predict(features[test_idx])
        pred_sets = [set(np.flatnonzero(row)) for row in preds]
        true_sets = [{int(labels[i])} for i in test_idx]
        return {"task": "multilabel", "micro_f1": micro_f1(pred_sets, true_sets)}

    if task == "encounter":
        targets = _tile_species_targets(dataset, radius)
        head = fit_linear_probe(None, features[train_idx], targets[train_idx],
                                "encounter_rate", probe_cfg)
        rates = head.predict(features[test_idx])
        observed = [set(np.flatnonzero(targets[i])) for i in test_idx]
        score, skipped = mean_top_k_accuracy(rates, observed)
        return {"task": "encounter", "top_k_accuracy": score,
                "skipped_empty": skipped}
    raise ValueError(f"unknown task {task!r}")


def _cmd_probe(args) -> int:
    started = time.monotonic()
    dataset = ingest_dataset(args.data)
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    metrics = _probe_metrics(dataset, model, args.task, args.seed,
                             args.probe_epochs, ckpt.config.matching_radius)
    text = json.dumps(metrics, sort_keys=True, indent=2)
    print(text)
    outputs = []
    if args.out:
        out = Path(args.out)
        _atomic_write_text(out, text + "\n")
        outputs.append(out)
    _write_manifest("probe", {"task": args.task, "seed": args.seed,
                              "probe_epochs": args.probe_epochs},
                    args.seed, [Path(args.data), Path(args.ckpt)], outputs, started)
    return 0


def _cmd_index(args) -> int:
    started = time.monotonic()
    dataset = ingest_dataset(args.data)
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    index = build_index(model, dataset.tiles)
    out_json = Path(args.out if args.out.endswith(".json") else args.out + ".json")
    final = _atomic_files(out_json.parent,
                          lambda tmp: list(save_index(index, tmp / out_json.name)))
    _write_manifest("index", {"tiles": index.n}, None,
                    [Path(args.data), Path(args.ckpt)], final, started)
    print(json.dumps({"index": str(final[0]), "tiles": index.n, "dim": index.d},
                     sort_keys=True))
    return 0


def _read_query(source: str) -> np.ndarray:
    """Query vector from a float32 .bin file, a CSV file, or an inline CSV string."""
    p = Path(source)
    if not p.exists():
        if "," in source:
            try:
                return np.array([float(v) for v in source.split(",") if v.strip()])
            except ValueError:
                raise ValueError(f"unparseable inline CSV query: {source!r}") from None
        raise ValueError(f"query file not found: {p}")
    if p.suffix in (".csv", ".txt"):
        return np.array([float(v) for v in p.read_text().replace("\n", ",").split(",")
                         if v.strip()])
    return np.frombuffer(p.read_bytes(), dtype="<f4").astype(np.float64)


def _cmd_retrieve(args) -> int:
    started = time.monotonic()
    index = load_index(args.index)
    query = _read_query(args.query)
    model = model_from_checkpoint(load_checkpoint(args.ckpt)) if args.ckpt else None
    results = query_index(index, query, k=args.k, model=model)
    for tile_id, cosine in results:
        print(f"{tile_id}\t{cosine!r}")
    header = Path(args.index)
    if header.suffix != ".json":
        header = header.with_suffix(".json")
    inputs = [header]
    if Path(args.query).exists():
        inputs.append(Path(args.query))
    if args.ckpt:
        inputs.append(Path(args.ckpt))
    _write_manifest("retrieve", {"k": args.k}, None, inputs, [], started)
    return 0


def _cmd_zeroshot(args) -> int:
    started = time.monotonic()
    dataset = ingest_dataset(args.data)
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    if args.classes:
        classes = _read_query(args.classes).reshape(-1, model.cfg.d_txt)
        labels = None
    else:
        if dataset.truth is None:
            raise ValueError("zeroshot needs --classes or a dataset with ground_truth.json")
        classes = dataset.truth.text_prototypes
        labels = [dataset.truth.tile_habitats[t.tile_id] for t in dataset.tiles]
    lines = []
    preds = []
    for tile in dataset.tiles:
        chosen = zero_shot_classify(model, tile, classes)
        preds.append(chosen)
        lines.append(f"{tile.tile_id}\t{chosen}")
    print("\n".join(lines))
    if labels is not None:
        print(f"accuracy\t{accuracy(preds, labels)!r}")
    outputs = []
    if args.out:
        out = Path(args.out)
        _atomic_write_text(out, "\n".join(lines) + "\n")
        outputs.append(out)
    inputs = [Path(args.data), Path(args.ckpt)]
    if args.classes:
        inputs.append(Path(args.classes))
    _write_manifest("zeroshot", {"classes": int(classes.shape[0])}, None,
                    inputs, outputs, started)
    return 0


def _cmd_eval_metrics(args) -> int:
    started = time.monotonic()
    preds = json.loads(Path(args.preds).read_text())
    labels = json.loads(Path(args.labels).read_text())
    if args.task == "cls":
        k = max(max(preds), max(labels)) + 1
        metrics = {"accuracy": accuracy(preds, labels),
                   "confusion_matrix": confusion_matrix(preds, labels, k).tolist()}
    elif args.task == "multilabel":
        metrics = {"micro_f1": micro_f1([set(p) for p in preds],
                                        [set(t) for t in labels])}
    elif args.task == "encounter":
        score, skipped = mean_top_k_accuracy([np.asarray(r) for r in preds],
                                             [set(t) for t in labels])
        metrics = {"top_k_accuracy": score, "skipped_empty": skipped}
    else:
        raise ValueError(f"unknown task {args.task!r}")
    print(json.dumps(metrics, sort_keys=True))
    _write_manifest("eval-metrics", {"task": args.task}, None,
                    [Path(args.preds), Path(args.labels)], [], started)
    return 0


# -- argument grammar -----------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="satalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with synthetic-world fields")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train an encoder on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.json)")
    p.add_argument("--config", help="JSON file with training-config fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--peft", choices=["full", "scale_shift"])
    p.add_argument("--freeze-location", action="store_true")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("probe", help="linear-probe a frozen checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", choices=["cls", "multilabel", "encounter"], default="cls")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe-epochs", dest="probe_epochs", type=int, default=200)
    p.add_argument("--out", help="optional metrics JSON path")
    p.set_defaults(handler=_cmd_probe)

    p = sub.add_parser("index", help="build a retrieval index over dataset tiles")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="index path prefix or .json")
    p.set_defaults(handler=_cmd_index)

    p = sub.add_parser("retrieve", help="top-k cosine retrieval against an index")
    p.add_argument("--index", required=True, help="index path prefix")
    p.add_argument("--query", required=True, help="float32 .bin or .csv vector")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ckpt", help="checkpoint for projecting raw text queries")
    p.set_defaults(handler=_cmd_retrieve)

    p = sub.add_parser("zeroshot", help="classify tiles against class text embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--classes", help="float32 .bin of class embeddings "
                                     "(default: ground-truth text prototypes)")
    p.add_argument("--out", help="optional TSV output path")
    p.set_defaults(handler=_cmd_zeroshot)

    p = sub.add_parser("eval-metrics", help="compute metrics from prediction files")
    p.add_argument("--task", choices=["cls", "multilabel", "encounter"], required=True)
    p.add_argument("--preds", required=True, help="JSON predictions")
    p.add_argument("--labels", required=True, help="JSON labels")
    p.set_defaults(handler=_cmd_eval_metrics)
    return parser


def dispatch(argv=None) -> int:
    """Run one subcommand. Exit codes: 0 success, 1 validation error,
    2 runtime failure (or a failed gradcheck)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    try:
        return args.handler(args)
    except (ValueError, TypeError, KeyError, FileNotFoundError, json.JSONDecodeError) as e:
        _log(f"error: {e}")
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
