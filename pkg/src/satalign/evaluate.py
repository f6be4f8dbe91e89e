"""Frozen-encoder evaluation: linear probes, the metric suite, the cosine
retrieval index, and zero-shot classification."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import Model
from .geodata import TileRecord
from .optim import AdamState, ParameterStore, adam_step
from .tape import l2_normalize_rows

TASK_KINDS = ("single_label", "multi_label", "encounter_rate")


@dataclass
class ProbeConfig:
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0


@dataclass
class ProbeHead:
    """Linear decoder trained on frozen features."""

    weight: np.ndarray  # (d_img, K)
    bias: np.ndarray    # (K,)
    kind: str

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.weight + self.bias

    def predict(self, features: np.ndarray):
        logits = self.logits(features)
        if self.kind == "single_label":
            return np.argmax(logits, axis=1)
        probs = _sigmoid(logits)
        if self.kind == "multi_label":
            return probs >= 0.5
        return probs  # encounter_rate: probabilities in [0, 1]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def encoder_features(model: Model, tiles: list[TileRecord] | np.ndarray) -> np.ndarray:
    if isinstance(tiles, np.ndarray):
        return model.image_features(tiles)
    return model.image_features(np.stack([t.pixels for t in tiles]))


def fit_linear_probe(model: Model | None, features_or_tiles, labels, kind: str,
                     config: ProbeConfig = ProbeConfig()) -> ProbeHead:
    """Train only a linear head on frozen features with Adam.

    `features_or_tiles` may be a precomputed (n, d_img) feature matrix or a
    list of tiles (then `model` must be given and stays untouched). Labels:
    int vector for single_label, {0,1} matrix for multi_label, and a [0, 1]
    target matrix for encounter_rate.
    """
    if kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind {kind!r}, expected one of {TASK_KINDS}")
    if isinstance(features_or_tiles, list):
        if model is None:
            raise ValueError("a model is required to probe raw tiles")
        features = encoder_features(model, features_or_tiles)
    else:
        features = np.asarray(features_or_tiles, dtype=np.float64)
    n, d = features.shape

    if kind == "single_label":
        labels = np.asarray(labels, dtype=int)
        if labels.shape != (n,):
            raise ValueError(f"single-label targets must be an int vector of length {n}")
        k = int(labels.max()) + 1
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ValueError(f"class {int(empty[0])} has no examples")
        targets = np.zeros((n, k))
        targets[np.arange(n), labels] = 1.0
    else:
        targets = np.asarray(labels, dtype=np.float64)
        if targets.ndim != 2 or targets.shape[0] != n:
            raise ValueError("targets must be an (n, K) matrix aligned with features")
        if targets.min() < 0 or targets.max() > 1:
            raise ValueError("targets must lie in [0, 1]")
        k = targets.shape[1]

    rng = np.random.default_rng(config.seed)
    bound = np.sqrt(1.0 / d)
    store = ParameterStore()
    store.add("weight", rng.uniform(-bound, bound, size=(d, k)))
    store.add("bias", np.zeros(k))
    state = AdamState(lr=config.lr)
    for _ in range(config.epochs):
        logits = features @ store.get("weight") + store.get("bias")
        probs = _softmax_rows(logits) if kind == "single_label" else _sigmoid(logits)
        dlogits = (probs - targets) / n
        grads = {"weight": features.T @ dlogits, "bias": dlogits.sum(axis=0)}
        adam_step(store, grads, state)
    return ProbeHead(weight=store.get("weight").copy(), bias=store.get("bias").copy(),
                     kind=kind)


# -- metric suite -------------------------------------------------------------


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    if preds.size == 0:
        raise ValueError("empty prediction list")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Counts indexed [true, predicted]."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    out = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(labels, preds):
        out[t, p] += 1
    return out


def micro_f1(pred_sets, true_sets) -> float:
    """2TP / (2TP + FP + FN) pooled over all samples; defined as 1.0 when
    both sides are empty everywhere."""
    if len(pred_sets) != len(true_sets):
        raise ValueError("prediction/label length mismatch")
    tp = fp = fn = 0
    for pred, true in zip(pred_sets, true_sets):
        pred, true = set(pred), set(true)
        tp += len(pred & true)
        fp += len(pred - true)
        fn += len(true - pred)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def mean_iou(pred_labels, true_labels, n_classes: int) -> float:
    """Mean per-class intersection-over-union; classes absent from both the
    prediction and the truth are excluded from the mean."""
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise ValueError("prediction/label shape mismatch")
    ious = []
    for k in range(n_classes):
        p = pred == k
        t = true == k
        union = np.logical_or(p, t).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, t).sum() / union)
    if not ious:
        raise ValueError("no class present in prediction or truth")
    return float(np.mean(ious))


def top_k_rank(rates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest rates; ties broken by lower species index."""
    rates = np.asarray(rates, dtype=np.float64)
    order = np.lexsort((np.arange(rates.size), -rates))
    return order[:k]


def top_k_accuracy(rates, observed) -> float:
    """|top-k predicted ∩ observed| / k with k = |observed|."""
    observed = set(int(s) for s in observed)
    if not observed:
        raise ValueError("observed species set is empty")
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1 or rates.size < len(observed):
        raise ValueError("rate vector shorter than the observed set")
    if max(observed) >= rates.size or min(observed) < 0:
        raise ValueError("observed species index outside the rate vector")
    k = len(observed)
    top = set(int(i) for i in top_k_rank(rates, k))
    return len(top & observed) / k


def mean_top_k_accuracy(rate_rows, observed_sets) -> tuple[float, int]:
    """Average top-k accuracy over samples; empty-label samples are skipped
    and counted."""
    scores = []
    skipped = 0
    for rates, observed in zip(rate_rows, observed_sets):
        if not observed:
            skipped += 1
            continue
        scores.append(top_k_accuracy(rates, observed))
    if not scores:
        raise ValueError("every sample had an empty observed set")
    return float(np.mean(scores)), skipped


# -- retrieval and zero-shot ---------------------------------------------------


@dataclass
class RetrievalIndex:
    """Unit-norm tile embeddings (text-head space) with their tile ids."""

    tile_ids: list[int]
    matrix: np.ndarray  # (N, d)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.tile_ids):
            raise ValueError("index row count must equal the tile id count")
        off = np.max(np.abs(np.linalg.norm(self.matrix, axis=1) - 1.0))
        if off > 1e-9:
            raise ValueError(f"index rows must be unit norm (worst deviation {off:.2e})")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def build_index(model: Model, tiles: list[TileRecord]) -> RetrievalIndex:
    """Embed every tile through the frozen text-head projection."""
    if not tiles:
        raise ValueError("cannot index zero tiles")
    matrix = model.tile_text_embeddings(np.stack([t.pixels for t in tiles]))
    return RetrievalIndex(tile_ids=[t.tile_id for t in tiles], matrix=matrix)


def query_index(index: RetrievalIndex, query: np.ndarray, k: int,
                model: Model | None = None) -> list[tuple[int, float]]:
    """Top-k tiles by cosine, descending; ties broken by lower tile_id.

    A raw text embedding (length d_txt) is passed through the model's frozen
    text projection first, which requires `model`; a query already in the
    shared space (length d) is normalized and used directly. k is clamped
    to the index size.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64).ravel()
    if model is not None and query.size == model.cfg.d_txt:
        q = model.project_text(query)
    elif query.size == index.d:
        q = l2_normalize_rows(query[None])[0]
    else:
        raise ValueError(f"query length {query.size} matches neither the shared "
                         f"space ({index.d}) nor a raw text embedding")
    cosines = index.matrix @ q
    order = np.lexsort((index.tile_ids, -cosines))
    out = []
    for idx in order[:min(k, index.n)]:
        out.append((int(index.tile_ids[idx]), float(cosines[idx])))
    return out


def zero_shot_classify(model: Model, tile: TileRecord | np.ndarray,
                       class_text_embeddings: np.ndarray) -> int:
    """Nearest class by cosine between the tile's text-head embedding and the
    projected class embeddings; ties go to the lower class index."""
    pixels = tile.pixels if isinstance(tile, TileRecord) else np.asarray(tile)
    z = model.tile_text_embeddings(pixels[None])[0]
    class_rows = np.atleast_2d(np.asarray(class_text_embeddings, dtype=np.float64))
    scores = model.project_text_rows(class_rows) @ z
    return int(np.argmax(scores))


def save_index(index: RetrievalIndex, path: str | Path) -> tuple[Path, Path]:
    """Write `<prefix>.json` (ids and dims) and `<prefix>.bin` (float32 rows)."""
    path = Path(path)
    prefix = path.with_suffix("") if path.suffix == ".json" else path
    json_path, bin_path = prefix.with_suffix(".json"), prefix.with_suffix(".bin")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps({"tile_ids": index.tile_ids, "n": index.n,
                                     "d": index.d}, sort_keys=True, indent=2) + "\n")
    bin_path.write_bytes(index.matrix.astype("<f4").tobytes())
    return json_path, bin_path


def load_index(path: str | Path) -> RetrievalIndex:
    path = Path(path)
    prefix = path.with_suffix("") if path.suffix == ".json" else path
    json_path, bin_path = prefix.with_suffix(".json"), prefix.with_suffix(".bin")
    if not json_path.exists():
        raise ValueError(f"index header not found: {json_path}")
    header = json.loads(json_path.read_text())
    data = np.frombuffer(bin_path.read_bytes(), dtype="<f4").astype(np.float64)
    n, d = header["n"], header["d"]
    if data.size != n * d:
        raise ValueError(f"index blob length mismatch: {data.size} values, expected {n * d}")
    # float32 storage perturbs norms at ~1e-7; restore exact unit rows
    return RetrievalIndex(tile_ids=[int(t) for t in header["tile_ids"]],
                          matrix=l2_normalize_rows(data.reshape(n, d)))


def encoder_blob_hash(model: Model) -> str:
    """Hash of every encoder parameter bit; probes must not change it."""
    return model.params.blob_hash()
