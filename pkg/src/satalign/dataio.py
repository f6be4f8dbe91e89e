"""Dataset directory format: read and write.

Layout:
    observations.csv          header ``lat,lon,species_id``, decimal degrees
    raster.json / raster.bin  grid header + float32-LE values, (row, col, channel)
    tiles/manifest.json       [{tile_id, lat, lon, timestamp, file, c, h, w}]
    tiles/<file>              float32-LE pixels, C x H x W, values in [0, 1]
    text/sections.json        {"d_txt": D, "sections": [{species_id, section_id, row}]}
    text/embeddings.bin       float32-LE matrix, one row per section
    ground_truth.json         optional; habitat labels and text prototypes for
                              synthetic worlds (used by probing and zero-shot)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geodata import CovariateRaster, GeoObservation, TextSection, TileRecord
from .synthworld import SyntheticWorld


@dataclass
class GroundTruth:
    n_habitats: int
    tile_habitats: dict[int, int]
    species_habitats: dict[int, int]
    text_prototypes: np.ndarray


@dataclass
class GeoDataset:
    observations: list[GeoObservation]
    raster: CovariateRaster
    tiles: list[TileRecord]
    texts: list[TextSection]
    truth: GroundTruth | None = None

    @property
    def d_txt(self) -> int:
        return self.texts[0].embedding.size


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path.name}: malformed JSON ({e})") from e


def save_dataset(directory: str | Path, dataset: GeoDataset) -> None:
    root = Path(directory)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    (root / "text").mkdir(parents=True, exist_ok=True)

    lines = ["lat,lon,species_id"]
    lines += [f"{obs.lat!r},{obs.lon!r},{obs.species_id}" for obs in dataset.observations]
    (root / "observations.csv").write_text("\n".join(lines) + "\n")

    raster = dataset.raster
    _write_json(root / "raster.json", {
        "rows": raster.rows, "cols": raster.cols, "channels": raster.channels,
        "lat0": raster.lat0, "lon0": raster.lon0,
        "dlat": raster.dlat, "dlon": raster.dlon,
        "channel_min": raster.channel_min.tolist(),
        "channel_max": raster.channel_max.tolist(),
    })
    (root / "raster.bin").write_bytes(raster.values.astype("<f4").tobytes())

    manifest = []
    for tile in dataset.tiles:
        c, h, w = tile.pixels.shape
        fname = f"tile_{tile.tile_id:06d}.bin"
        (root / "tiles" / fname).write_bytes(tile.pixels.astype("<f4").tobytes())
        manifest.append({"tile_id": tile.tile_id, "lat": tile.lat, "lon": tile.lon,
                         "timestamp": tile.timestamp, "file": fname,
                         "c": c, "h": h, "w": w})
    _write_json(root / "tiles" / "manifest.json", manifest)

    d_txt = dataset.d_txt
    sections = [{"species_id": s.species_id, "section_id": s.section_id, "row": i}
                for i, s in enumerate(dataset.texts)]
    _write_json(root / "text" / "sections.json", {"d_txt": d_txt, "sections": sections})
    rows = np.stack([s.embedding for s in dataset.texts])
    (root / "text" / "embeddings.bin").write_bytes(rows.astype("<f4").tobytes())

    if dataset.truth is not None:
        t = dataset.truth
        _write_json(root / "ground_truth.json", {
            "n_habitats": t.n_habitats,
            "tile_habitats": {str(k): v for k, v in sorted(t.tile_habitats.items())},
            "species_habitats": {str(k): v for k, v in sorted(t.species_habitats.items())},
            "text_prototypes": t.text_prototypes.tolist(),
        })


def dataset_from_world(world: SyntheticWorld) -> GeoDataset:
    truth = GroundTruth(n_habitats=world.config.n_habitats,
                        tile_habitats=dict(world.tile_habitats),
                        species_habitats=dict(world.species_habitats),
                        text_prototypes=world.text_prototypes.copy())
    return GeoDataset(observations=list(world.observations), raster=world.raster,
                      tiles=list(world.tiles), texts=list(world.texts), truth=truth)


def _read_f32(path: Path, count: int, what: str) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != count:
        raise ValueError(f"{what}: expected {count} float32 values, found {data.size}")
    return data.astype(np.float64)


def _load_observations(path: Path) -> list[GeoObservation]:
    text = path.read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "lat,lon,species_id":
        raise ValueError(f"{path.name}: malformed header, expected 'lat,lon,species_id'")
    observations = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path.name}: expected 3 fields, row {i}")
        try:
            lat, lon, sid = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ValueError(f"{path.name}: unparseable values, row {i}") from None
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"{path.name}: lat out of range, row {i}")
        if not -180.0 <= lon < 180.0:
            raise ValueError(f"{path.name}: lon out of range, row {i}")
        if sid < 0:
            raise ValueError(f"{path.name}: negative species_id, row {i}")
        observations.append(GeoObservation(lat=lat, lon=lon, species_id=sid))
    return observations


def _load_raster(root: Path) -> CovariateRaster:
    header = _read_json(root / "raster.json")
    required = {"rows", "cols", "channels", "lat0", "lon0", "dlat", "dlon",
                "channel_min", "channel_max"}
    missing = required - set(header)
    if missing:
        raise ValueError(f"raster.json: missing fields {sorted(missing)}")
    rows, cols, channels = header["rows"], header["cols"], header["channels"]
    values = _read_f32(root / "raster.bin", rows * cols * channels, "raster.bin")
    return CovariateRaster(lat0=header["lat0"], lon0=header["lon0"],
                           dlat=header["dlat"], dlon=header["dlon"],
                           values=values.reshape(rows, cols, channels),
                           channel_min=np.asarray(header["channel_min"]),
                           channel_max=np.asarray(header["channel_max"]))


def _load_tiles(root: Path) -> list[TileRecord]:
    manifest = _read_json(root / "tiles" / "manifest.json")
    tiles = []
    for i, entry in enumerate(manifest):
        try:
            c, h, w = entry["c"], entry["h"], entry["w"]
            pixels = _read_f32(root / "tiles" / entry["file"], c * h * w,
                               f"tiles/{entry['file']}")
            tiles.append(TileRecord(tile_id=entry["tile_id"], lat=entry["lat"],
                                    lon=entry["lon"], timestamp=entry["timestamp"],
                                    pixels=pixels.reshape(c, h, w)))
        except KeyError as e:
            raise ValueError(f"tiles/manifest.json: missing field {e}, record {i}") from None
        except ValueError as e:
            raise ValueError(f"tiles/manifest.json record {i}: {e}") from None
    return tiles


def _load_texts(root: Path) -> list[TextSection]:
    header = _read_json(root / "text" / "sections.json")
    if "d_txt" not in header or "sections" not in header:
        raise ValueError("text/sections.json: malformed header, needs d_txt and sections")
    d_txt = int(header["d_txt"])
    blob = np.frombuffer((root / "text" / "embeddings.bin").read_bytes(), dtype="<f4")
    if d_txt <= 0 or blob.size % d_txt != 0:
        raise ValueError(f"text/embeddings.bin: length {blob.size} not divisible by "
                         f"d_txt {d_txt}")
    rows = blob.astype(np.float64).reshape(-1, d_txt)
    texts = []
    for i, entry in enumerate(header["sections"]):
        row = entry.get("row")
        if row is None or not 0 <= row < rows.shape[0]:
            raise ValueError(f"text/sections.json: row index out of range, record {i}")
        texts.append(TextSection(species_id=entry["species_id"],
                                 section_id=entry["section_id"],
                                 embedding=rows[row]))
    return texts


def _load_truth(root: Path) -> GroundTruth | None:
    path = root / "ground_truth.json"
    if not path.exists():
        return None
    obj = _read_json(path)
    return GroundTruth(n_habitats=obj["n_habitats"],
                       tile_habitats={int(k): v for k, v in obj["tile_habitats"].items()},
                       species_habitats={int(k): v for k, v in obj["species_habitats"].items()},
                       text_prototypes=np.asarray(obj["text_prototypes"], dtype=np.float64))


def ingest_dataset(directory: str | Path) -> GeoDataset:
    """Load and validate a dataset directory."""
    root = Path(directory)
    if not root.is_dir():
        raise ValueError(f"dataset directory not found: {root}")
    for required in ("observations.csv", "raster.json", "raster.bin"):
        if not (root / required).exists():
            raise ValueError(f"dataset is missing {required}")
    return GeoDataset(observations=_load_observations(root / "observations.csv"),
                      raster=_load_raster(root),
                      tiles=_load_tiles(root),
                      texts=_load_texts(root),
                      truth=_load_truth(root))
