import numpy as np
import pytest

from satalign.dataio import dataset_from_world, ingest_dataset, save_dataset
from satalign.synthworld import SyntheticWorldConfig, generate_synthetic_world


@pytest.fixture()
def world_dir(tmp_path):
    cfg = SyntheticWorldConfig(seed=3, n_species=6, n_habitats=3, raster_rows=12,
                               raster_cols=12, tiles_per_habitat=4, n_observations=24,
                               d_txt=8, tile_size=8, sections_per_species=2)
    world = generate_synthetic_world(cfg)
    dataset = dataset_from_world(world)
    out = tmp_path / "world"
    save_dataset(out, dataset)
    return out, dataset


def test_round_trip_equal(world_dir):
    out, original = world_dir
    loaded = ingest_dataset(out)

    assert len(loaded.observations) == len(original.observations)
    for a, b in zip(loaded.observations, original.observations):
        assert (a.lat, a.lon, a.species_id) == (b.lat, b.lon, b.species_id)

    np.testing.assert_array_equal(loaded.raster.values, original.raster.values)
    assert loaded.raster.lat0 == original.raster.lat0
    np.testing.assert_array_equal(loaded.raster.channel_min, original.raster.channel_min)

    assert len(loaded.tiles) == len(original.tiles)
    for a, b in zip(loaded.tiles, original.tiles):
        assert (a.tile_id, a.lat, a.lon, a.timestamp) == (b.tile_id, b.lat, b.lon, b.timestamp)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    assert len(loaded.texts) == len(original.texts)
    for a, b in zip(loaded.texts, original.texts):
        assert (a.species_id, a.section_id) == (b.species_id, b.section_id)
        np.testing.assert_array_equal(a.embedding, b.embedding)

    assert loaded.truth is not None
    assert loaded.truth.tile_habitats == original.truth.tile_habitats
    assert loaded.truth.species_habitats == original.truth.species_habitats
    np.testing.assert_array_equal(loaded.truth.text_prototypes,
                                  original.truth.text_prototypes)


def test_rewrite_is_byte_identical(world_dir, tmp_path):
    out, dataset = world_dir
    again = tmp_path / "again"
    save_dataset(again, dataset)
    for path in sorted(out.rglob("*")):
        if path.is_file():
            twin = again / path.relative_to(out)
            assert twin.read_bytes() == path.read_bytes(), path.name


def test_lat_out_of_range_names_row(world_dir):
    out, _ = world_dir
    csv = out / "observations.csv"
    lines = csv.read_text().splitlines()
    lines[8] = "91.0,0.0,1"  # row index 7 (after the header)
    csv.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="lat out of range, row 7"):
        ingest_dataset(out)


def test_malformed_header_rejected(world_dir):
    out, _ = world_dir
    csv = out / "observations.csv"
    csv.write_text("latitude,longitude,species\n0,0,0\n")
    with pytest.raises(ValueError, match="malformed header"):
        ingest_dataset(out)


def test_embeddings_length_mismatch(world_dir):
    out, _ = world_dir
    blob = out / "text" / "embeddings.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(ValueError, match="not divisible"):
        ingest_dataset(out)


def test_truncated_tile_named(world_dir):
    out, _ = world_dir
    tile_file = sorted((out / "tiles").glob("tile_*.bin"))[2]
    tile_file.write_bytes(tile_file.read_bytes()[:-8])
    with pytest.raises(ValueError, match="record 2"):
        ingest_dataset(out)


def test_missing_raster_header_field(world_dir):
    out, _ = world_dir
    header = out / "raster.json"
    import json
    obj = json.loads(header.read_text())
    del obj["dlat"]
    header.write_text(json.dumps(obj))
    with pytest.raises(ValueError, match="missing fields.*dlat"):
        ingest_dataset(out)


def test_missing_directory():
    with pytest.raises(ValueError, match="not found"):
        ingest_dataset("/nonexistent/path")
