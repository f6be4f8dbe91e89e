"""Shared helpers: a small synthetic world paired into training samples."""

import pytest

from satalign.encoders import ImageEncoderConfig, LocationEncoderConfig, ModelConfig
from satalign.geodata import pair_samples
from satalign.synthworld import SyntheticWorldConfig, generate_synthetic_world
from satalign.training import TrainConfig


def small_world_config(seed=0, **overrides):
    defaults = dict(seed=seed, n_species=8, n_habitats=4, raster_rows=16, raster_cols=16,
                    tiles_per_habitat=8, n_observations=200, d_txt=16,
                    tile_size=16, sections_per_species=2)
    defaults.update(overrides)
    return SyntheticWorldConfig(**defaults)


def small_train_config(seed=0, **overrides):
    model = ModelConfig(image=ImageEncoderConfig(in_size=16, widths=(8, 12), d_img=32),
                        location=LocationEncoderConfig(hidden=16, depth=2, d_loc=16),
                        d_txt=16, embed_dim=16)
    defaults = dict(epochs=2, batch_size=16, lr=1e-3, seed=seed, crop_size=12,
                    jitter=0.02, channel_mix=0.05, model=model)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def world_and_samples(seed=0, **world_overrides):
    world = generate_synthetic_world(small_world_config(seed=seed, **world_overrides))
    result = pair_samples(world.observations, world.tiles, world.texts, world.raster,
                          matching_radius=0.05, seed=seed)
    return world, result.samples


@pytest.fixture(scope="session")
def shared_world_samples():
    return world_and_samples(seed=0)


@pytest.fixture(scope="session")
def trained_checkpoint(shared_world_samples):
    from satalign.training import train
    _, samples = shared_world_samples
    return train(small_train_config(seed=0, epochs=2), samples)
