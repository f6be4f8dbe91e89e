import numpy as np
import pytest

from satalign.encoders import (ImageEncoderConfig, LocationEncoderConfig, Model,
                               ModelConfig, location_input_features, trainable_mask)
from satalign.optim import AdamState, adam_step


def tiny_config(**overrides):
    defaults = dict(
        image=ImageEncoderConfig(in_size=16, widths=(4, 8), d_img=16),
        location=LocationEncoderConfig(hidden=16, depth=2, d_loc=8),
        d_txt=12, embed_dim=8,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


@pytest.fixture()
def model():
    return Model.initialize(tiny_config(), seed=0)


class TestLocationFeatures:
    def test_origin(self):
        np.testing.assert_allclose(location_input_features(0.0, 0.0), [0, 1, 0, 1], atol=1e-15)

    def test_pole_and_dateline(self):
        feats = location_input_features(90.0, -180.0)
        np.testing.assert_allclose(feats, [0, -1, 0, -1], atol=1e-12)

    def test_longitude_periodicity(self):
        for lon in (-180.0, -31.7, 0.0, 55.5):
            a = location_input_features(10.0, lon)
            b = location_input_features(10.0, lon + 360.0)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_covariates_appended(self):
        cov = np.linspace(-1, 1, 20)
        feats = location_input_features(5.0, 5.0, cov)
        assert feats.shape == (24,)
        np.testing.assert_array_equal(feats[4:], cov)

    def test_unnormalized_covariates_rejected(self):
        with pytest.raises(ValueError, match="normalized"):
            location_input_features(0.0, 0.0, np.full(20, 2.0))


class TestImageEncoder:
    def test_all_zero_tile_finite(self, model):
        out = model.encode_image(np.zeros((3, 16, 16)))
        assert out.shape == (16,)
        assert np.all(np.isfinite(out))

    def test_eval_mode_deterministic(self, model):
        rng = np.random.default_rng(1)
        pixels = rng.random((3, 16, 16))
        a = model.encode_image(pixels)
        b = model.encode_image(pixels)
        np.testing.assert_array_equal(a, b)

    def test_output_length_matches_config(self):
        for d_img in (8, 24):
            cfg = tiny_config(image=ImageEncoderConfig(in_size=16, widths=(4,), d_img=d_img))
            m = Model.initialize(cfg, seed=1)
            assert m.encode_image(np.zeros((3, 16, 16))).shape == (d_img,)

    def test_dim_mismatch_rejected(self, model):
        with pytest.raises(ValueError, match="expected pixels"):
            model.encode_image(np.zeros((3, 8, 8)))

    def test_batch_features_match_single(self, model):
        rng = np.random.default_rng(2)
        batch = rng.random((4, 3, 16, 16))
        feats = model.image_features(batch)
        for i in range(4):
            np.testing.assert_allclose(feats[i], model.encode_image(batch[i]), atol=1e-12)


class TestLocationEncoder:
    def test_output_dim(self, model):
        out = model.encode_location(10.0, 20.0, np.zeros(20))
        assert out.shape == (8,)

    def test_default_full_scale_dim_reachable(self):
        cfg = tiny_config(location=LocationEncoderConfig(hidden=32, depth=2, d_loc=256))
        m = Model.initialize(cfg, seed=3)
        assert m.encode_location(0.0, 0.0, np.zeros(20)).shape == (256,)

    def test_covariate_flag_mismatch(self, model):
        with pytest.raises(ValueError, match="requires covariates"):
            model.encode_location(0.0, 0.0)
        no_cov = Model.initialize(
            tiny_config(location=LocationEncoderConfig(use_covariates=False,
                                                       hidden=8, depth=1, d_loc=8)), seed=0)
        with pytest.raises(ValueError, match="disabled"):
            no_cov.encode_location(0.0, 0.0, np.zeros(20))
        assert no_cov.encode_location(0.0, 0.0).shape == (8,)


class TestProjectionHeads:
    def test_all_heads_unit_norm(self, model):
        rng = np.random.default_rng(4)
        z_img, z_txt, z_loc = model.project_image_heads(rng.normal(size=16))
        e_txt = model.project_text(rng.normal(size=12))
        e_loc = model.project_location(rng.normal(size=8))
        for v in (z_img, z_txt, z_loc, e_txt, e_loc):
            assert v.shape == (8,)
            assert abs(np.linalg.norm(v) - 1.0) < 1e-12

    def test_default_embed_dim_mirrors_full_scale(self):
        cfg = ModelConfig(image=ImageEncoderConfig(in_size=16, widths=(4,), d_img=16),
                          embed_dim=512)
        m = Model.initialize(cfg, seed=0)
        assert m.project_text(np.ones(64)).shape == (512,)

    def test_large_text_dim_supported(self):
        cfg = tiny_config(d_txt=4096)
        m = Model.initialize(cfg, seed=0)
        assert m.project_text(np.ones(4096)).shape == (8,)

    @pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
    def test_positive_scale_invariance(self, model, scale):
        rng = np.random.default_rng(6)
        feat = rng.normal(size=16)
        base = model.project_image_heads(feat)
        scaled = model.project_image_heads(scale * feat)
        for a, b in zip(base, scaled):
            np.testing.assert_allclose(a, b, atol=1e-12)
        raw = rng.normal(size=12)
        np.testing.assert_allclose(model.project_text(raw),
                                   model.project_text(scale * raw), atol=1e-12)
        emb = rng.normal(size=8)
        np.testing.assert_allclose(model.project_location(emb),
                                   model.project_location(scale * emb), atol=1e-12)

    def test_degenerate_feature_rejected(self, model):
        with pytest.raises(ValueError, match="degenerate embedding row"):
            model.project_text(np.zeros(12))


class TestTrainableMask:
    def test_full_covers_everything(self, model):
        mask = trainable_mask("full", model.params)
        assert mask == frozenset(model.params.names())

    def test_scale_shift_excludes_conv_kernels(self, model):
        mask = trainable_mask("scale_shift", model.params)
        assert "img.conv1.kernel" not in mask
        assert "img.fc.weight" not in mask
        assert "img.norm1.gamma" in mask and "img.norm2.beta" in mask
        assert all(h in mask for h in ("heads.image.weight", "heads.text.weight",
                                       "heads.location.weight"))
        assert "loc.fc0.weight" in mask

    def test_freeze_location_removes_location_params(self, model):
        mask = trainable_mask("scale_shift", model.params, freeze_location=True)
        assert not any(name.startswith("loc.") for name in mask)
        full = trainable_mask("full", model.params, freeze_location=True)
        assert not any(name.startswith("loc.") for name in full)
        assert "img.conv1.kernel" in full

    def test_unknown_mode_rejected(self, model):
        with pytest.raises(ValueError, match="unknown fine-tuning mode"):
            trainable_mask("lora", model.params)

    def test_adam_under_scale_shift_leaves_kernels_bit_identical(self, model):
        mask = trainable_mask("scale_shift", model.params)
        kernel_before = model.params.get("img.conv1.kernel").copy()
        fc_before = model.params.get("img.fc.weight").copy()
        grads = {name: np.ones_like(model.params.get(name)) for name in sorted(mask)}
        adam_step(model.params, grads, AdamState(lr=0.05))
        np.testing.assert_array_equal(model.params.get("img.conv1.kernel"), kernel_before)
        np.testing.assert_array_equal(model.params.get("img.fc.weight"), fc_before)
        assert not np.array_equal(model.params.get("img.norm1.gamma"), np.ones(4))
