import numpy as np
import pytest

from emoda import tensor as T
from emoda.data import UtteranceSample
from emoda.errors import ConfigError, DimensionError, IngestionError, SequenceTooShortError
from emoda.gradcheck import check_gradients
from emoda.model import (ModelBundle, ModelConfig, domain_logits, emotion_logits, encode, encode_batch, load_bundle,
                         predict_logits, read_model_manifest, save_bundle, write_model_manifest)


def _sample(rng, cfg, t_a=30, t_v=6, emotion=0, domain=0):
    return UtteranceSample(f"s{rng.integers(1 << 20)}", rng.standard_normal((t_a, cfg.acoustic_dim)),
                           rng.standard_normal((t_v, cfg.visual_dim)), emotion, domain)


def test_default_representation_shape(rng):
    bundle = ModelBundle(ModelConfig(), seed=0)
    r = encode(bundle, _sample(rng, bundle.config, t_a=40, t_v=5))
    assert r.shape == (128,)
    assert emotion_logits(bundle, r).shape == (4,)
    assert domain_logits(bundle, r).shape == (2,)


def test_minimum_acoustic_length():
    cfg = ModelConfig()
    assert cfg.min_acoustic_length() == 18
    assert cfg.conv_output_length(18) == 1
    assert cfg.conv_output_length(17) == 0


def test_too_short_sequence_names_minimum(rng):
    bundle = ModelBundle(ModelConfig.small(), seed=0)
    with pytest.raises(SequenceTooShortError, match="18"):
        encode(bundle, _sample(rng, bundle.config, t_a=17))
    encode(bundle, _sample(rng, bundle.config, t_a=18))


def test_wrong_feature_width_raises(rng):
    bundle = ModelBundle(ModelConfig.small(), seed=0)
    s = _sample(rng, bundle.config)
    bad = UtteranceSample("x", s.acoustic[:, :5], s.visual, 0, 0)
    with pytest.raises(DimensionError):
        encode(bundle, bad)


def test_eval_mode_is_deterministic(rng, small_model):
    s = _sample(rng, small_model.config)
    assert np.array_equal(encode(small_model, s).data, encode(small_model, s).data)


def test_train_mode_dropout_depends_on_rng(rng, small_model):
    s = _sample(rng, small_model.config)
    a = encode(small_model, s, train=True, rng=np.random.default_rng(0)).data
    b = encode(small_model, s, train=True, rng=np.random.default_rng(0)).data
    c = encode(small_model, s, train=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("pooling", ["last", "mean"])
def test_batched_encoding_equals_per_sample(rng, pooling):
    bundle = ModelBundle(ModelConfig.small(pooling=pooling), seed=3)
    samples = [_sample(rng, bundle.config, t_a=t_a, t_v=t_v) for t_a, t_v in ((18, 2), (35, 9), (26, 4))]
    batched = encode_batch(bundle, samples).data
    for i, s in enumerate(samples):
        np.testing.assert_allclose(batched[i], encode(bundle, s).data, rtol=1e-12, atol=1e-14)


def test_zero_head_weights_give_zero_logits(rng, small_model):
    for t in small_model.ec_params.values():
        t.data[...] = 0.0
    r = encode(small_model, _sample(rng, small_model.config))
    assert np.all(emotion_logits(small_model, r).data == 0.0)


def test_conv_kernel_gradient_finite_differences(rng, small_model):
    s = _sample(rng, small_model.config, t_a=22)
    kernel = small_model.conv1.weight
    errors = check_gradients(lambda: T.sum_(encode(small_model, s)), [kernel], max_coords=20, rng=rng)
    assert errors[0] < 1e-5


def test_heads_do_not_share_parameters(small_model):
    ids = [id(t) for reg in small_model.registries() for t in reg.values()]
    assert len(ids) == len(set(ids))
    assert {n.split(".", 1)[0] for n in small_model.state()} == {"enc", "ec", "dc"}


def test_predict_logits_batches_consistently(rng, small_model):
    samples = [_sample(rng, small_model.config, t_a=20 + i) for i in range(7)]
    np.testing.assert_allclose(predict_logits(small_model, samples, batch_size=3),
                               predict_logits(small_model, samples, batch_size=100), rtol=1e-12)


def test_bundle_round_trip(tmp_path, rng):
    bundle = ModelBundle(ModelConfig.small(pooling="mean", dropout_rate=0.25), seed=9)
    save_bundle(bundle, tmp_path)
    back = load_bundle(tmp_path)
    assert back.config == bundle.config
    assert back.fingerprint() == bundle.fingerprint()


def test_manifest_rejects_unknown_key(tmp_path):
    write_model_manifest(tmp_path / "m", ModelConfig.small())
    with open(tmp_path / "m", "a") as fh:
        fh.write("bogus=1\n")
    with pytest.raises(IngestionError, match="bogus"):
        read_model_manifest(tmp_path / "m")


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(pooling="max")
    with pytest.raises(ConfigError):
        ModelConfig(repr_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(dropout_rate=1.0)
