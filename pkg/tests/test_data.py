import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emoda.data import (EMOTIONS, MSP_IMPROV_COUNTS, SOURCE, TARGET, BalancedSampler, SplitSpec, SynthConfig,
                        UtteranceSample, balanced_batches, count_by_tag, generate_synthetic, load_manifest,
                        make_splits, read_features, save_samples, write_features)
from emoda.errors import ConfigError, IngestionError, SplitError

ANGRY, HAPPY = EMOTIONS.index("Angry"), EMOTIONS.index("Happy")


def test_table_counts_are_recorded():
    assert MSP_IMPROV_COUNTS["NI"] == (38, 66, 1372, 1164)
    assert MSP_IMPROV_COUNTS["OI"] == (470, 633, 1048, 1789)
    assert MSP_IMPROV_COUNTS["TI"] == (115, 106, 136, 283)
    assert MSP_IMPROV_COUNTS["TR"] == (169, 80, 88, 241)
    assert sum(map(sum, MSP_IMPROV_COUNTS.values())) == 7798


def test_feature_file_round_trip_is_bitwise(tmp_path, rng):
    arr = rng.standard_normal((13, 5))
    write_features(tmp_path / "f.edf", arr)
    assert read_features(tmp_path / "f.edf").tobytes() == arr.tobytes()


def test_feature_file_header_mismatch(tmp_path, rng):
    write_features(tmp_path / "f.edf", rng.standard_normal((4, 3)))
    blob = (tmp_path / "f.edf").read_bytes()
    (tmp_path / "f.edf").write_bytes(blob[:-8])
    with pytest.raises(IngestionError, match="4x3"):
        read_features(tmp_path / "f.edf")


def test_manifest_round_trip(tmp_path, small_corpus):
    source, target = small_corpus
    samples = source[:5] + target[:5]
    back = load_manifest(save_samples(samples, tmp_path))
    assert len(back) == len(samples)
    assert all(a.same_as(b) for a, b in zip(samples, back))


def test_empty_manifest_loads_nothing(tmp_path):
    (tmp_path / "m.csv").write_text("id,domain,emotion,elicitation,acoustic_path,visual_path\n")
    assert load_manifest(tmp_path / "m.csv") == []


def test_manifest_error_names_row(tmp_path, small_corpus):
    source, _ = small_corpus
    path = save_samples(source[:3], tmp_path)
    lines = open(path).read().splitlines()
    lines[2] = lines[2].replace("Source", "Elsewhere")
    open(path, "w").write("\n".join(lines) + "\n")
    with pytest.raises(IngestionError, match="row 3"):
        load_manifest(path)


def test_manifest_missing_feature_file(tmp_path, small_corpus):
    path = save_samples(small_corpus[0][:2], tmp_path)
    (tmp_path / "features" / f"{small_corpus[0][1].id}.visual.edf").unlink()
    with pytest.raises(IngestionError):
        load_manifest(path)


def test_manifest_dimension_check(tmp_path, small_corpus):
    path = save_samples(small_corpus[0][:2], tmp_path)
    with pytest.raises(IngestionError, match="acoustic"):
        load_manifest(path, acoustic_dim=41)


def test_count_by_tag(small_corpus):
    source, target = small_corpus
    counts = count_by_tag(source + target)
    assert counts == {"SYNTH_A": [20] * 4, "SYNTH_B": [20] * 4}


def test_synthetic_is_deterministic():
    cfg = SynthConfig.small(source_counts=(3, 3, 3, 3), target_counts=(2, 2, 2, 2), seed=5)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert all(x.same_as(y) for x, y in zip(a, b))
    c = generate_synthetic(SynthConfig.small(source_counts=(3, 3, 3, 3), target_counts=(2, 2, 2, 2), seed=6))
    assert not a[0].same_as(c[0])


def test_synthetic_shapes_and_lengths():
    cfg = SynthConfig.small(source_counts=(4, 4, 4, 4), target_counts=(4, 4, 4, 4))
    for s in generate_synthetic(cfg):
        assert s.acoustic.shape[1] == 8 and s.visual.shape[1] == 16
        assert cfg.acoustic_length[0] <= s.acoustic.shape[0] <= cfg.acoustic_length[1]
        assert cfg.visual_length[0] <= s.visual.shape[0] <= cfg.visual_length[1]


def _frame_means(samples):
    return {(d, k): np.concatenate([s.acoustic for s in samples if s.domain == d and s.emotion == k])
            for d in (SOURCE, TARGET) for k in range(4)}


def test_zero_shift_domains_share_class_means():
    cfg = SynthConfig.small(source_counts=(60,) * 4, target_counts=(60,) * 4, domain_shift=0.0, seed=2)
    frames = _frame_means(generate_synthetic(cfg))
    for k in range(4):
        s, t = frames[(SOURCE, k)], frames[(TARGET, k)]
        # AR(1) frames are correlated; use the per-utterance count as the effective sample size
        se = cfg.noise * np.sqrt(1.0 / 60 + 1.0 / 60)
        assert np.all(np.abs(s.mean(axis=0) - t.mean(axis=0)) < 3 * se)


def test_happy_is_closest_to_angry():
    cfg = SynthConfig.small(source_counts=(200,) * 4, target_counts=(1,) * 4, seed=8)
    means = [np.concatenate([s.acoustic for s in generate_synthetic(cfg) if s.domain == SOURCE and s.emotion == k])
             .mean(axis=0) for k in range(4)]
    dist = {(i, j): np.linalg.norm(means[i] - means[j]) for i, j in itertools.combinations(range(4), 2)}
    assert min(dist, key=dist.get) == (0, 2)


def _nearest_class_mean_accuracy(train, test):
    feats = lambda ss: np.array([s.acoustic.mean(axis=0) for s in ss])
    labels = lambda ss: np.array([s.emotion for s in ss])
    x, y = feats(train), labels(train)
    centroids = np.array([x[y == k].mean(axis=0) for k in range(4)])
    xt = feats(test)
    pred = np.argmin(((xt[:, None, :] - centroids[None]) ** 2).sum(axis=2), axis=1)
    return float(np.mean(pred == labels(test)))


def test_shift_degrades_nearest_class_mean_classifier():
    cfg = SynthConfig.small(source_counts=(150,) * 4, target_counts=(150,) * 4, seed=4)
    samples = generate_synthetic(cfg)
    source = [s for s in samples if s.domain == SOURCE]
    target = [s for s in samples if s.domain == TARGET]
    src_acc = _nearest_class_mean_accuracy(source[::2], source[1::2])
    tgt_acc = _nearest_class_mean_accuracy(source, target)
    assert src_acc > 0.9
    assert tgt_acc < src_acc - 0.2


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig.small(source_counts=(1, 1, 1))
    with pytest.raises(ConfigError):
        SynthConfig.small(rho=1.0)


def test_sample_validation(rng):
    with pytest.raises(ValueError):
        UtteranceSample("x", rng.standard_normal((20, 8)), np.zeros((0, 16)), 0, 0)
    with pytest.raises(ValueError):
        UtteranceSample("x", rng.standard_normal((20, 8)), rng.standard_normal((3, 16)), 4, 0)


# ---------------------------------------------------------------- splits

def _target_pool(counts=(250, 250, 250, 250), seed=1):
    cfg = SynthConfig.small(source_counts=(1,) * 4, target_counts=counts, acoustic_length=(18, 18),
                            visual_length=(1, 1), seed=seed)
    return [s for s in generate_synthetic(cfg) if s.domain == TARGET]


def test_split_sizes_and_disjoint_runs():
    pool = _target_pool()
    splits = [make_splits(pool, SplitSpec(run_index=r, seed=3)) for r in range(5)]
    for train, dev, evaluation in splits:
        assert (len(train), len(dev), len(evaluation)) == (100, 400, 500)
        ids = [set(s.id for s in part) for part in (train, dev, evaluation)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        for part in (train, dev, evaluation):
            assert {s.emotion for s in part} == set(range(4))
    for (a, _, _), (b, _, _) in itertools.combinations(splits, 2):
        assert not {s.id for s in a} & {s.id for s in b}


def test_split_imbalanced_quotas():
    pool = _target_pool(counts=(169, 80, 88, 241))
    train, dev, evaluation = make_splits(pool, SplitSpec())
    assert (len(train), len(dev), len(evaluation)) == (58, 231, 289)
    assert [sum(s.emotion == k for s in train) for k in range(4)] == [17, 8, 9, 24]


def test_split_is_deterministic():
    pool = _target_pool()
    a = make_splits(pool, SplitSpec(run_index=2, seed=9))
    b = make_splits(pool, SplitSpec(run_index=2, seed=9))
    assert [[s.id for s in part] for part in a] == [[s.id for s in part] for part in b]


def test_split_rejects_tiny_class():
    pool = _target_pool(counts=(30, 30, 30, 3))
    with pytest.raises(SplitError, match="Neutral"):
        make_splits(pool, SplitSpec())


def test_split_rejects_bad_fractions():
    with pytest.raises(SplitError):
        SplitSpec(0.2, 0.2, 0.2)
    with pytest.raises(SplitError):
        SplitSpec(run_index=10)


# ---------------------------------------------------------------- sampler

def test_sampler_batches_are_half_and_half():
    sampler = BalancedSampler([0, 1, 2, 3] * 5, [0, 1, 2, 3], 32, seed=0)
    for src, tgt in sampler.batches(200):
        assert len(src) == 16 and len(tgt) == 16


def test_sampler_inverse_frequency_balances_classes():
    labels = [HAPPY] * 1372 + [ANGRY] * 38
    sampler = BalancedSampler(labels, labels, 32, seed=1)
    drawn = np.concatenate([src for src, _ in sampler.batches(2000)])
    freq = np.mean(np.asarray(labels)[drawn] == HAPPY)
    assert abs(freq - 0.5) < 0.02


def test_sampler_source_only_uses_full_batches():
    sampler = BalancedSampler([0, 1] * 10, None, 8, seed=0)
    src, tgt = sampler.draw()
    assert len(src) == 8 and len(tgt) == 0


def test_sampler_rejects_odd_batch():
    with pytest.raises(ConfigError):
        BalancedSampler([0, 1], [0, 1], 7, seed=0)


def test_balanced_batches_put_source_first(small_corpus):
    source, target = small_corpus
    batch = next(balanced_batches(source, target[:8], 8, seed=0))
    assert [s.domain for s in batch] == [SOURCE] * 4 + [TARGET] * 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=50), st.integers(0, 1000))
def test_sampler_only_draws_valid_indices(labels, seed):
    sampler = BalancedSampler(labels, labels, 4, seed)
    for src, tgt in sampler.batches(5):
        assert src.min() >= 0 and src.max() < len(labels)
        assert tgt.min() >= 0 and tgt.max() < len(labels)

