import numpy as np
import pytest

from daan_zsl.errors import ContractError, GenerationError, MiningError
from daan_zsl.models.data import Dataset, Modality, SamplePair, SplitName, SynthConfig, stack_pairs
from daan_zsl.services.synthetic import (
    check_train_split,
    generate_synthetic,
    linear_probe_accuracy,
    mine_negative,
    mine_negative_index,
    split_digest,
)

_SMALL = SynthConfig(
    num_seen_classes=4,
    num_unseen_classes=2,
    samples_per_class=5,
    test_samples_per_class=3,
    input_dim=16,
    text_dim=8,
    seed=11,
)


def test_split_layout():
    data = generate_synthetic(_SMALL)
    assert data.num_classes == 6
    assert data.seen_ids.tolist() == [0, 1, 2, 3]
    assert data.unseen_ids.tolist() == [4, 5]
    assert len(data.train) == 20
    assert len(data.test) == 18
    assert set(data.train.labels.tolist()) == {0, 1, 2, 3}
    assert set(data.test.labels.tolist()) == set(range(6))
    np.testing.assert_allclose(np.linalg.norm(data.texts, axis=1), 1.0, atol=1e-6)


def test_generation_is_deterministic_and_thread_independent():
    serial = generate_synthetic(_SMALL)
    threaded = generate_synthetic(_SMALL, workers=4)
    assert split_digest(serial.train) == split_digest(threaded.train)
    assert split_digest(serial.test) == split_digest(threaded.test)
    other = generate_synthetic(_SMALL.model_copy(update={"seed": 12}))
    assert split_digest(other.train) != split_digest(serial.train)


def test_features_lie_on_float32_grid():
    data = generate_synthetic(_SMALL)
    np.testing.assert_array_equal(data.train.audio, data.train.audio.astype(np.float32))


def test_quality_gap_between_modalities():
    cfg = SynthConfig(samples_per_class=40, test_samples_per_class=20, seed=3)
    data = generate_synthetic(cfg)
    audio = linear_probe_accuracy(data, Modality.AUDIO)
    visual = linear_probe_accuracy(data, Modality.VISUAL)
    assert visual > audio


def test_infinite_snr_gives_noise_free_features():
    cfg = _SMALL.model_copy(update={"audio_snr": float("inf"), "visual_snr": float("inf"), "content_bias_std": 0.0})
    data = generate_synthetic(cfg)
    first = data.train.labels == 0
    np.testing.assert_allclose(data.train.audio[first], np.repeat(data.train.audio[first][:1], first.sum(), 0))


def test_unseen_class_in_train_split_is_rejected(tiny_dataset):
    leaked = Dataset(
        classes=tiny_dataset.classes,
        texts=tiny_dataset.texts,
        train=tiny_dataset.test,
        test=tiny_dataset.test,
    )
    with pytest.raises(GenerationError):
        check_train_split(leaked)


def test_mined_negative_has_a_different_label(rng):
    labels = np.array([0, 0, 1, 2, 0])
    for anchor in range(5):
        neg = mine_negative_index(labels, anchor, rng)
        assert labels[neg] != labels[anchor]


def test_mining_fails_on_single_class_batch(rng):
    with pytest.raises(MiningError):
        mine_negative_index(np.array([3, 3, 3]), 1, rng)


def test_mine_negative_over_samples(rng):
    data = generate_synthetic(_SMALL)
    batch = data.samples(SplitName.TRAIN)[:10]
    neg = mine_negative(batch, 0, rng)
    assert neg.label.id != batch[0].label.id


def test_sample_pair_rejects_same_class_negative():
    data = generate_synthetic(_SMALL)
    a, b = data.samples(SplitName.TRAIN)[:2]
    with pytest.raises(ContractError):
        SamplePair(a, b, data.text(a.label.id), data.text(b.label.id))


def test_stacked_pairs_put_anchors_before_negatives():
    data = generate_synthetic(_SMALL)
    zero, one = data.sample(SplitName.TRAIN, 0), data.sample(SplitName.TRAIN, 7)
    assert zero.label.id != one.label.id
    audio, visual, texts = stack_pairs([data.pair(zero, one), data.pair(one, zero)])
    np.testing.assert_array_equal(audio, data.train.audio[[0, 7, 7, 0]])
    np.testing.assert_array_equal(visual, data.train.visual[[0, 7, 7, 0]])
    np.testing.assert_array_equal(texts, data.texts[data.train.labels[[0, 7, 7, 0]]])


def test_mined_sample_carries_its_row(rng):
    data = generate_synthetic(_SMALL)
    batch = data.samples(SplitName.TRAIN)
    neg = mine_negative(batch, 3, rng)
    np.testing.assert_array_equal(data.train.audio[neg.index], neg.audio)
