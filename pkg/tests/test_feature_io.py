import numpy as np
import pytest

from daan_zsl.errors import FormatError
from daan_zsl.models.data import Dataset, Split
from daan_zsl.services.feature_io import MAGIC, load_features, save_features
from daan_zsl.services.synthetic import split_digest


def _same(a: Dataset, b: Dataset) -> None:
    assert [c.seen for c in a.classes] == [c.seen for c in b.classes]
    np.testing.assert_array_equal(a.texts, b.texts)
    assert split_digest(a.train) == split_digest(b.train)
    assert split_digest(a.test) == split_digest(b.test)


def test_binary_round_trip_is_exact(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.bin")
    assert path.read_bytes().startswith(MAGIC)
    _same(tiny_dataset, load_features(path))


def test_jsonl_round_trip_is_exact(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.jsonl")
    loaded = load_features(path)
    _same(tiny_dataset, loaded)
    assert [c.name for c in loaded.classes] == [c.name for c in tiny_dataset.classes]


def test_truncated_file_reports_offset(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.bin")
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(FormatError) as info:
        load_features(path)
    assert 0 < info.value.offset < len(data)
    assert "offset" in str(info.value)


def test_bad_magic(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.bin")
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError, match="magic") as info:
        load_features(path)
    assert info.value.offset == 0


def test_trailing_bytes_are_rejected(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.bin")
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(FormatError, match="trailing"):
        load_features(path)


def test_missing_test_block(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.bin")
    train_only = Dataset(tiny_dataset.classes, tiny_dataset.texts, tiny_dataset.train, tiny_dataset.train)
    full = path.read_bytes()
    block = len(save_features(train_only, tmp_path / "x.bin").read_bytes()) // 2
    path.write_bytes(full[:block])
    with pytest.raises(FormatError, match="missing test block"):
        load_features(path)


def test_unseen_samples_in_train_block_are_rejected(tiny_dataset, tmp_path):
    leaked = Dataset(tiny_dataset.classes, tiny_dataset.texts, tiny_dataset.test, tiny_dataset.test)
    path = save_features(leaked, tmp_path / "leaked.bin")
    with pytest.raises(FormatError, match="unseen"):
        load_features(path)


def test_unnormalized_texts_are_renormalized(tiny_dataset, tmp_path):
    scaled = Dataset(tiny_dataset.classes, tiny_dataset.texts * 3.0, tiny_dataset.train, tiny_dataset.test)
    loaded = load_features(save_features(scaled, tmp_path / "scaled.jsonl"))
    np.testing.assert_allclose(np.linalg.norm(loaded.texts, axis=1), 1.0, atol=1e-12)


def test_jsonl_record_before_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"kind": "class", "id": 0, "name": "a", "seen": true, "text": [1.0]}\n')
    with pytest.raises(FormatError, match="before header") as info:
        load_features(path)
    assert info.value.offset == 0


def test_jsonl_invalid_record_reports_line_offset(tiny_dataset, tmp_path):
    path = save_features(tiny_dataset, tmp_path / "features.jsonl")
    lines = path.read_bytes().splitlines(keepends=True)
    lines[2] = b'{"kind": "class", "id": "oops"}\n'
    path.write_bytes(b"".join(lines))
    with pytest.raises(FormatError) as info:
        load_features(path)
    assert info.value.offset == len(lines[0]) + len(lines[1])


def _class_offset(dataset: Dataset, class_id: int) -> int:
    header = len(MAGIC) + 6 * 4
    return header + class_id * (4 * dataset.text_dim + 1)


def test_zero_norm_text_is_rejected_with_its_offset(tiny_dataset, tmp_path):
    texts = tiny_dataset.texts.copy()
    texts[1] = 0.0
    broken = Dataset(tiny_dataset.classes, texts, tiny_dataset.train, tiny_dataset.test)
    with pytest.raises(FormatError, match="zero-norm") as info:
        load_features(save_features(broken, tmp_path / "zero.bin"))
    assert info.value.offset == _class_offset(tiny_dataset, 1)


def test_zero_norm_text_in_jsonl_points_at_its_line(tiny_dataset, tmp_path):
    texts = tiny_dataset.texts.copy()
    texts[0] = 0.0
    broken = Dataset(tiny_dataset.classes, texts, tiny_dataset.train, tiny_dataset.test)
    path = save_features(broken, tmp_path / "z.jsonl")
    first_line = len(path.read_bytes().splitlines(keepends=True)[0])
    with pytest.raises(FormatError, match="zero-norm") as info:
        load_features(path)
    assert info.value.offset == first_line


def test_non_finite_features_are_rejected_with_their_offset(tiny_dataset, tmp_path):
    audio = tiny_dataset.train.audio.copy()
    audio[2, 5] = np.inf
    train = Split(audio, tiny_dataset.train.visual, tiny_dataset.train.labels)
    broken = Dataset(tiny_dataset.classes, tiny_dataset.texts, train, tiny_dataset.test)
    with pytest.raises(FormatError, match="non-finite") as info:
        load_features(save_features(broken, tmp_path / "inf.bin"))
    sample_bytes = 4 + 2 * 4 * tiny_dataset.input_dim
    assert info.value.offset == _class_offset(tiny_dataset, tiny_dataset.num_classes) + 2 * sample_bytes


def test_non_finite_text_is_rejected(tiny_dataset, tmp_path):
    texts = tiny_dataset.texts.copy()
    texts[3, 0] = np.nan
    broken = Dataset(tiny_dataset.classes, texts, tiny_dataset.train, tiny_dataset.test)
    with pytest.raises(FormatError, match="non-finite") as info:
        load_features(save_features(broken, tmp_path / "nan.bin"))
    assert info.value.offset == _class_offset(tiny_dataset, 3)
