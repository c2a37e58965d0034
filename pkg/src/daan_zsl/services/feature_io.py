"""Reading and writing feature files.

Binary layout (little-endian), written once for the train split and once for
the test split::

    "DAAN" | u32 version | u32 num_samples, input_dim, text_dim, num_classes, num_seen
    per class:  f32[text_dim] text | u8 seen
    per sample: u32 label | f32[input_dim] audio | f32[input_dim] visual

Paths ending in ``.jsonl`` use one JSON object per line instead: a header,
then one ``class`` record per class and one ``sample`` record per sample with
its split named explicitly.
"""

from pathlib import Path
from typing import Annotated, Union

import numpy as np
from pydantic import Field, TypeAdapter, ValidationError

from daan_zsl.config.logging import get_logger
from daan_zsl.errors import FormatError
from daan_zsl.models.data import (
    ClassLabel,
    ClassRecord,
    Dataset,
    HeaderRecord,
    SampleRecord,
    Split,
    SplitName,
)

logger = get_logger(__name__)

MAGIC = b"DAAN"
VERSION = 1
HEADER_DTYPE = np.dtype("<u4")
HEADER_FIELDS = 6
NORM_TOLERANCE = 1e-6

_RecordAdapter = TypeAdapter(
    Annotated[Union[HeaderRecord, ClassRecord, SampleRecord], Field(discriminator="kind")]
)


def _class_dtype(text_dim: int) -> np.dtype:
    return np.dtype([("text", "<f4", (text_dim,)), ("seen", "u1")])


def _sample_dtype(input_dim: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("audio", "<f4", (input_dim,)), ("visual", "<f4", (input_dim,))])


def _encode_block(dataset: Dataset, split: Split) -> bytes:
    header = np.array(
        [VERSION, len(split), dataset.input_dim, dataset.text_dim, dataset.num_classes, len(dataset.seen_ids)],
        dtype=HEADER_DTYPE,
    )
    classes = np.zeros(dataset.num_classes, dtype=_class_dtype(dataset.text_dim))
    classes["text"] = dataset.texts
    classes["seen"] = [c.seen for c in dataset.classes]
    samples = np.zeros(len(split), dtype=_sample_dtype(dataset.input_dim))
    samples["label"] = split.labels
    samples["audio"] = split.audio
    samples["visual"] = split.visual
    return MAGIC + header.tobytes() + classes.tobytes() + samples.tobytes()


def _take(buf: bytes, offset: int, dtype: np.dtype, count: int, what: str) -> np.ndarray:
    available = (len(buf) - offset) // dtype.itemsize
    if available < count:
        raise FormatError(
            f"truncated {what}: expected {count} records, found {max(available, 0)}",
            offset + max(available, 0) * dtype.itemsize,
        )
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def _check_texts(texts: np.ndarray, offset: int, stride: int, first_id: int = 0) -> None:
    """Raise at the first class whose text is non-finite or has zero norm."""

    norms = np.linalg.norm(texts, axis=1)
    bad = np.flatnonzero(~np.isfinite(texts).all(axis=1) | (norms == 0.0))
    if bad.size:
        c = int(bad[0])
        what = "zero-norm" if np.isfinite(norms[c]) else "non-finite"
        raise FormatError(f"{what} text embedding for class {first_id + c}", offset + c * stride)


def _check_features(samples: np.ndarray, offset: int, stride: int) -> None:
    finite = np.isfinite(samples["audio"]).all(axis=1) & np.isfinite(samples["visual"]).all(axis=1)
    bad = np.flatnonzero(~finite)
    if bad.size:
        raise FormatError(f"non-finite features in sample {int(bad[0])}", offset + int(bad[0]) * stride)


def _decode_block(buf: bytes, offset: int) -> tuple[dict, np.ndarray, np.ndarray, int]:
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}", offset)
    header = _take(buf, offset + 4, HEADER_DTYPE, HEADER_FIELDS, "header")
    version, num_samples, input_dim, text_dim, num_classes, num_seen = (int(v) for v in header)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset + 4)
    if min(input_dim, text_dim, num_classes) == 0:
        raise FormatError("header declares a zero dimension", offset + 4)

    cursor = offset + 4 + HEADER_FIELDS * HEADER_DTYPE.itemsize
    class_dtype = _class_dtype(text_dim)
    classes = _take(buf, cursor, class_dtype, num_classes, "class table")
    if int(classes["seen"].astype(bool).sum()) != num_seen:
        raise FormatError(f"header declares {num_seen} seen classes, table marks a different count", cursor)
    _check_texts(classes["text"], cursor, class_dtype.itemsize)
    cursor += num_classes * class_dtype.itemsize

    sample_dtype = _sample_dtype(input_dim)
    samples = _take(buf, cursor, sample_dtype, num_samples, "sample payload")
    bad = np.flatnonzero(samples["label"] >= num_classes)
    if bad.size:
        raise FormatError(
            f"sample label {int(samples['label'][bad[0]])} outside {num_classes} classes",
            cursor + int(bad[0]) * sample_dtype.itemsize,
        )
    _check_features(samples, cursor, sample_dtype.itemsize)
    cursor += num_samples * sample_dtype.itemsize
    dims = {"input_dim": input_dim, "text_dim": text_dim, "num_classes": num_classes}
    return dims, classes, samples, cursor


def _normalize_texts(texts: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(texts, axis=1)
    off = np.abs(norms - 1.0) > NORM_TOLERANCE
    if np.any(off):
        logger.warning("Renormalizing text embeddings", classes=int(off.sum()))
        texts = texts.copy()
        texts[off] /= norms[off, None]
    return texts


def _to_split(samples: np.ndarray) -> Split:
    return Split(
        audio=samples["audio"].astype(np.float64),
        visual=samples["visual"].astype(np.float64),
        labels=samples["label"].astype(np.int64),
    )


def _check_train_labels(classes: list[ClassLabel], train: Split, offset: int) -> None:
    unseen = {c.id for c in classes if not c.seen}
    leaked = sorted(unseen.intersection(np.unique(train.labels).tolist()))
    if leaked:
        raise FormatError(f"train split holds unseen classes {leaked}", offset)


def _load_binary(path: Path) -> Dataset:
    buf = path.read_bytes()
    dims, classes, train_samples, cursor = _decode_block(buf, 0)
    if cursor >= len(buf):
        raise FormatError("missing test block", cursor)
    test_offset = cursor
    test_dims, test_classes, test_samples, cursor = _decode_block(buf, test_offset)
    if test_dims != dims:
        raise FormatError(f"test block dimensions {test_dims} disagree with train block {dims}", test_offset)
    if test_classes.tobytes() != classes.tobytes():
        raise FormatError("test block class table differs from train block", test_offset)
    if cursor != len(buf):
        raise FormatError(f"{len(buf) - cursor} trailing bytes", cursor)

    labels = [
        ClassLabel(id=c, name=f"class_{c:03d}", seen=bool(classes["seen"][c]))
        for c in range(dims["num_classes"])
    ]
    train = _to_split(train_samples)
    _check_train_labels(labels, train, 0)
    texts = _normalize_texts(classes["text"].astype(np.float64))
    return Dataset(classes=labels, texts=texts, train=train, test=_to_split(test_samples))


def _save_jsonl(dataset: Dataset, path: Path) -> None:
    header = HeaderRecord(
        version=VERSION,
        input_dim=dataset.input_dim,
        text_dim=dataset.text_dim,
        num_classes=dataset.num_classes,
        num_seen=len(dataset.seen_ids),
    )
    with path.open("w") as fh:
        fh.write(header.model_dump_json() + "\n")
        for c in dataset.classes:
            record = ClassRecord(id=c.id, name=c.name, seen=c.seen, text=dataset.texts[c.id].tolist())
            fh.write(record.model_dump_json() + "\n")
        for name in (SplitName.TRAIN, SplitName.TEST):
            split = dataset.split(name)
            for i in range(len(split)):
                record = SampleRecord(
                    split=name,
                    label=int(split.labels[i]),
                    audio=split.audio[i].tolist(),
                    visual=split.visual[i].tolist(),
                )
                fh.write(record.model_dump_json() + "\n")


def _load_jsonl(path: Path) -> Dataset:
    header: HeaderRecord | None = None
    class_records: dict[int, ClassRecord] = {}
    rows: dict[SplitName, list[SampleRecord]] = {SplitName.TRAIN: [], SplitName.TEST: []}

    offset = 0
    with path.open("rb") as fh:
        for line in fh:
            start, offset = offset, offset + len(line)
            if not line.strip():
                continue
            try:
                record = _RecordAdapter.validate_json(line)
            except ValidationError as exc:
                raise FormatError(f"invalid record: {exc.errors()[0]['msg']}", start) from exc
            if isinstance(record, HeaderRecord):
                if header is not None:
                    raise FormatError("second header record", start)
                if record.version != VERSION:
                    raise FormatError(f"unsupported version {record.version}", start)
                header = record
                continue
            if header is None:
                raise FormatError("record before header", start)
            if isinstance(record, ClassRecord):
                if len(record.text) != header.text_dim or record.id >= header.num_classes:
                    raise FormatError(f"class record {record.id} disagrees with header", start)
                _check_texts(np.array([record.text]), start, 0, first_id=record.id)
                class_records[record.id] = record
            else:
                if (
                    len(record.audio) != header.input_dim
                    or len(record.visual) != header.input_dim
                    or record.label >= header.num_classes
                ):
                    raise FormatError("sample record disagrees with header", start)
                if not (np.isfinite(record.audio).all() and np.isfinite(record.visual).all()):
                    raise FormatError("non-finite features in sample record", start)
                rows[record.split].append(record)

    if header is None:
        raise FormatError("missing header record", 0)
    if sorted(class_records) != list(range(header.num_classes)):
        raise FormatError("class records are not dense in [0, num_classes)", offset)

    classes = [
        ClassLabel(id=c, name=class_records[c].name, seen=class_records[c].seen)
        for c in range(header.num_classes)
    ]
    if sum(c.seen for c in classes) != header.num_seen:
        raise FormatError("header seen count disagrees with class records", offset)

    def to_split(records: list[SampleRecord]) -> Split:
        dim = header.input_dim
        return Split(
            audio=np.array([r.audio for r in records], dtype=np.float64).reshape(-1, dim),
            visual=np.array([r.visual for r in records], dtype=np.float64).reshape(-1, dim),
            labels=np.array([r.label for r in records], dtype=np.int64),
        )

    train = to_split(rows[SplitName.TRAIN])
    _check_train_labels(classes, train, offset)
    texts = _normalize_texts(np.array([class_records[c].text for c in range(header.num_classes)]))
    return Dataset(classes=classes, texts=texts, train=train, test=to_split(rows[SplitName.TEST]))


def save_features(dataset: Dataset, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".jsonl":
        _save_jsonl(dataset, path)
    else:
        path.write_bytes(_encode_block(dataset, dataset.train) + _encode_block(dataset, dataset.test))
    logger.info("Feature file written", path=str(path), classes=dataset.num_classes)
    return path


def load_features(path: Path | str) -> Dataset:
    path = Path(path)
    dataset = _load_jsonl(path) if path.suffix == ".jsonl" else _load_binary(path)
    logger.info(
        "Feature file loaded",
        path=str(path),
        train=len(dataset.train),
        test=len(dataset.test),
        classes=dataset.num_classes,
    )
    return dataset
