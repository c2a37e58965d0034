"""Synthetic audio-visual dataset with controllable quality and content discrepancies.

Each class gets a unit-norm text prototype ``t_c``. A sample of class ``c`` in
modality ``m`` is ``M_m @ t_c + b * u + noise`` where ``M_m`` is a fixed random
map per modality, ``b * u`` is a per-sample content bias along a random unit
direction and the white noise power is the clean signal power divided by the
modality's SNR. Every sample draws from its own generator keyed by
``(seed, class, index, split)``, so serial and threaded generation agree bit
for bit.
"""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from daan_zsl.config.logging import get_logger
from daan_zsl.errors import GenerationError, MiningError
from daan_zsl.models.data import (
    ClassLabel,
    Dataset,
    Modality,
    Sample,
    Split,
    SplitName,
    SynthConfig,
)

logger = get_logger(__name__)

_SPLIT_KEYS = {SplitName.TRAIN: 0, SplitName.TEST: 1}


@dataclass(frozen=True)
class ModalityMaps:
    prototypes: np.ndarray
    audio: np.ndarray
    visual: np.ndarray

    def of(self, modality: Modality) -> np.ndarray:
        return self.audio if modality is Modality.AUDIO else self.visual


def _to_float32_grid(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def modality_maps(cfg: SynthConfig) -> ModalityMaps:
    """Class prototypes and the per-modality text-to-feature maps for ``cfg.seed``."""

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    num_classes = cfg.num_seen_classes + cfg.num_unseen_classes
    raw = rng.normal(size=(num_classes, cfg.text_dim))
    prototypes = _to_float32_grid(raw / np.linalg.norm(raw, axis=1, keepdims=True))
    audio = rng.normal(size=(cfg.input_dim, cfg.text_dim))
    visual = rng.normal(size=(cfg.input_dim, cfg.text_dim))
    return ModalityMaps(prototypes, audio, visual)


def _sample_rng(seed: int, class_id: int, index: int, split: SplitName) -> np.random.Generator:
    key = (class_id, index, _SPLIT_KEYS[split])
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _modality_feature(
    signal: np.ndarray, rng: np.random.Generator, snr: float, bias_std: float
) -> np.ndarray:
    dim = signal.shape[0]
    bias = rng.normal() * bias_std
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    white = rng.normal(size=dim)
    clean = signal + bias * direction
    noise_std = np.sqrt(np.mean(clean * clean) / snr)
    return clean + noise_std * white


def _generate_sample(
    cfg: SynthConfig, maps: ModalityMaps, class_id: int, index: int, split: SplitName
) -> tuple[np.ndarray, np.ndarray]:
    rng = _sample_rng(cfg.seed, class_id, index, split)
    t = maps.prototypes[class_id]
    audio = _modality_feature(maps.audio @ t, rng, cfg.audio_snr, cfg.content_bias_std)
    visual = _modality_feature(maps.visual @ t, rng, cfg.visual_snr, cfg.content_bias_std)
    return _to_float32_grid(audio), _to_float32_grid(visual)


def _generate_split(
    cfg: SynthConfig,
    maps: ModalityMaps,
    class_ids: Sequence[int],
    per_class: int,
    split: SplitName,
    workers: int,
) -> Split:
    jobs = [(c, i) for c in class_ids for i in range(per_class)]

    def run(job: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        return _generate_sample(cfg, maps, job[0], job[1], split)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]

    audio = np.stack([a for a, _ in rows])
    visual = np.stack([v for _, v in rows])
    labels = np.array([c for c, _ in jobs], dtype=np.int64)
    return Split(audio, visual, labels)


def generate_synthetic(cfg: SynthConfig, workers: int = 1) -> Dataset:
    """Generate a train split (seen classes only) and a test split (all classes).

    Seen classes take ids ``[0, num_seen)``, unseen classes the ids after them.
    """

    maps = modality_maps(cfg)
    num_classes = cfg.num_seen_classes + cfg.num_unseen_classes
    classes = [
        ClassLabel(id=c, name=f"class_{c:03d}", seen=c < cfg.num_seen_classes)
        for c in range(num_classes)
    ]
    seen_ids = [c.id for c in classes if c.seen]

    train = _generate_split(cfg, maps, seen_ids, cfg.samples_per_class, SplitName.TRAIN, workers)
    test = _generate_split(
        cfg, maps, range(num_classes), cfg.test_samples_per_class, SplitName.TEST, workers
    )
    dataset = Dataset(classes=classes, texts=maps.prototypes, train=train, test=test)
    check_train_split(dataset)

    logger.info(
        "Synthetic dataset generated",
        seed=cfg.seed,
        train=len(train),
        test=len(test),
        audio_snr=cfg.audio_snr,
        visual_snr=cfg.visual_snr,
    )
    return dataset


def check_train_split(dataset: Dataset) -> None:
    unseen = set(dataset.unseen_ids.tolist())
    leaked = sorted(unseen.intersection(np.unique(dataset.train.labels).tolist()))
    if leaked:
        raise GenerationError(f"unseen classes {leaked} appear in the train split")


def mine_negative_index(labels: np.ndarray, anchor_index: int, rng: np.random.Generator) -> int:
    """Uniform pick among positions whose label differs from the anchor's."""

    candidates = np.flatnonzero(labels != labels[anchor_index])
    if candidates.size == 0:
        raise MiningError(f"no sample with a label other than {int(labels[anchor_index])} in batch")
    return int(candidates[rng.integers(candidates.size)])


def mine_negative(batch: Sequence[Sample], anchor_index: int, rng: np.random.Generator) -> Sample:
    labels = np.array([s.label.id for s in batch])
    return batch[mine_negative_index(labels, anchor_index, rng)]


def linear_probe_accuracy(dataset: Dataset, modality: Modality) -> float:
    """Seen-class test accuracy of a least-squares one-hot probe on one modality."""

    seen = dataset.seen_ids
    train_x = dataset.train.features(modality)
    design = np.hstack([train_x, np.ones((train_x.shape[0], 1))])
    targets = (dataset.train.labels[:, None] == seen[None, :]).astype(np.float64)
    weights, *_ = np.linalg.lstsq(design, targets, rcond=None)

    mask = np.isin(dataset.test.labels, seen)
    test_x = dataset.test.features(modality)[mask]
    scores = np.hstack([test_x, np.ones((test_x.shape[0], 1))]) @ weights
    predicted = seen[np.argmax(scores, axis=1)]
    return float(np.mean(predicted == dataset.test.labels[mask]))


def split_digest(split: Split) -> str:
    h = hashlib.sha256()
    for array in (split.labels.astype("<i8"), split.audio.astype("<f8"), split.visual.astype("<f8")):
        h.update(np.ascontiguousarray(array).tobytes())
    return h.hexdigest()
