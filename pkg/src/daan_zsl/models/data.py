"""Dataset containers, feature-file records and the synthetic-generator configuration."""

from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from daan_zsl.errors import ContractError


class Modality(StrEnum):
    AUDIO = "audio"
    VISUAL = "visual"


class Part(StrEnum):
    """Parameter groups of one modality's encoder that modulation scales."""

    ATTN = "qdma.attn"
    TCN = "qdma.tcn"


class SplitName(StrEnum):
    TRAIN = "train"
    TEST = "test"


class ClassLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    name: str
    seen: bool


class SynthConfig(BaseModel):
    """Knobs of the synthetic audio-visual generator.

    ``audio_snr``/``visual_snr`` set per-modality quality; ``content_bias_std``
    sets how unequally individual samples carry their class signal. An SNR of
    ``inf`` disables noise for that modality.
    """

    num_seen_classes: int = Field(20, gt=0)
    num_unseen_classes: int = Field(5, gt=0)
    samples_per_class: int = Field(100, gt=0)
    test_samples_per_class: int = Field(20, gt=0)
    input_dim: int = Field(64, gt=0)
    text_dim: int = Field(32, gt=0)
    audio_snr: float = Field(1.0, gt=0)
    visual_snr: float = Field(100.0, gt=0)
    content_bias_std: float = Field(0.5, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)


@dataclass(frozen=True, eq=False)
class Sample:
    audio: np.ndarray
    visual: np.ndarray
    label: ClassLabel
    # row in its split
    index: int = -1


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    class_id: int
    w: np.ndarray


@dataclass(frozen=True, eq=False)
class SamplePair:
    anchor: Sample
    negative: Sample
    anchor_text: TextEmbedding
    negative_text: TextEmbedding

    def __post_init__(self) -> None:
        if self.negative.label.id == self.anchor.label.id:
            raise ContractError(
                f"negative shares the anchor's class {self.anchor.label.id}"
            )


def stack_pairs(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Audio, visual and text rows of all anchors followed by all negatives."""

    samples = [p.anchor for p in pairs] + [p.negative for p in pairs]
    texts = [p.anchor_text.w for p in pairs] + [p.negative_text.w for p in pairs]
    return (
        np.stack([s.audio for s in samples]),
        np.stack([s.visual for s in samples]),
        np.stack(texts),
    )


@dataclass(frozen=True, eq=False)
class Split:
    """Row-aligned feature matrices of one split."""

    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: np.ndarray) -> "Split":
        return Split(self.audio[indices], self.visual[indices], self.labels[indices])

    def features(self, modality: Modality) -> np.ndarray:
        return self.audio if modality is Modality.AUDIO else self.visual


@dataclass(frozen=True, eq=False)
class Dataset:
    classes: list[ClassLabel]
    texts: np.ndarray
    train: Split
    test: Split

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def input_dim(self) -> int:
        return int(self.train.audio.shape[1])

    @property
    def text_dim(self) -> int:
        return int(self.texts.shape[1])

    @property
    def seen_ids(self) -> np.ndarray:
        return np.array([c.id for c in self.classes if c.seen], dtype=np.int64)

    @property
    def unseen_ids(self) -> np.ndarray:
        return np.array([c.id for c in self.classes if not c.seen], dtype=np.int64)

    def text(self, class_id: int) -> TextEmbedding:
        return TextEmbedding(class_id, self.texts[class_id])

    def split(self, name: SplitName) -> Split:
        return self.train if name is SplitName.TRAIN else self.test

    def sample(self, name: SplitName, row: int) -> Sample:
        part = self.split(name)
        return Sample(part.audio[row], part.visual[row], self.classes[int(part.labels[row])], row)

    def samples(self, name: SplitName) -> list[Sample]:
        return [self.sample(name, i) for i in range(len(self.split(name)))]

    def pair(self, anchor: Sample, negative: Sample) -> SamplePair:
        return SamplePair(anchor, negative, self.text(anchor.label.id), self.text(negative.label.id))


class HeaderRecord(BaseModel):
    kind: Literal["header"] = "header"
    version: int
    input_dim: int = Field(..., gt=0)
    text_dim: int = Field(..., gt=0)
    num_classes: int = Field(..., gt=0)
    num_seen: int = Field(..., ge=0)


class ClassRecord(BaseModel):
    kind: Literal["class"] = "class"
    id: int = Field(..., ge=0)
    name: str
    seen: bool
    text: list[float]


class SampleRecord(BaseModel):
    kind: Literal["sample"] = "sample"
    split: SplitName
    label: int = Field(..., ge=0)
    audio: list[float]
    visual: list[float]
