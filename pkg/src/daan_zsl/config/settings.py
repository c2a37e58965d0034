import json
import math
from enum import StrEnum
from functools import lru_cache
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from daan_zsl.errors import ConfigError
from daan_zsl.models.data import SynthConfig


class ValueText(StrEnum):
    CONTEXT = "context"
    CLASS = "class"


class DeltaIndexing(StrEnum):
    TRIPLET = "triplet"
    LITERAL = "literal"


class RecDistance(StrEnum):
    EUCLIDEAN = "euclidean"
    MEAN_SQUARED = "mean-squared"


class FusionRule(StrEnum):
    AVERAGE = "average"
    AUDIO = "audio"
    VISUAL = "visual"


class Encoder(StrEnum):
    QDMA = "qdma"
    MLP = "mlp"


class DimsConfig(BaseModel):
    input: int = Field(64, gt=0)
    hidden: int = Field(64, gt=0)
    output: int = Field(32, gt=0)


class QdmaConfig(BaseModel):
    beta: float = Field(0.5, ge=0, le=1)
    tokens: int = Field(8, gt=0)
    groups: int = Field(4, gt=0)
    dropout: float = Field(0.1, ge=0, lt=1)
    attn_dim: int = Field(8, gt=0)
    value_text: ValueText = ValueText.CONTEXT


class TcnConfig(BaseModel):
    # n dilated layers with dilation k; every conv has kernel size `kernel`
    n: int = Field(2, ge=1)
    k: int = Field(3, ge=1)
    kernel: int = Field(3, ge=1)
    x_hid: int = Field(8, gt=0)


class FusionConfig(BaseModel):
    heads: int = Field(1, gt=0)
    # None means the per-token hidden width
    attn_dim: int | None = Field(None, gt=0)
    # None means the hidden width
    ff_dim: int | None = Field(None, gt=0)
    dropout: float = Field(0.1, ge=0, lt=1)


class CsgmConfig(BaseModel):
    enabled: bool = True
    gamma: float = Field(0.45, gt=0, le=1)
    mu: float = Field(1.15, gt=0)
    noise_scale: float = Field(1e-3, ge=0)
    vc_only: bool = False
    # literal keeps a repeated negative index whose gap is always zero, so V_c == 0 and eta == gamma
    delta_indexing: DeltaIndexing = DeltaIndexing.TRIPLET
    epoch_start: int = Field(0, ge=0)
    epoch_end: int | None = Field(None, ge=0)
    pure_sgd: bool = False

    def active(self, epoch: int) -> bool:
        if not self.enabled or epoch < self.epoch_start:
            return False
        return self.epoch_end is None or epoch < self.epoch_end


class TrainConfig(BaseModel):
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=2)
    learning_rate: float = Field(1e-3, gt=0)
    margin: float = Field(1.0, ge=0)
    rec_distance: RecDistance = RecDistance.MEAN_SQUARED
    seed: int = Field(0, ge=0, lt=2**64)
    checkpoint_every: int = Field(1, ge=1)


class DataConfig(BaseModel):
    synthetic: SynthConfig = Field(default_factory=SynthConfig)
    # a feature file replaces the synthetic generator when set
    path: Path | None = None


class EvalConfig(BaseModel):
    rule: FusionRule = FusionRule.AVERAGE
    chunk_size: int = Field(256, gt=0)


class ModelConfig(BaseModel):
    encoder: Encoder = Encoder.QDMA


class ExperimentConfig(BaseSettings):
    """Everything one training/evaluation run depends on."""

    model_config = SettingsConfigDict(
        env_prefix="DAAN_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    dims: DimsConfig = Field(default_factory=DimsConfig)
    qdma: QdmaConfig = Field(default_factory=QdmaConfig)
    tcn: TcnConfig = Field(default_factory=TcnConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    csgm: CsgmConfig = Field(default_factory=CsgmConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @model_validator(mode="after")
    def check_dimensions(self) -> "ExperimentConfig":
        d, q, t, f = self.dims, self.qdma, self.tcn, self.fusion
        problems = []
        if d.input % (2 * q.tokens):
            problems.append(f"dims.input={d.input} is not divisible by 2*qdma.tokens={2 * q.tokens}")
        if d.hidden % q.tokens:
            problems.append(f"dims.hidden={d.hidden} is not divisible by qdma.tokens={q.tokens}")
        if d.output % q.tokens:
            problems.append(f"dims.output={d.output} is not divisible by qdma.tokens={q.tokens}")
        if d.hidden % q.groups:
            problems.append(f"qdma.groups={q.groups} does not divide dims.hidden={d.hidden}")
        if d.hidden % t.x_hid:
            problems.append(f"tcn.x_hid={t.x_hid} does not divide dims.hidden={d.hidden}")
        if self.fusion_attn_dim % f.heads:
            problems.append(f"fusion.heads={f.heads} does not divide attention width {self.fusion_attn_dim}")
        if self.data.path is None:
            s = self.data.synthetic
            if s.input_dim != d.input or s.text_dim != d.output:
                problems.append(
                    "data.synthetic.input_dim/text_dim must equal dims.input/dims.output"
                )
        if self.csgm.epoch_end is not None and self.csgm.epoch_end < self.csgm.epoch_start:
            problems.append("csgm.epoch_end precedes csgm.epoch_start")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def hidden_tok(self) -> int:
        return self.dims.hidden // self.qdma.tokens

    @property
    def fusion_attn_dim(self) -> int:
        return self.fusion.attn_dim or self.dims.hidden // self.qdma.tokens

    @property
    def fusion_ff_dim(self) -> int:
        return self.fusion.ff_dim or self.dims.hidden

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), default=str, sort_keys=True)


class RuntimeSettings(BaseSettings):
    """Process-level settings read from the environment."""

    model_config = SettingsConfigDict(env_prefix="DAAN_", extra="ignore")

    # worker cap for evaluation and dataset generation (DAAN_THREADS)
    threads: int = Field(1, ge=1)


@lru_cache
def get_settings() -> RuntimeSettings:
    """Get cached runtime settings."""

    return RuntimeSettings()


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "ucf": {"csgm": {"mu": 1.15, "gamma": 0.45}, "tcn": {"k": 3, "n": 2}},
    "activitynet": {"csgm": {"mu": 0.5, "gamma": 0.5}, "tcn": {"k": 9, "n": 3}},
    "vggsound": {"csgm": {"mu": 1.2, "gamma": 0.6}, "tcn": {"k": 5, "n": 5}},
    "full-scale": {
        "dims": {"input": 512, "hidden": 512, "output": 300},
        "qdma": {"tokens": 4},
        "data": {"synthetic": {"input_dim": 512, "text_dim": 300}},
    },
}


def _coerce(raw: str) -> Any:
    value = raw.strip()
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    if lowered in ("inf", "+inf", "infinity"):
        return math.inf
    if lowered in ("-inf", "-infinity"):
        return -math.inf
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _assign(tree: dict[str, Any], dotted: str, value: Any, where: str) -> None:
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"{where}: malformed key {dotted!r}")
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{where}: {key!r} is both a value and a section")
        node = child
    node[keys[-1]] = value


def parse_key_values(text: str) -> dict[str, Any]:
    """Parse ``section.key = value`` lines into a nested mapping."""

    tree: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"line {lineno}: expected key=value, got {content!r}")
        key, raw = content.split("=", 1)
        _assign(tree, key.strip(), _coerce(raw), f"line {lineno}")
    return tree


def deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_experiment_config(
    path: Path | str | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    preset: str | None = None,
) -> ExperimentConfig:
    """Build a config from preset < file < ``--seed`` < ``--set`` (environment below all)."""

    merged: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = deep_merge(merged, PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        merged = deep_merge(merged, parse_key_values(text))
    if seed is not None:
        merged = deep_merge(merged, {"train": {"seed": seed}, "data": {"synthetic": {"seed": seed}}})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        extra: dict[str, Any] = {}
        _assign(extra, key.strip(), _coerce(raw), "--set")
        merged = deep_merge(merged, extra)
    return build_config(merged)


def build_config(values: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def with_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-key overrides applied and re-validated."""

    tree: dict[str, Any] = {}
    for key, value in overrides.items():
        _assign(tree, key, value, "override")
    return build_config(deep_merge(cfg.model_dump(), tree))
