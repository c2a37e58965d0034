"""Training loop, checkpoints and run artifacts.

A run directory holds ``metrics.jsonl`` (one line per epoch),
``modulation_trace.csv`` (one line per pair, modality and part of every
modulated step) and ``checkpoint.npz`` (the last completed epoch).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from daan_zsl import __version__
from daan_zsl.config.logging import get_logger
from daan_zsl.config.settings import DeltaIndexing, ExperimentConfig, build_config, get_settings
from daan_zsl.errors import ContractError, FormatError, MiningError, NumericError, TrainingDivergedError
from daan_zsl.models.data import Dataset, SplitName, stack_pairs
from daan_zsl.models.reports import EpochMetrics, LossBreakdown
from daan_zsl.services.csgm import ModulationRates, compute_rates, modulated_step, unit_rates
from daan_zsl.services.feature_io import load_features
from daan_zsl.services.layers import ForwardContext, Mode, ParamStore
from daan_zsl.services.losses import LossConfig, loss_total
from daan_zsl.services.network import DaanNetwork, pair_embeddings
from daan_zsl.services.optimizers import build_optimizer
from daan_zsl.services.synthetic import generate_synthetic, mine_negative, mine_negative_index, split_digest
from daan_zsl.services.tensor import Tape

logger = get_logger(__name__)

METRICS_FILE = "metrics.jsonl"
TRACE_FILE = "modulation_trace.csv"
CHECKPOINT_FILE = "checkpoint.npz"
CHECKPOINT_VERSION = 1


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.path is not None:
        return load_features(cfg.data.path)
    return generate_synthetic(cfg.data.synthetic, workers=get_settings().threads)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for parameter initialization and for the training loop."""

    init, loop = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(init)), np.random.Generator(np.random.PCG64(loop))


@dataclass
class StepResult:
    breakdown: LossBreakdown
    rates: ModulationRates | None


@dataclass
class _EpochAccumulator:
    breakdowns: list[LossBreakdown] = field(default_factory=list)
    etas: list[dict[str, float]] = field(default_factory=list)
    trace: list[pd.DataFrame] = field(default_factory=list)

    def metrics(self, epoch: int, digest: str) -> EpochMetrics:
        frame = pd.DataFrame([b.model_dump() for b in self.breakdowns])
        means = {k: float(v) for k, v in frame.mean().items()}
        mean_eta = pd.DataFrame(self.etas).mean().to_dict() if self.etas else {}
        return EpochMetrics(epoch=epoch, mean_eta=mean_eta, params_digest=digest, **means)


class Trainer:
    """Owns the network, optimizer and training-loop generator of one run."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset, out_dir: Path | str | None = None) -> None:
        if dataset.input_dim != cfg.dims.input or dataset.text_dim != cfg.dims.output:
            raise ContractError(
                f"dataset dims ({dataset.input_dim}, {dataset.text_dim}) do not match "
                f"dims.input/dims.output ({cfg.dims.input}, {cfg.dims.output})"
            )
        if len(dataset.train) == 0:
            raise ContractError("train split is empty")
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        init_rng, self.rng = _streams(cfg.train.seed)
        self.network = DaanNetwork(cfg, init_rng)
        self.network.set_context_text(dataset.texts[dataset.seen_ids])
        self.optimizer = build_optimizer(cfg.train.learning_rate, cfg.csgm.pure_sgd)
        self.loss_cfg = LossConfig.from_config(cfg.train)
        self.epoch = 0
        self.step = 0
        self.history: list[EpochMetrics] = []
        self.last_checkpoint: Path | None = None
        self._unseen = dataset.unseen_ids
        self.log = logger.bind(seed=cfg.train.seed)
        if cfg.csgm.enabled and cfg.csgm.delta_indexing is DeltaIndexing.LITERAL:
            self.log.warning("Literal delta indexing makes every contribution rate equal csgm.gamma")

    @property
    def store(self) -> ParamStore:
        return self.network.store

    def mine_negatives(self, anchors: np.ndarray) -> np.ndarray:
        """One different-class negative per anchor, from the batch when possible."""

        batch = [self.dataset.sample(SplitName.TRAIN, int(row)) for row in anchors]
        negatives = np.empty_like(anchors)
        for i, anchor in enumerate(anchors):
            try:
                negatives[i] = mine_negative(batch, i, self.rng).index
            except MiningError:
                self.log.warning("No in-batch negative; mining from the whole train split", anchor=int(anchor))
                negatives[i] = mine_negative_index(self.dataset.train.labels, int(anchor), self.rng)
        return negatives

    def _check_rows(self, rows: np.ndarray) -> None:
        leaked = np.intersect1d(self.dataset.train.labels[rows], self._unseen)
        if leaked.size:
            raise ContractError(f"batch holds unseen classes {leaked.tolist()}")

    def train_step(self, anchors: np.ndarray, negatives: np.ndarray) -> StepResult:
        """Forward the stacked anchors and negatives, then take one modulated step."""

        batch = anchors.shape[0]
        rows = np.concatenate([anchors, negatives])
        self._check_rows(rows)
        split = SplitName.TRAIN
        sample_pairs = [
            self.dataset.pair(self.dataset.sample(split, int(a)), self.dataset.sample(split, int(n)))
            for a, n in zip(anchors, negatives)
        ]
        audio, visual, texts = stack_pairs(sample_pairs)
        ctx = ForwardContext(Mode.TRAIN, self.rng)
        params = list(self.store)

        try:
            with Tape() as tape:
                emb = self.network.forward(audio, visual, texts, ctx)
                pairs = pair_embeddings(emb, batch, texts[:batch])
                per_pair, breakdown = loss_total(pairs, self.loss_cfg)
            grads = dict(zip((p.name for p in params), tape.per_seed_gradients(per_pair, params)))
        except NumericError as exc:
            raise TrainingDivergedError(
                f"non-finite values in {exc.op} at epoch {self.epoch}, step {self.step}",
                self.last_checkpoint,
            ) from exc

        active = self.cfg.csgm.active(self.epoch)
        if active:
            pos = {k: v.data for k, v in pairs.theta_pos.items()}
            neg = {k: v.data for k, v in pairs.theta_neg.items()}
            rates = compute_rates(self.store, grads, pos, neg, self.cfg.csgm)
        else:
            rates = unit_rates(self.store, batch)
        modulated_step(self.store, grads, rates, self.optimizer, self.cfg.csgm, self.rng, noisy=active)
        self.step += 1
        self.log.debug("Step", epoch=self.epoch, step=self.step, total=breakdown.total)
        return StepResult(breakdown, rates if active else None)

    def run_epoch(self) -> EpochMetrics:
        train = self.dataset.train
        order = self.rng.permutation(len(train))
        acc = _EpochAccumulator()
        for start in range(0, len(order), self.cfg.train.batch_size):
            anchors = order[start : start + self.cfg.train.batch_size]
            negatives = self.mine_negatives(anchors)
            result = self.train_step(anchors, negatives)
            acc.breakdowns.append(result.breakdown)
            if result.rates is not None:
                acc.etas.append(result.rates.mean_eta())
                acc.trace.append(result.rates.trace(self.step, anchors))

        metrics = acc.metrics(self.epoch, self.store.digest())
        if not np.isfinite(metrics.total):
            raise TrainingDivergedError(f"non-finite epoch loss at epoch {self.epoch}", self.last_checkpoint)
        self.history.append(metrics)
        self._write_epoch(metrics, acc.trace)
        self.epoch += 1
        self.log.info("Epoch finished", epoch=metrics.epoch, total=metrics.total, **metrics.mean_eta)
        return metrics

    def fit(self, epochs: int | None = None) -> list[EpochMetrics]:
        """Run ``epochs`` more epochs (default: up to ``train.epochs``)."""

        target = self.cfg.train.epochs if epochs is None else self.epoch + epochs
        self.log.info(
            "Training started",
            epochs=target - self.epoch,
            train=len(self.dataset.train),
            split_digest=split_digest(self.dataset.train),
        )
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._prepare_run_files()
            if self.last_checkpoint is None:
                self.save_checkpoint()
        start = len(self.history)
        while self.epoch < target:
            self.run_epoch()
            if self.out_dir is not None and (
                self.epoch % self.cfg.train.checkpoint_every == 0 or self.epoch == target
            ):
                self.save_checkpoint()
        return self.history[start:]

    def _prepare_run_files(self) -> None:
        """Start fresh run files, or cut resumed ones back to the restored epoch and step."""

        metrics_path = self.out_dir / METRICS_FILE
        trace_path = self.out_dir / TRACE_FILE
        if self.last_checkpoint is None and self.epoch == 0:
            metrics_path.write_text("")
            trace_path.unlink(missing_ok=True)
            return

        if metrics_path.exists():
            kept = [
                line
                for line in metrics_path.read_text().splitlines()
                if line and EpochMetrics.model_validate_json(line).epoch < self.epoch
            ]
            metrics_path.write_text("".join(line + "\n" for line in kept))
        else:
            metrics_path.write_text("")
        if trace_path.exists():
            frame = pd.read_csv(trace_path, float_precision="round_trip")
            frame = frame[frame["step"] <= self.step]
            frame.to_csv(trace_path, index=False, float_format="%.17g")

    def _write_epoch(self, metrics: EpochMetrics, trace: list[pd.DataFrame]) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with (self.out_dir / METRICS_FILE).open("a") as fh:
            fh.write(metrics.model_dump_json() + "\n")
        if trace:
            path = self.out_dir / TRACE_FILE
            frame = pd.concat(trace, ignore_index=True)
            header = not path.exists() or path.stat().st_size == 0
            frame.to_csv(path, mode="a", header=header, index=False, float_format="%.17g")

    def save_checkpoint(self, path: Path | str | None = None) -> Path:
        if path is None:
            if self.out_dir is None:
                raise ContractError("checkpoint needs a path or an output directory")
            path = self.out_dir / CHECKPOINT_FILE
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "version": CHECKPOINT_VERSION,
            "package": __version__,
            "config": self.cfg.to_json(),
            "epoch": self.epoch,
            "step": self.step,
            "rng": self.rng.bit_generator.state,
        }
        arrays = self.store.state()
        arrays.update({f"optim/{k}": v for k, v in self.optimizer.state_dict().items()})
        with path.open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
        self.last_checkpoint = path
        self.log.debug("Checkpoint written", path=str(path), epoch=self.epoch)
        return path

    def restore(self, path: Path | str) -> None:
        """Load parameters, optimizer state, the loop generator and counters from ``path``."""

        meta, arrays = read_checkpoint(path)
        self.store.load_state(arrays)
        self.optimizer.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("optim/")})
        self.rng.bit_generator.state = meta["rng"]
        self.epoch = int(meta["epoch"])
        self.step = int(meta["step"])
        self.last_checkpoint = Path(path)


def read_checkpoint(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    if "meta" not in arrays:
        raise FormatError("checkpoint has no metadata entry", 0)
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {meta.get('version')}", 0)
    return meta, arrays


def checkpoint_config(path: Path | str) -> ExperimentConfig:
    meta, _ = read_checkpoint(path)
    return build_config(json.loads(meta["config"]))


def resume(path: Path | str, dataset: Dataset | None = None, out_dir: Path | str | None = None) -> Trainer:
    """Rebuild a trainer from a checkpoint; the dataset is reloaded from its config when not given."""

    cfg = checkpoint_config(path)
    trainer = Trainer(cfg, dataset if dataset is not None else load_dataset(cfg), out_dir)
    trainer.restore(path)
    return trainer


def train(cfg: ExperimentConfig, out_dir: Path | str | None = None, dataset: Dataset | None = None) -> Trainer:
    dataset = dataset if dataset is not None else load_dataset(cfg)
    trainer = Trainer(cfg, dataset, out_dir)
    trainer.fit()
    return trainer
