"""Ablation and one-parameter sweep runners built on train + evaluate."""

from multiprocessing import Pool
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from daan_zsl.config.logging import get_logger  # noqa: E402
from daan_zsl.config.settings import Encoder, ExperimentConfig, with_overrides  # noqa: E402
from daan_zsl.errors import ConfigError, ContractError  # noqa: E402
from daan_zsl.models.data import Dataset  # noqa: E402
from daan_zsl.models.reports import AblationRow, GzslReport, SweepPoint  # noqa: E402
from daan_zsl.services.evaluation import REPORT_COLUMNS, evaluate, format_table, report_frame  # noqa: E402
from daan_zsl.services.synthetic import split_digest  # noqa: E402
from daan_zsl.services.training import Trainer, load_dataset  # noqa: E402

logger = get_logger(__name__)

REPORT_FILE = "report.json"
TABLE_FILE = "table.txt"

# model variants in table order: encoder swap first, then modulation
ABLATIONS: dict[str, dict] = {
    "base": {"model.encoder": Encoder.MLP, "csgm.enabled": False},
    "+QDMA": {"model.encoder": Encoder.QDMA, "csgm.enabled": False},
    "+CSGM(V_c)": {"model.encoder": Encoder.QDMA, "csgm.enabled": True, "csgm.vc_only": True},
    "DAAN": {"model.encoder": Encoder.QDMA, "csgm.enabled": True, "csgm.vc_only": False},
}

SWEEP_PARAMS: dict[str, type] = {"tcn.n": int, "csgm.gamma": float}


def write_report(report: GzslReport, out_dir: Path, name: str = "DAAN") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / REPORT_FILE).write_text(report.model_dump_json(indent=2) + "\n")
    (out_dir / TABLE_FILE).write_text(format_table([(name, report)]))


def run_experiment(
    cfg: ExperimentConfig, dataset: Dataset, out_dir: Path | str | None = None
) -> tuple[Trainer, GzslReport]:
    """Train to ``train.epochs`` and evaluate; writes the report files when ``out_dir`` is set."""

    out = Path(out_dir) if out_dir is not None else None
    trainer = Trainer(cfg, dataset, out)
    trainer.fit()
    report = evaluate(trainer.network, dataset, cfg.eval.rule, cfg.eval.chunk_size)
    if out is not None:
        write_report(report, out)
    return trainer, report


def ablate(cfg: ExperimentConfig, out_dir: Path | str | None = None, dataset: Dataset | None = None) -> list[AblationRow]:
    """Four runs on the same data and seed, one per model variant."""

    dataset = dataset if dataset is not None else load_dataset(cfg)
    digest = split_digest(dataset.train)
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    for name, overrides in ABLATIONS.items():
        variant = with_overrides(cfg, overrides)
        run_dir = out / "runs" / name if out is not None else None
        _, report = run_experiment(variant, dataset, run_dir)
        rows.append(AblationRow(name=name, report=report, split_digest=digest))
        logger.info("Ablation row finished", name=name, HM=report.HM, split_digest=digest[:12])

    if out is not None:
        frame = report_frame([(r.name, r.report) for r in rows])
        frame["split_digest"] = [r.split_digest for r in rows]
        frame.to_csv(out / "ablation.csv", index=False)
        (out / "ablation.txt").write_text(format_table([(r.name, r.report) for r in rows]))
        logger.info("Ablation table written", path=str(out / "ablation.csv"))
    return rows


def parse_sweep_values(param: str, raw: str) -> list[float]:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    cast = SWEEP_PARAMS[param]
    try:
        values = [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {raw!r} for {param}: {exc}") from exc
    if not values:
        raise ContractError("sweep needs at least one value")
    return values


def _sweep_point(job: tuple[ExperimentConfig, str, float, Path | None, Dataset | None]) -> SweepPoint:
    cfg, param, value, out_dir, dataset = job
    variant = with_overrides(cfg, {param: value})
    data = dataset if dataset is not None else load_dataset(variant)
    _, report = run_experiment(variant, data, out_dir)
    return SweepPoint(param=param, value=float(value), report=report)


def sweep(
    cfg: ExperimentConfig,
    param: str,
    values: list[float],
    out_dir: Path | str | None = None,
    jobs: int = 1,
    dataset: Dataset | None = None,
) -> list[SweepPoint]:
    """One run per value with a shared seed; points come back ordered by value.

    With ``jobs > 1`` the points run in separate processes, each regenerating
    the dataset from the config and writing to its own directory.
    """

    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    if not values:
        raise ContractError("sweep needs at least one value")
    out = Path(out_dir) if out_dir is not None else None
    ordered = sorted(SWEEP_PARAMS[param](v) for v in values)

    def run_dir(value: float) -> Path | None:
        return out / "points" / f"{param}={value}" if out is not None else None

    if jobs > 1 and len(ordered) > 1:
        tasks = [(cfg, param, v, run_dir(v), None) for v in ordered]
        with Pool(min(jobs, len(tasks))) as pool:
            points = pool.map(_sweep_point, tasks)
    else:
        shared = dataset if dataset is not None else load_dataset(cfg)
        points = [_sweep_point((cfg, param, v, run_dir(v), shared)) for v in ordered]

    if out is not None:
        write_sweep(points, out)
    return points


def sweep_frame(points: list[SweepPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"param": p.param, "value": p.value, **{c: getattr(p.report, c) for c in REPORT_COLUMNS}} for p in points],
        columns=["param", "value", *REPORT_COLUMNS],
    )


def write_sweep(points: list[SweepPoint], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = sweep_frame(points)
    frame.to_csv(out_dir / "sweep.csv", index=False, float_format="%.17g")
    param = points[0].param
    for metric in REPORT_COLUMNS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(frame["value"], frame[metric], marker="o")
        ax.set_xlabel(param)
        ax.set_ylabel(f"{metric} (%)")
        ax.set_title(f"{metric} over {param}")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_dir / f"sweep_{metric}.png")
        plt.close(fig)
    logger.info("Sweep written", path=str(out_dir / "sweep.csv"), points=len(points))
