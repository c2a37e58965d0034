"""Command-line runner: data generation, training, evaluation, ablation, sweeps and reports."""

import argparse
import sys
from pathlib import Path

import pandas as pd
from rich.console import Console
from rich.table import Table

from daan_zsl.config.logging import configure_logging, get_logger
from daan_zsl.config.settings import PRESETS, ExperimentConfig, FusionRule, get_settings, load_experiment_config
from daan_zsl.errors import ContractError, DaanError
from daan_zsl.models.data import Modality
from daan_zsl.models.reports import GzslReport
from daan_zsl.services.evaluation import REPORT_COLUMNS, evaluate
from daan_zsl.services.experiments import (
    REPORT_FILE,
    SWEEP_PARAMS,
    ablate,
    parse_sweep_values,
    run_experiment,
    sweep,
    write_report,
)
from daan_zsl.services.feature_io import save_features
from daan_zsl.services.synthetic import generate_synthetic, linear_probe_accuracy
from daan_zsl.services.training import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    TRACE_FILE,
    load_dataset,
    read_checkpoint,
    resume,
)

logger = get_logger(__name__)

CONFIG_SNAPSHOT = "config.json"


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Key-value config file (dotted keys)")
    parser.add_argument("--seed", type=int, help="Seed for training and the synthetic generator")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=(
            "Override one config value (repeatable). csgm.delta_indexing=literal is degenerate: "
            "its convergence rate is always 0, so every contribution rate equals csgm.gamma"
        ),
    )
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Hyperparameter preset")


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_experiment_config(args.config, args.overrides, args.seed, args.preset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daan",
        description="Discrepancy-aware audio-visual zero-shot learning on a desk-scale numpy stack.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Write a synthetic feature file")
    _add_config_flags(gen)
    gen.add_argument("--out", type=Path, required=True, help="Output file (.jsonl for JSON lines)")

    train = sub.add_parser("train", help="Train, checkpoint and evaluate one model")
    _add_config_flags(train)
    train.add_argument("--out", type=Path, required=True, help="Run directory")

    ev = sub.add_parser("eval", help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--out", type=Path, help="Report directory (default: the checkpoint's directory)")
    ev.add_argument("--rule", choices=[r.value for r in FusionRule], help="Override the fusion rule")

    abl = sub.add_parser("ablate", help="Run the four-row ablation")
    _add_config_flags(abl)
    abl.add_argument("--out", type=Path, required=True)

    sw = sub.add_parser("sweep", help="Sweep one hyperparameter")
    _add_config_flags(sw)
    sw.add_argument("--out", type=Path, required=True)
    sw.add_argument("--param", choices=sorted(SWEEP_PARAMS), required=True)
    sw.add_argument("--values", required=True, help="Comma-separated values")
    sw.add_argument("--jobs", type=int, default=1, help="Parallel processes")

    rep = sub.add_parser("report", help="Summarize a run directory")
    rep.add_argument("--out", type=Path, required=True, help="Run directory")
    return parser


def _report_table(rows: list[tuple[str, GzslReport]], title: str) -> Table:
    table = Table(title=title, show_header=True, header_style="bold blue")
    table.add_column("Run", style="cyan", no_wrap=True)
    for column in REPORT_COLUMNS:
        table.add_column(column, justify="right")
    for name, report in rows:
        table.add_row(name, *(f"{getattr(report, c):.2f}" for c in REPORT_COLUMNS))
    return table


def cmd_gen_data(args: argparse.Namespace, console: Console) -> None:
    cfg = _config(args)
    dataset = generate_synthetic(cfg.data.synthetic, workers=get_settings().threads)
    path = save_features(dataset, args.out)

    table = Table(title="Linear probe accuracy (seen test classes)", header_style="bold blue")
    table.add_column("Modality", style="cyan")
    table.add_column("Accuracy", justify="right")
    for modality in Modality:
        table.add_row(str(modality), f"{100 * linear_probe_accuracy(dataset, modality):.2f}%")
    console.print(table)
    console.print(f"[green]Wrote {path}[/green]")


def cmd_train(args: argparse.Namespace, console: Console) -> None:
    cfg = _config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / CONFIG_SNAPSHOT).write_text(cfg.to_json() + "\n")
    dataset = load_dataset(cfg)
    trainer, report = run_experiment(cfg, dataset, args.out)
    console.print(_report_table([("DAAN", report)], f"Evaluation after {trainer.epoch} epochs"))


def cmd_eval(args: argparse.Namespace, console: Console) -> None:
    trainer = resume(args.checkpoint)
    rule = FusionRule(args.rule) if args.rule else trainer.cfg.eval.rule
    report = evaluate(trainer.network, trainer.dataset, rule, trainer.cfg.eval.chunk_size)
    out = args.out or args.checkpoint.parent
    write_report(report, out)
    console.print(_report_table([(str(rule), report)], f"Checkpoint {args.checkpoint.name}"))


def cmd_ablate(args: argparse.Namespace, console: Console) -> None:
    rows = ablate(_config(args), args.out)
    console.print(_report_table([(r.name, r.report) for r in rows], "Ablation"))


def cmd_sweep(args: argparse.Namespace, console: Console) -> None:
    values = parse_sweep_values(args.param, args.values)
    points = sweep(_config(args), args.param, values, args.out, jobs=args.jobs)
    console.print(_report_table([(f"{p.param}={p.value:g}", p.report) for p in points], f"Sweep over {args.param}"))


def cmd_report(args: argparse.Namespace, console: Console) -> None:
    out: Path = args.out
    if not out.is_dir():
        raise ContractError(f"run directory {out} does not exist")
    metrics_path = out / METRICS_FILE
    if metrics_path.exists() and metrics_path.stat().st_size:
        metrics = pd.read_json(metrics_path, lines=True)
        table = Table(title="Training", header_style="bold blue")
        columns = ["epoch", "L_t", "l_rec", "l_ct", "l_w", "L_r", "total"]
        for column in columns:
            table.add_column(column, justify="right")
        for _, row in metrics[columns].iterrows():
            table.add_row(str(int(row["epoch"])), *(f"{row[c]:.4f}" for c in columns[1:]))
        console.print(table)

    trace_path = out / TRACE_FILE
    if trace_path.exists():
        trace = pd.read_csv(trace_path)
        summary = trace.groupby(["modality", "part"])["eta"].agg(["mean", "min", "max"]).reset_index()
        table = Table(title="Contribution rates", header_style="bold blue")
        for column in ("modality", "part", "mean", "min", "max"):
            table.add_column(column, justify="left" if column in ("modality", "part") else "right")
        for _, row in summary.iterrows():
            table.add_row(row["modality"], row["part"], *(f"{row[c]:.4f}" for c in ("mean", "min", "max")))
        console.print(table)

    report_path = out / REPORT_FILE
    if report_path.exists():
        report = GzslReport.model_validate_json(report_path.read_text())
        console.print(_report_table([(out.name, report)], "Evaluation"))

    checkpoint = out / CHECKPOINT_FILE
    if checkpoint.exists():
        meta, _ = read_checkpoint(checkpoint)
        console.print(f"Checkpoint at epoch {meta['epoch']} (step {meta['step']})")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    """Run one subcommand and return the process exit status."""

    args = build_parser().parse_args(argv)
    console = Console()
    try:
        COMMANDS[args.command](args, console)
    except DaanError as exc:
        console.print(f"[red]ERROR: {exc}[/red]")
        return 2
    except Exception:
        logger.exception("Command failed", command=args.command)
        return 1
    return 0


def cli() -> None:
    """CLI entry point."""

    configure_logging()
    sys.exit(main())


if __name__ == "__main__":
    cli()
