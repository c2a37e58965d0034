"""Generalized and conventional zero-shot evaluation by nearest class text."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from daan_zsl.config.logging import get_logger
from daan_zsl.config.settings import FusionRule, get_settings
from daan_zsl.errors import ContractError, ShapeError
from daan_zsl.models.data import Dataset, Split
from daan_zsl.models.reports import GzslReport
from daan_zsl.services.network import DaanNetwork

logger = get_logger(__name__)

REPORT_COLUMNS = ["S", "U", "HM", "ZSL"]


def harmonic_mean(seen: float, unseen: float) -> float:
    total = seen + unseen
    return 2.0 * seen * unseen / total if total > 0 else 0.0


def fuse(theta_a: np.ndarray, theta_v: np.ndarray, rule: FusionRule) -> np.ndarray:
    if theta_a.shape != theta_v.shape:
        raise ShapeError(f"audio {theta_a.shape} and visual {theta_v.shape} projections differ")
    if rule is FusionRule.AUDIO:
        return theta_a
    if rule is FusionRule.VISUAL:
        return theta_v
    return (theta_a + theta_v) / 2.0


def classify(
    theta_a: np.ndarray,
    theta_v: np.ndarray,
    candidates: np.ndarray,
    candidate_ids: np.ndarray,
    rule: FusionRule = FusionRule.AVERAGE,
) -> np.ndarray:
    """Nearest candidate class per row by Euclidean distance; ties go to the lowest id.

    Single vectors are accepted and yield a 0-d array.
    """

    candidate_ids = np.asarray(candidate_ids)
    if candidate_ids.size == 0:
        raise ContractError("classification needs at least one candidate class")
    if candidates.shape[0] != candidate_ids.size:
        raise ShapeError(f"{candidates.shape[0]} candidate embeddings for {candidate_ids.size} ids")
    order = np.argsort(candidate_ids, kind="stable")
    ids, cands = candidate_ids[order], candidates[order]

    query = fuse(np.atleast_2d(theta_a), np.atleast_2d(theta_v), rule)
    dist = np.linalg.norm(query[:, None, :] - cands[None, :, :], axis=-1)
    predicted = ids[np.argmin(dist, axis=1)]
    return predicted if np.ndim(theta_a) > 1 else predicted[0]


def mean_class_accuracy(
    predicted: np.ndarray, labels: np.ndarray, class_ids: np.ndarray
) -> tuple[float, list[int]]:
    """Accuracy averaged over classes in percent, and the classes with no samples."""

    accuracies, excluded = [], []
    for c in class_ids.tolist():
        mask = labels == c
        if not mask.any():
            excluded.append(int(c))
            continue
        accuracies.append(float(np.mean(predicted[mask] == c)))
    return (100.0 * float(np.mean(accuracies)) if accuracies else 0.0), excluded


def _embed(network: DaanNetwork, split: Split, chunk_size: int, threads: int) -> tuple[np.ndarray, np.ndarray]:
    bounds = [(i, min(i + chunk_size, len(split))) for i in range(0, len(split), chunk_size)]

    def run(bound: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = bound
        return network.embed_av(split.audio[lo:hi], split.visual[lo:hi])

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return np.concatenate([a for a, _ in parts]), np.concatenate([v for _, v in parts])


def evaluate(
    network: DaanNetwork,
    dataset: Dataset,
    rule: FusionRule = FusionRule.AVERAGE,
    chunk_size: int = 256,
    threads: int | None = None,
) -> GzslReport:
    """S and U over all classes as candidates, ZSL over unseen candidates only."""

    if len(dataset.test) == 0:
        raise ContractError("test split is empty")
    threads = threads or get_settings().threads
    theta_a, theta_v = _embed(network, dataset.test, chunk_size, threads)
    theta_w = network.embed_texts(dataset.texts)
    all_ids = np.arange(dataset.num_classes)
    seen, unseen = dataset.seen_ids, dataset.unseen_ids
    labels = dataset.test.labels

    gzsl = classify(theta_a, theta_v, theta_w, all_ids, rule)
    s, excluded_seen = mean_class_accuracy(gzsl, labels, seen)
    u, excluded_unseen = mean_class_accuracy(gzsl, labels, unseen)

    unseen_rows = np.isin(labels, unseen)
    if unseen_rows.any():
        zsl_pred = classify(theta_a[unseen_rows], theta_v[unseen_rows], theta_w[unseen], unseen, rule)
        zsl, _ = mean_class_accuracy(zsl_pred, labels[unseen_rows], unseen)
    else:
        zsl = 0.0

    excluded = sorted(excluded_seen + excluded_unseen)
    if excluded:
        logger.warning("Classes without test samples excluded from accuracy", classes=excluded)
    report = GzslReport(S=s, U=u, HM=harmonic_mean(s, u), ZSL=zsl, excluded_classes=excluded)
    logger.info("Evaluation finished", rule=str(rule), S=report.S, U=report.U, HM=report.HM, ZSL=report.ZSL)
    return report


def report_frame(rows: list[tuple[str, GzslReport]]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"name": name, **{c: getattr(r, c) for c in REPORT_COLUMNS}} for name, r in rows],
        columns=["name", *REPORT_COLUMNS],
    )


def format_table(rows: list[tuple[str, GzslReport]]) -> str:
    """Aligned text table with columns S, U, HM, ZSL."""

    frame = report_frame(rows)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.2f}") + "\n"
