"""
Evaluation Service
Per-cell decoding R², across-session bootstrap statistics, paired tests and latent projections
"""

import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.decomposition import PCA

from tcla.core.dataio import SessionDataset
from tcla.core.statistics import bootstrap_ci, r_squared, wilcoxon_signed_rank
from tcla.exceptions import InsufficientSamplesError
from tcla.schemas.evaluation import (
    VARIABLES,
    Comparison,
    DecoderConfig,
    EvalConfig,
    EvalReport,
    R2Entry,
    VariableSummary,
)
from tcla.services.checkpoint_store import Checkpoint
from tcla.services.decoding_service import DecodingService
from tcla.services.training_service import TrainingService
from tcla.utils.logger import get_evaluation_logger

logger = get_evaluation_logger()

REPORT_FILE = "report.json"
TABLE_FILE = "r2.csv"


# ============================================================================
# PER-CELL DECODING
# ============================================================================

def _rates(ckpt: Checkpoint, dataset: SessionDataset, session_id: str) -> List[np.ndarray]:
    return [rates for _, rates in TrainingService.infer_rates(ckpt, dataset, session_id)]



def _coordinate_r2(predictions: Sequence[np.ndarray], truth: np.ndarray) -> Tuple[float, float]:
    pred = np.stack(predictions)
    return (
        r_squared(pred[:, 0, :].ravel(), truth[:, 0, :].ravel()),
        r_squared(pred[:, 1, :].ravel(), truth[:, 1, :].ravel()),
    )


# ============================================================================
# AGGREGATION HELPERS
# ============================================================================

def session_means(entries: Iterable[R2Entry]) -> Dict[Tuple[str, str], Dict[str, float]]:
    """(method, variable) -> {session_id: mean R² over runs}"""
    grouped = defaultdict(lambda: defaultdict(list))
    for e in entries:
        grouped[(e.method, e.variable)][e.session_id].append(e.r2)
    return {
        key: {sid: float(np.mean(values)) for sid, values in sorted(by_session.items())}
        for key, by_session in grouped.items()
    }


def _pair(method_values: Dict, baseline_values: Dict) -> Tuple[List[float], List[float]]:
    keys = sorted(set(method_values) & set(baseline_values))
    return [method_values[k] for k in keys], [baseline_values[k] for k in keys]


def _compare(method: str, baseline: str, variable: str, pairing: str, a: List[float], b: List[float], baseline_mean: float) -> Comparison:
    p_value, reason = None, None
    try:
        p_value = wilcoxon_signed_rank(a, b)
    except InsufficientSamplesError as e:
        reason = str(e)
    return Comparison(
        method=method,
        baseline=baseline,
        variable=variable,
        pairing=pairing,
        n_pairs=len(a),
        p_value=p_value,
        reason=reason,
        mean_improvement=float(np.mean(np.subtract(a, b))) if a else 0.0,
        baseline_mean=baseline_mean,
    )


def r2_table(report: EvalReport) -> pd.DataFrame:
    """Flat (session, method, variable, run, r2) table"""
    return pd.DataFrame(
        [(e.session_id, e.method, e.variable, e.run, e.r2) for e in report.entries],
        columns=["session", "method", "variable", "run", "r2"],
    )


def format_summary(report: EvalReport) -> str:
    """Human-readable summary lines for the terminal"""
    lines = []
    for s in report.summaries:
        lines.append(f"{s.method:<14} {s.variable:<6} R² {s.bootstrap_mean:.3f} [{s.ci_low:.3f}, {s.ci_high:.3f}]")
    for c in report.comparisons:
        p = f"p={c.p_value:.4g}" if c.p_value is not None else f"n/a ({c.reason})"
        lines.append(
            f"{c.method} vs {c.baseline} {c.variable} [{c.pairing}, n={c.n_pairs}]: "
            f"Δ={c.mean_improvement:+.3f} (baseline {c.baseline_mean:.3f}) {p}"
        )
    return "\n".join(lines)


# ============================================================================
# SERVICE
# ============================================================================

class EvaluationService:
    """Service for decoding evaluation, aggregation and report output"""

    @staticmethod
    def evaluate_cell(
        ckpt: Checkpoint,
        train: SessionDataset,
        test: SessionDataset,
        decoder_cfg: DecoderConfig,
        method: str,
        run: int = 0,
        session_id: Optional[str] = None,
    ) -> List[R2Entry]:
        """
        Fresh position and velocity decoders on the train split, R² on the test split

        Returns:
            pos_x, pos_y, vel_x, vel_y entries for this (session, method, run)
        """
        session_id = session_id or train.session_id
        cfg = decoder_cfg.model_copy(update={"seed": decoder_cfg.seed + run})
        train_rates = _rates(ckpt, train, session_id)
        test_rates = _rates(ckpt, test, session_id)

        values = []
        for truth_train, truth_test in ((train.position, test.position), (train.velocity(), test.velocity())):
            decoder = DecodingService.train_decoder(train_rates, list(truth_train), cfg)
            values.extend(_coordinate_r2(decoder.predict(test_rates), truth_test))

        entries = [
            R2Entry(session_id=session_id, method=method, variable=variable, run=run, r2=value)
            for variable, value in zip(VARIABLES, values)
        ]
        logger.info(
            f"{method} {session_id} run {run}: "
            + " ".join(f"{e.variable}={e.r2:.3f}" for e in entries)
        )
        return entries

    @staticmethod
    def summarize(entries: List[R2Entry], eval_cfg: EvalConfig, metadata: Optional[dict] = None) -> EvalReport:
        """Bootstrap mean/CI per (method, variable) and Wilcoxon tests against the baseline method"""
        entries = sorted(entries, key=lambda e: (e.method, e.session_id, e.run, VARIABLES.index(e.variable)))
        means = session_means(entries)

        summaries = []
        for (method, variable), by_session in sorted(means.items()):
            mean, low, high = bootstrap_ci(
                list(by_session.values()), eval_cfg.bootstrap_resamples, eval_cfg.alpha, eval_cfg.bootstrap_seed
            )
            summaries.append(VariableSummary(
                method=method, variable=variable, session_means=by_session,
                bootstrap_mean=mean, ci_low=low, ci_high=high,
            ))

        cells = defaultdict(dict)
        for e in entries:
            cells[(e.method, e.variable)][(e.session_id, e.run)] = e.r2

        comparisons = []
        baseline = eval_cfg.baseline_method
        methods = sorted({e.method for e in entries} - {baseline})
        if methods and not any(e.method == baseline for e in entries):
            logger.warning(f"Baseline method {baseline} has no results; paired comparisons skipped")
        else:
            for method in methods:
                for variable in VARIABLES:
                    baseline_by_session = means.get((baseline, variable), {})
                    baseline_mean = float(np.mean(list(baseline_by_session.values()))) if baseline_by_session else 0.0
                    a, b = _pair(means.get((method, variable), {}), baseline_by_session)
                    comparisons.append(_compare(method, baseline, variable, "session_means", a, b, baseline_mean))
                    a, b = _pair(cells[(method, variable)], cells[(baseline, variable)])
                    comparisons.append(_compare(method, baseline, variable, "cells", a, b, baseline_mean))

        return EvalReport(entries=entries, summaries=summaries, comparisons=comparisons, metadata=metadata or {})

    @staticmethod
    def evaluate_pipeline(
        cells: Sequence[Tuple[Checkpoint, SessionDataset, SessionDataset, str, int]],
        decoder_cfg: DecoderConfig,
        eval_cfg: EvalConfig,
        metadata: Optional[dict] = None,
    ) -> EvalReport:
        """
        Decode every (checkpoint, train split, test split, method, run) cell and aggregate

        Paired methods must be given cells built on the same splits.
        """
        entries: List[R2Entry] = []
        for ckpt, train, test, method, run in cells:
            entries.extend(EvaluationService.evaluate_cell(ckpt, train, test, decoder_cfg, method, run))
        return EvaluationService.summarize(entries, eval_cfg, metadata)

    @staticmethod
    def write_report(report: EvalReport, directory) -> Path:
        """report.json plus r2.csv under directory"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / REPORT_FILE
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        r2_table(report).to_csv(directory / TABLE_FILE, index=False, float_format="%.10g")
        logger.info(f"Report written to {path}")
        return path

    @staticmethod
    def project_latents(groups: Sequence[Tuple[Checkpoint, SessionDataset]]) -> pd.DataFrame:
        """
        Time-averaged latents of every trial projected on the top-2 principal components of the pooled set

        Each dataset is encoded by the layers stored under its own session_id in
        the paired checkpoint.
        """
        frames = []
        vectors = []
        for ckpt, dataset in groups:
            latents = np.stack([z for z, _ in TrainingService.infer_rates(ckpt, dataset, dataset.session_id)])
            vectors.append(latents.mean(axis=2).astype(np.float64))
            frames.append(pd.DataFrame({
                "session_id": dataset.session_id,
                "trial": np.arange(dataset.num_trials),
                "direction": dataset.labels,
            }))
        pooled = np.concatenate(vectors, axis=0)
        components = min(2, pooled.shape[0], pooled.shape[1])
        coords = np.zeros((pooled.shape[0], 2))
        if components > 0:
            coords[:, :components] = PCA(n_components=components, svd_solver="full").fit_transform(pooled)
        table = pd.concat(frames, ignore_index=True)
        table["pc1"] = coords[:, 0]
        table["pc2"] = coords[:, 1]
        return table

    @staticmethod
    def export_latent_projection(ckpt: Checkpoint, datasets: Sequence[SessionDataset]) -> pd.DataFrame:
        """Projection of several sessions encoded by one checkpoint"""
        return EvaluationService.project_latents([(ckpt, d) for d in datasets])
