"""
Pipeline Service
generate -> pretrain -> align / baseline -> decode -> report, with config-digest artifact caching
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from tcla.core.dataio import SessionDataset, read_bundle, split_session, write_bundle
from tcla.core.synthgen import SOURCE_SESSION_ID, make_multisession
from tcla.exceptions import MissingArtifactError, TCLAError, UnknownSessionError
from tcla.schemas.evaluation import METHODS, EvalReport, R2Entry
from tcla.schemas.experiment import ExperimentConfig
from tcla.services.checkpoint_store import Checkpoint, load_checkpoint, save_checkpoint
from tcla.services.evaluation_service import REPORT_FILE, EvaluationService, format_summary
from tcla.services.training_service import TrainingService
from tcla.utils.digest import config_digest
from tcla.utils.logger import LoggerManager, get_pipeline_logger

logger = get_pipeline_logger()

ARTIFACT_FILE = "artifact.json"
ALIGNED_METHODS = ("tcla", "tcla_global", "frozen_no_mmd")
Splits = Tuple[SessionDataset, SessionDataset, SessionDataset]


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    beta3: Optional[float] = None,
    ablation: Optional[str] = None,
) -> ExperimentConfig:
    """
    CLI sweep flags applied on top of the config file

    seed replaces the model, Stage One, Stage Two and decoder seeds; beta3
    replaces the Stage Two alignment weight; ablation "ldnsws" adds the
    within-session baseline to the evaluated methods.
    """
    data = config.model_dump(mode="json")
    if seed is not None:
        for section in ("model", "stage1", "stage2", "decoder"):
            data[section]["seed"] = seed
    if beta3 is not None:
        data["stage2"]["mmd"]["beta3"] = beta3
    if ablation is not None:
        if ablation not in METHODS:
            raise ValueError(f"unknown ablation {ablation!r}")
        if ablation not in data["eval"]["methods"]:
            data["eval"]["methods"].append(ablation)
    return ExperimentConfig.model_validate(data)


@contextmanager
def pipeline_step(name: str):
    """Tag errors raised inside a step with the step name"""
    try:
        yield
    except (TCLAError, ValidationError, ValueError, OSError) as e:
        if not hasattr(e, "step"):
            try:
                e.step = name
            except AttributeError:
                pass
        raise


class PipelineService:
    """
    Artifact-cached experiment steps under config.output_dir

    Every artifact directory carries artifact.json with the digest of the
    configuration slice that produced it; a step whose digest matches is
    skipped and its artifact reloaded.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.root = config.output_path
        self.data_dir = self.root / "data"
        self.checkpoints_dir = self.root / "checkpoints"
        self.reports_dir = self.root / "reports"
        LoggerManager.configure(self.root / "logs")
        self._sessions: Optional[Dict[str, SessionDataset]] = None

    # ========================================================================
    # ARTIFACT BOOKKEEPING
    # ========================================================================

    @staticmethod
    def _read_artifact(directory: Path) -> Optional[dict]:
        path = directory / ARTIFACT_FILE
        if not path.is_file():
            return None
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    @classmethod
    def _is_current(cls, directory: Path, digest: str) -> bool:
        artifact = cls._read_artifact(directory)
        return artifact is not None and artifact.get("digest") == digest

    @staticmethod
    def _write_artifact(directory: Path, digest: str, **extra) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / ARTIFACT_FILE, "w", encoding="utf-8") as f:
            json.dump({"digest": digest, **extra}, f, indent=2, sort_keys=True)
            f.write("\n")

    # ========================================================================
    # DATA
    # ========================================================================

    def data_digest(self) -> str:
        return config_digest("data", self.config.gen, self.config.drifts)

    def generate(self) -> Dict[str, SessionDataset]:
        """Write one bundle per session under data/"""
        digest = self.data_digest()
        if self._is_current(self.data_dir, digest):
            logger.info("generate: dataset digest matches, reusing bundles")
            return self.load_sessions()

        sessions = make_multisession(self.config.gen, self.config.drifts)
        bundle_digests = {s.session_id: write_bundle(s, self.data_dir / s.session_id) for s in sessions}
        self._write_artifact(self.data_dir, digest, sessions=[s.session_id for s in sessions], bundles=bundle_digests)
        self._sessions = {s.session_id: s for s in sessions}
        logger.info(f"generate: wrote {len(sessions)} sessions to {self.data_dir}")
        return self._sessions

    def load_sessions(self) -> Dict[str, SessionDataset]:
        if self._sessions is not None:
            return self._sessions
        artifact = self._read_artifact(self.data_dir)
        if artifact is None or artifact.get("digest") != self.data_digest():
            raise MissingArtifactError(f"no dataset for this config under {self.data_dir}; run generate first")
        self._sessions = {sid: read_bundle(self.data_dir / sid) for sid in artifact["sessions"]}
        return self._sessions

    def target_ids(self, session_ids: Optional[Sequence[str]] = None) -> List[str]:
        targets = [sid for sid in self.load_sessions() if sid != SOURCE_SESSION_ID]
        if session_ids:
            unknown = sorted(set(session_ids) - set(targets))
            if unknown:
                raise UnknownSessionError(f"unknown target session(s): {', '.join(unknown)}")
            targets = [sid for sid in targets if sid in session_ids]
        return targets

    def splits(self, session_id: str) -> Splits:
        dataset = self.load_sessions()[session_id]
        spec = self.config.source_split if session_id == SOURCE_SESSION_ID else self.config.target_split
        return split_session(dataset, spec)

    # ========================================================================
    # STAGE ONE
    # ========================================================================

    def pretrain_digest(self) -> str:
        c = self.config
        return config_digest("pretrain", self.data_digest(), c.source_split, c.model, c.stage1)

    @property
    def stage1_dir(self) -> Path:
        return self.checkpoints_dir / "stage1"

    def pretrain(self) -> Checkpoint:
        digest = self.pretrain_digest()
        if self._is_current(self.stage1_dir, digest):
            logger.info("pretrain: Stage One digest matches, reusing checkpoint")
            return load_checkpoint(self.stage1_dir)
        train, val, _ = self.splits(SOURCE_SESSION_ID)
        ckpt = TrainingService.pretrain_source(train, val, self.config.model, self.config.stage1)
        save_checkpoint(ckpt, self.stage1_dir)
        self._write_artifact(self.stage1_dir, digest)
        return ckpt

    def load_stage1(self) -> Checkpoint:
        if not self._is_current(self.stage1_dir, self.pretrain_digest()):
            raise MissingArtifactError("no Stage One checkpoint for this config; run pretrain first")
        return load_checkpoint(self.stage1_dir)

    # ========================================================================
    # CELLS (method x target session x run)
    # ========================================================================

    def cell_configs(self, method: str, run: int):
        """Stage config (and architecture) of one cell; run offsets every seed"""
        c = self.config
        if method == "ldnsws":
            stage = c.stage1.model_copy(update={
                "seed": c.stage1.seed + run,
                "dropout": c.stage1.dropout.model_copy(update={"seed_stream": c.stage1.dropout.seed_stream + run}),
            })
            return stage, c.model.model_copy(update={"seed": c.model.seed + run})

        mmd = c.stage2.mmd
        if method == "tcla_global":
            mmd = mmd.model_copy(update={"conditional": False})
        elif method == "frozen_no_mmd":
            mmd = mmd.model_copy(update={"beta3": 0.0})
        stage = c.stage2.model_copy(update={
            "seed": c.stage2.seed + run,
            "mmd": mmd,
            "dropout": c.stage2.dropout.model_copy(update={"seed_stream": c.stage2.dropout.seed_stream + run}),
        })
        return stage, c.model

    def cell_digest(self, method: str, session_id: str, run: int) -> str:
        stage, arch = self.cell_configs(method, run)
        upstream = self.data_digest() if method == "ldnsws" else self.pretrain_digest()
        return config_digest("cell", upstream, self.config.target_split, stage, arch, method, session_id, run)

    def cell_dir(self, method: str, session_id: str, run: int) -> Path:
        return self.checkpoints_dir / method / session_id / f"run_{run}"

    def train_cell(self, method: str, session_id: str, run: int, stage1: Optional[Checkpoint] = None) -> Checkpoint:
        """Stage Two alignment (or the within-session baseline) for one target session and run"""
        directory = self.cell_dir(method, session_id, run)
        digest = self.cell_digest(method, session_id, run)
        if self._is_current(directory, digest):
            logger.info(f"align: {method}/{session_id}/run_{run} digest matches, reusing checkpoint")
            return load_checkpoint(directory)

        stage, arch = self.cell_configs(method, run)
        train, val, _ = self.splits(session_id)
        if method == "ldnsws":
            ckpt = TrainingService.train_within_session(train, val, arch, stage)
        else:
            stage1 = stage1 or self.load_stage1()
            source_train, _, _ = self.splits(SOURCE_SESSION_ID)
            ckpt = TrainingService.align_target(stage1, train, val, source_train, stage, SOURCE_SESSION_ID)
        save_checkpoint(ckpt, directory)
        self._write_artifact(directory, digest, method=method, session_id=session_id, run=run)
        return ckpt

    def methods(self) -> List[str]:
        return list(self.config.eval.methods)

    def runs(self) -> range:
        return range(self.config.eval.runs_per_session)

    def align(self, session_ids: Optional[Sequence[str]] = None) -> None:
        """Train every configured cell for the selected target sessions"""
        methods = self.methods()
        stage1 = self.load_stage1() if any(m in ALIGNED_METHODS for m in methods) else None
        for session_id in self.target_ids(session_ids):
            for run in self.runs():
                for method in methods:
                    self.train_cell(method, session_id, run, stage1)

    # ========================================================================
    # DECODING
    # ========================================================================

    def decode_digest(self, method: str, session_id: str, run: int) -> str:
        return config_digest("decode", self.cell_digest(method, session_id, run), self.config.decoder)

    def decode_path(self, method: str, session_id: str, run: int) -> Path:
        return self.reports_dir / "cells" / method / session_id / f"run_{run}.json"

    @staticmethod
    def alignment_metrics(ckpt: Checkpoint) -> dict:
        """Validation MMD at target-layer initialization and at the best epoch"""
        if ckpt.stage != "stage2" or not ckpt.history:
            return {}
        best = min(ckpt.history, key=lambda r: r["val_loss"])
        return {
            "mmd_init": ckpt.history[0].get("mmd"),
            "mmd_final": best.get("mmd"),
            "best_epoch": best["epoch"],
        }

    def _load_decoded(self, method: str, session_id: str, run: int) -> Optional[dict]:
        path = self.decode_path(method, session_id, run)
        if not path.is_file():
            return None
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
        return record if record.get("digest") == self.decode_digest(method, session_id, run) else None

    def decode_cell(self, method: str, session_id: str, run: int, ckpt: Optional[Checkpoint] = None) -> dict:
        cached = self._load_decoded(method, session_id, run)
        if cached is not None:
            return cached
        if ckpt is None:
            directory = self.cell_dir(method, session_id, run)
            if not self._is_current(directory, self.cell_digest(method, session_id, run)):
                raise MissingArtifactError(f"no {method} checkpoint for {session_id} run {run}; run align first")
            ckpt = load_checkpoint(directory)
        train, _, test = self.splits(session_id)
        entries = EvaluationService.evaluate_cell(ckpt, train, test, self.config.decoder, method, run, session_id)
        record = {
            "digest": self.decode_digest(method, session_id, run),
            "entries": [e.model_dump(mode="json") for e in entries],
            "alignment": self.alignment_metrics(ckpt),
        }
        path = self.decode_path(method, session_id, run)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(record, f, indent=2, sort_keys=True)
            f.write("\n")
        return record

    def decode(self, session_ids: Optional[Sequence[str]] = None) -> List[dict]:
        return [
            self.decode_cell(method, session_id, run)
            for session_id in self.target_ids(session_ids)
            for run in self.runs()
            for method in self.methods()
        ]

    # ========================================================================
    # REPORT
    # ========================================================================

    def report_digest(self, session_ids: Sequence[str]) -> str:
        cells = [
            self.decode_digest(m, sid, r) for sid in session_ids for r in self.runs() for m in self.methods()
        ]
        return config_digest("report", cells, self.config.decoder, self.config.eval)

    def _metadata(self, session_ids: Sequence[str], records: Sequence[Tuple[str, str, int, dict]]) -> dict:
        c = self.config
        return {
            "sessions": list(session_ids),
            "methods": self.methods(),
            "runs": c.eval.runs_per_session,
            "seeds": {
                "master": c.gen.master_seed,
                "model": c.model.seed,
                "stage1": c.stage1.seed,
                "stage2": c.stage2.seed,
                "decoder": c.decoder.seed,
                "bootstrap": c.eval.bootstrap_seed,
            },
            "config_digest": self.report_digest(session_ids),
            "alignment": [
                {"method": m, "session_id": sid, "run": r, **record["alignment"]}
                for m, sid, r, record in records if record.get("alignment")
            ],
            "config": c.model_dump(mode="json", exclude={"output_dir"}),
        }

    def build_report(self, records: Sequence[Tuple[str, str, int, dict]], session_ids: Sequence[str]) -> EvalReport:
        entries = [R2Entry.model_validate(e) for *_, record in records for e in record["entries"]]
        report = EvaluationService.summarize(entries, self.config.eval, self._metadata(session_ids, records))
        EvaluationService.write_report(report, self.reports_dir)
        self._write_artifact(self.reports_dir, self.report_digest(session_ids), sessions=list(session_ids))
        return report

    def _load_report(self) -> EvalReport:
        with open(self.reports_dir / REPORT_FILE, "r", encoding="utf-8") as f:
            return EvalReport.model_validate(json.load(f))

    def evaluate(self, session_ids: Optional[Sequence[str]] = None) -> EvalReport:
        """Train any missing cells, decode them and write the merged report"""
        targets = self.target_ids(session_ids)
        digest = self.report_digest(targets)
        if self._is_current(self.reports_dir, digest) and (self.reports_dir / REPORT_FILE).is_file():
            logger.info("evaluate: report digest matches, reusing report")
            return self._load_report()

        methods = self.methods()
        stage1 = self.load_stage1() if any(m in ALIGNED_METHODS for m in methods) else None
        records = []
        first_run: Dict[str, Dict[str, Checkpoint]] = {m: {} for m in methods}
        for session_id in targets:
            for run in self.runs():
                for method in methods:
                    cached = self._load_decoded(method, session_id, run)
                    if cached is not None and not (run == 0 and self.config.eval.export_projection):
                        records.append((method, session_id, run, cached))
                        continue
                    with pipeline_step("align"):
                        ckpt = self.train_cell(method, session_id, run, stage1)
                    if run == 0:
                        first_run[method][session_id] = ckpt
                    with pipeline_step("decode"):
                        record = cached or self.decode_cell(method, session_id, run, ckpt)
                    records.append((method, session_id, run, record))

        report = self.build_report(records, targets)
        if self.config.eval.export_projection:
            self.export_projections(stage1, first_run)
        return report

    def report(self, session_ids: Optional[Sequence[str]] = None) -> EvalReport:
        """Rebuild report files from decoded cells only"""
        targets = self.target_ids(session_ids)
        records = []
        for session_id in targets:
            for run in self.runs():
                for method in self.methods():
                    record = self._load_decoded(method, session_id, run)
                    if record is None:
                        raise MissingArtifactError(
                            f"no decoded results for {method}/{session_id}/run_{run}; run decode or evaluate first"
                        )
                    records.append((method, session_id, run, record))
        return self.build_report(records, targets)

    def export_projections(self, stage1: Optional[Checkpoint], first_run: Dict[str, Dict[str, Checkpoint]]) -> None:
        """projection_<method>.csv: source and target test trials (run 0 checkpoints)"""
        for method, by_session in first_run.items():
            if not by_session:
                continue
            groups = []
            if method in ALIGNED_METHODS and stage1 is not None:
                groups.append((stage1, self.splits(SOURCE_SESSION_ID)[2]))
            groups.extend((ckpt, self.splits(sid)[2]) for sid, ckpt in by_session.items())
            path = self.reports_dir / f"projection_{method}.csv"
            EvaluationService.project_latents(groups).to_csv(path, index=False, float_format="%.10g")
            logger.info(f"Latent projection for {method} written to {path}")


def run_full_experiment(config: ExperimentConfig) -> EvalReport:
    """
    generate -> pretrain -> per target: align and baseline -> decode -> merged report

    Reruns reuse every artifact whose digest still matches.
    """
    start = time.time()
    pipeline = PipelineService(config)
    with pipeline_step("generate"):
        pipeline.generate()
    if any(m in ALIGNED_METHODS for m in pipeline.methods()):
        with pipeline_step("pretrain"):
            pipeline.pretrain()
    with pipeline_step("evaluate"):
        report = pipeline.evaluate()
    logger.info("\n" + format_summary(report))
    LoggerManager.log_performance(logger, "full experiment", time.time() - start)
    return report
