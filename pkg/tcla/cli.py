"""
Command Line Interface
tcla {generate,pretrain,align,decode,evaluate,report} --config PATH [overrides]
"""

import argparse
import json
import sys
from typing import List, Optional

from pydantic import ValidationError

from tcla.config import settings
from tcla.exceptions import ConfigError, MissingArtifactError, SplitError, TCLAError, UnknownSessionError
from tcla.schemas.evaluation import METHODS
from tcla.schemas.experiment import ExperimentConfig
from tcla.services.evaluation_service import format_summary
from tcla.services.pipeline_service import PipelineService, apply_overrides
from tcla.utils.logger import LoggerManager, get_pipeline_logger

logger = get_pipeline_logger()

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

COMMANDS = ("generate", "pretrain", "align", "decode", "evaluate", "report")
VALIDATION_ERRORS = (ConfigError, MissingArtifactError, SplitError, UnknownSessionError)


class UsageError(Exception):
    """Raised instead of argparse's own exit on a bad command line"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcla", description="Task-conditioned latent alignment laboratory")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline step to run")
    parser.add_argument("--config", default=str(settings.DEFAULT_CONFIG_PATH), help="Experiment JSON file")
    parser.add_argument("--seed", type=int, help="Override model, Stage One, Stage Two and decoder seeds")
    parser.add_argument("--session", action="append", help="Restrict to a target session (repeatable)")
    parser.add_argument("--beta3", type=float, help="Override the Stage Two alignment weight")
    parser.add_argument("--ablation", choices=[m for m in METHODS if m != "tcla"], help="Add an ablation method")
    return parser


def _load_config(args) -> ExperimentConfig:
    try:
        config = ExperimentConfig.from_file(args.config)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {args.config}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {args.config} is not valid JSON: {e}") from e
    return apply_overrides(config, args.seed, args.beta3, args.ablation)


def _run(args) -> None:
    config = _load_config(args)
    pipeline = PipelineService(config)
    command = args.command

    if command == "generate":
        sessions = pipeline.generate()
        print(f"generated {len(sessions)} sessions under {pipeline.data_dir}")
    elif command == "pretrain":
        pipeline.load_sessions()
        pipeline.pretrain()
        print(f"stage one checkpoint at {pipeline.stage1_dir}")
    elif command == "align":
        pipeline.align(args.session)
        print(f"cell checkpoints under {pipeline.checkpoints_dir}")
    elif command == "decode":
        records = pipeline.decode(args.session)
        print(f"decoded {len(records)} cells under {pipeline.reports_dir / 'cells'}")
    elif command == "evaluate":
        print(format_summary(pipeline.evaluate(args.session)))
    elif command == "report":
        print(format_summary(pipeline.report(args.session)))


def _fail(step: str, code: str, message: str, exit_code: int, where: Optional[str] = None) -> int:
    first_line = " ".join(str(message).split())
    if where and where != step:
        first_line = f"[{where}] {first_line}"
    print(f"ERROR {step} {code}: {first_line}", file=sys.stderr)
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one pipeline step

    Returns:
        0 on success, 1 on validation errors (bad arguments or config, missing
        upstream artifacts), 2 on runtime failures
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(parser.format_usage(), file=sys.stderr, end="")
        return _fail("cli", "usage", str(e), EXIT_VALIDATION)

    step = args.command
    try:
        _run(args)
    except ValidationError as e:
        return _fail(step, "invalid-config", str(e), EXIT_VALIDATION, getattr(e, "step", None))
    except VALIDATION_ERRORS as e:
        return _fail(step, e.code, str(e), EXIT_VALIDATION, getattr(e, "step", None))
    except TCLAError as e:
        where = getattr(e, "step", step)
        LoggerManager.log_exception(logger, e, f"{step} ({where})" if where != step else step)
        return _fail(step, e.code, str(e), EXIT_RUNTIME, where)
    except ValueError as e:
        return _fail(step, "invalid-config", str(e), EXIT_VALIDATION, getattr(e, "step", None))
    except OSError as e:
        return _fail(step, "io", str(e), EXIT_RUNTIME, getattr(e, "step", None))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
