import argparse
import json
import logging
import os
import sys
import time

from pydantic import ValidationError

from qbm.config import LOG_LEVEL, THREADS
from qbm.errors import InvalidInputError, NumericalError, QbmError
from qbm.handlers.coefficients import get_coefficient_handlers
from qbm.handlers.dynamics import get_dynamics_handlers
from qbm.handlers.phase_space import get_phase_space_handlers, run_wigner
from qbm.models.scenario import (
    ScenarioConfig, ScenarioContext, ScenarioResult, default_output_dir, json_schema,
)
from qbm.services import export, registry

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def build_handlers() -> dict:
    handlers = {}
    handlers.update(get_dynamics_handlers())
    handlers.update(get_coefficient_handlers())
    handlers.update(get_phase_space_handlers())
    return handlers


def _diagnose(payload: dict):
    sys.stderr.write(json.dumps(export._jsonable(payload), sort_keys=True, default=str) + "\n")


def load_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        payload = json.load(fh)
    return ScenarioConfig.model_validate(payload)


def _prepare(args) -> ScenarioContext:
    """Validate everything that can fail before an output directory exists."""
    config = load_config(args.config)
    seed = config.numerics.seed if args.seed is None else args.seed
    threads = args.threads or config.numerics.threads or THREADS
    out_dir = args.out or default_output_dir(config)
    ctx = ScenarioContext(
        config=config, out_dir=out_dir, seed=seed, threads=threads,
        base_dir=os.path.dirname(os.path.abspath(args.config)),
    )
    ctx.model.check_integrable()
    ctx.beta.inverse(ctx.params.Omega)
    return ctx


def _invalid(e: Exception) -> dict:
    if isinstance(e, ValidationError):
        return {"error": "ValidationError", "message": "config failed schema validation",
                "diagnostics": {"errors": json.loads(e.json())}}
    if isinstance(e, json.JSONDecodeError):
        return {"error": "JSONDecodeError", "message": str(e),
                "diagnostics": {"line": e.lineno, "column": e.colno}}
    if isinstance(e, QbmError):
        return e.to_dict()
    return {"error": type(e).__name__, "message": str(e), "diagnostics": {}}


def _execute(ctx: ScenarioContext, handler, scenario: str) -> int:
    config_payload = ctx.config.model_dump(mode="json")
    digest = export.config_hash(config_payload)
    export.ensure_dir(ctx.out_dir)
    run_id = registry.start_run(scenario, digest, ctx.seed, ctx.out_dir, ctx.threads)
    logger.info(f"Running {scenario} into {ctx.out_dir} (seed {ctx.seed}, {ctx.threads} threads)")

    started = time.perf_counter()
    try:
        result: ScenarioResult = handler(ctx)
    except InvalidInputError as e:
        logger.error(f"{scenario} rejected its input: {e}")
        _diagnose(e.to_dict())
        registry.fail_run(run_id, EXIT_INVALID, e.to_dict())
        return EXIT_INVALID
    except NumericalError as e:
        logger.error(f"{scenario} failed numerically: {e}")
        _diagnose(e.to_dict())
        registry.fail_run(run_id, EXIT_NUMERICAL, e.to_dict())
        return EXIT_NUMERICAL
    except Exception as e:
        logger.exception(f"{scenario} failed unexpectedly: {e}")
        diagnostic = {"error": type(e).__name__, "message": str(e), "diagnostics": {}}
        _diagnose(diagnostic)
        registry.fail_run(run_id, EXIT_NUMERICAL, diagnostic)
        return EXIT_NUMERICAL
    wall_clock = time.perf_counter() - started

    manifest_path = ctx.path("manifest.json")
    manifest = {
        "scenario": scenario,
        "config": config_payload,
        "config_hash": digest,
        "seed": ctx.seed,
        "seeds": result.seeds or {"seed": ctx.seed},
        "seed_rule": "bath mode i of trajectory k from Philox counter block i keyed by SeedSequence([seed, k]); system point from default_rng([seed, k, 1])",
        "threads": ctx.threads,
        "versions": export.versions(),
        "wall_clock": wall_clock,
        "summary": result.summary,
        "files": [
            {"path": os.path.basename(path), "kind": kind, "rows": rows}
            for path, kind, rows in result.artifacts
        ],
    }
    export.write_json(manifest_path, manifest)
    registry.finish_run(run_id, result.summary, result.artifacts + [(manifest_path, "json", None)], wall_clock)
    logger.info(f"{scenario} finished in {wall_clock:.2f}s")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        ctx = _prepare(args)
    except (ValidationError, json.JSONDecodeError, OSError, InvalidInputError) as e:
        logger.error(f"Invalid configuration {args.config}: {e}")
        _diagnose(_invalid(e))
        return EXIT_INVALID
    except NumericalError as e:
        _diagnose(e.to_dict())
        return EXIT_NUMERICAL
    scenario = ctx.config.scenario.value
    return _execute(ctx, build_handlers()[scenario], scenario)


def cmd_wigner(args) -> int:
    args.seed, args.threads = None, None
    try:
        ctx = _prepare(args)
    except (ValidationError, json.JSONDecodeError, OSError, InvalidInputError) as e:
        _diagnose(_invalid(e))
        return EXIT_INVALID
    return _execute(ctx, run_wigner, "wigner")


def cmd_schema(args) -> int:
    sys.stdout.write(json.dumps(json_schema(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_runs(args) -> int:
    for run in registry.recent_runs(args.limit):
        sys.stdout.write(json.dumps(run, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbm", description="Quantum Brownian motion scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the scenario named in a config file")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--threads", type=int, default=None)
    run.set_defaults(func=cmd_run)

    wigner = sub.add_parser("wigner", help="Wigner grid of the configured state")
    wigner.add_argument("config")
    wigner.add_argument("--out", default=None)
    wigner.set_defaults(func=cmd_wigner)

    schema = sub.add_parser("schema", help="print the config JSON schema")
    schema.set_defaults(func=cmd_schema)

    runs = sub.add_parser("runs", help="list recent runs")
    runs.add_argument("--limit", type=int, default=20)
    runs.set_defaults(func=cmd_runs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        _diagnose({"error": type(e).__name__, "message": str(e), "diagnostics": {}})
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
