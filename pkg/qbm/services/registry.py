"""
Run registry: one row per CLI run plus the files it wrote.

Every function swallows database errors after logging them; a broken registry never
changes a run's outputs or exit code.
"""

import datetime
import json
import logging
from typing import Iterable, List, Optional, Tuple

from sqlalchemy.exc import SQLAlchemyError

from qbm.models import database
from qbm.models.schemas import Run, RunArtifact, RunStatus

logger = logging.getLogger(__name__)

_ready = False


def _session():
    global _ready
    if not _ready:
        try:
            _ready = database.init_db()
        except SQLAlchemyError as e:
            logger.error(f"Run registry unavailable: {e}")
            return None
    if not _ready:
        return None
    return database.SessionLocal()


def reset():
    """Forget the initialisation state, e.g. after database.configure()."""
    global _ready
    _ready = False


def start_run(scenario: str, config_hash: str, seed: Optional[int], output_dir: str,
              threads: int = 1) -> Optional[int]:
    db = _session()
    if db is None:
        return None
    try:
        run = Run(
            scenario=scenario, config_hash=config_hash, seed=seed,
            output_dir=output_dir, threads=threads, status=RunStatus.PENDING.value,
        )
        db.add(run)
        db.commit()
        logger.info(f"Registered run {run.id} ({scenario}, config {config_hash[:12]})")
        return run.id
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Could not register run: {e}")
        return None
    finally:
        db.close()


def finish_run(run_id: Optional[int], summary: dict,
               artifacts: Iterable[Tuple[str, str, Optional[int]]] = (),
               wall_clock: Optional[float] = None):
    if run_id is None:
        return
    db = _session()
    if db is None:
        return
    try:
        run = db.get(Run, run_id)
        if not run:
            logger.warning(f"Run {run_id} not found in registry")
            return
        run.status = RunStatus.COMPLETED.value
        run.exit_code = 0
        run.summary = json.dumps(summary, sort_keys=True, default=str)
        run.wall_clock = wall_clock
        run.finished_at = datetime.datetime.utcnow()
        for path, kind, rows in artifacts:
            db.add(RunArtifact(run_id=run.id, path=path, kind=kind, rows=rows))
        db.commit()
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Could not complete run {run_id}: {e}")
    finally:
        db.close()


def fail_run(run_id: Optional[int], exit_code: int, diagnostic: dict):
    if run_id is None:
        return
    db = _session()
    if db is None:
        return
    try:
        run = db.get(Run, run_id)
        if not run:
            return
        run.status = RunStatus.FAILED.value
        run.exit_code = exit_code
        run.diagnostic = json.dumps(diagnostic, sort_keys=True, default=str)
        run.finished_at = datetime.datetime.utcnow()
        db.commit()
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Could not mark run {run_id} failed: {e}")
    finally:
        db.close()


def recent_runs(limit: int = 20) -> List[dict]:
    db = _session()
    if db is None:
        return []
    try:
        runs = db.query(Run).order_by(Run.id.desc()).limit(limit).all()
        return [
            {
                "id": r.id,
                "scenario": r.scenario,
                "status": r.status,
                "exit_code": r.exit_code,
                "config_hash": r.config_hash,
                "seed": r.seed,
                "output_dir": r.output_dir,
                "started_at": r.started_at.isoformat() if r.started_at else None,
                "files": len(r.artifacts),
            }
            for r in runs
        ]
    except SQLAlchemyError as e:
        logger.error(f"Could not list runs: {e}")
        return []
    finally:
        db.close()
