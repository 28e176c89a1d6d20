from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base
from qbm.config import DATABASE_URL

engine = None
_configured = False
SessionLocal = sessionmaker(autocommit=False, autoflush=False)
Base = declarative_base()


def configure(url: str = DATABASE_URL):
    """Bind the session factory to ``url``; an empty URL disables the registry."""
    global engine, _configured
    _configured = True
    if engine is not None:
        engine.dispose()
    if not url:
        engine = None
        SessionLocal.configure(bind=None)
        return None
    engine = create_engine(url, pool_pre_ping=True)
    SessionLocal.configure(bind=engine)
    return engine


def init_db() -> bool:
    """Create the registry tables. Returns False when the registry is disabled."""
    if not _configured:
        configure()
    if engine is None:
        return False
    from qbm.models.schemas import Run, RunArtifact
    Base.metadata.create_all(bind=engine)
    _run_migrations()
    return True


def _run_migrations():
    """Add columns introduced after a registry file was first created."""
    from sqlalchemy import text, inspect
    insp = inspect(engine)
    if "runs" in insp.get_table_names():
        columns = [c["name"] for c in insp.get_columns("runs")]
        with engine.begin() as conn:
            if "threads" not in columns:
                conn.execute(text("ALTER TABLE runs ADD COLUMN threads INTEGER DEFAULT 1"))
            if "wall_clock" not in columns:
                conn.execute(text("ALTER TABLE runs ADD COLUMN wall_clock FLOAT"))
