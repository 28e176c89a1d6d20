import datetime
from sqlalchemy import (
    Column, Integer, String, Float, DateTime, ForeignKey, Text,
)
from sqlalchemy.orm import relationship
from qbm.models.database import Base
import enum


class RunStatus(str, enum.Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    FAILED = "failed"


class ArtifactKind(str, enum.Enum):
    CSV = "csv"
    JSON = "json"


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    scenario = Column(String(50), nullable=False, index=True)
    config_hash = Column(String(64), nullable=False, index=True)
    seed = Column(Integer, nullable=True)
    threads = Column(Integer, default=1)
    status = Column(String(20), default=RunStatus.PENDING.value)
    exit_code = Column(Integer, nullable=True)
    output_dir = Column(String(1024), nullable=True)
    summary = Column(Text, nullable=True)      # JSON
    diagnostic = Column(Text, nullable=True)   # JSON error record
    wall_clock = Column(Float, nullable=True)
    started_at = Column(DateTime, default=datetime.datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    artifacts = relationship("RunArtifact", back_populates="run", cascade="all, delete-orphan")


class RunArtifact(Base):
    __tablename__ = "run_artifacts"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False, index=True)
    path = Column(String(1024), nullable=False)
    kind = Column(String(10), default=ArtifactKind.CSV.value)
    rows = Column(Integer, nullable=True)
    created_at = Column(DateTime, default=datetime.datetime.utcnow)

    run = relationship("Run", back_populates="artifacts")
