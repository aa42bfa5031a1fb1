import enum
import uuid

from sqlalchemy import Column, DateTime, Enum as SQLEnum, Float, Integer, String, Text
from sqlalchemy.sql import func

from database import Base


class RunStatus(enum.Enum):
    COMPLETED = "completed"
    FAILED = "failed"


class BenchRun(Base):
    __tablename__ = "bench_runs"

    id = Column(String, primary_key=True, default=lambda: str(uuid.uuid4()))
    schema_version = Column(Integer, nullable=False)
    status = Column(SQLEnum(RunStatus), default=RunStatus.COMPLETED, nullable=False)

    algorithm = Column(String, nullable=False)
    seed = Column(Integer, nullable=False)
    repeat = Column(Integer, nullable=False, default=0)
    n = Column(Integer, nullable=False)
    d = Column(Integer, nullable=False)
    k = Column(Integer, nullable=True)
    eps = Column(Float, nullable=True)
    delta = Column(Float, nullable=True)

    value = Column(Float, nullable=True)
    opt = Column(Float, nullable=True)
    ratio = Column(Float, nullable=True)
    chain = Column(Text, nullable=True)  # space-separated indices
    total_time = Column(Float, nullable=True)
    mean_step_time = Column(Float, nullable=True)
    queries = Column(Integer, nullable=True)
    deletes = Column(Integer, nullable=True)
    fallbacks = Column(Integer, nullable=True)
    error = Column(Text, nullable=True)

    created_at = Column(DateTime(timezone=True), server_default=func.now())

    def to_dict(self):
        return {
            "id": self.id,
            "schema_version": self.schema_version,
            "status": self.status.value,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "repeat": self.repeat,
            "n": self.n,
            "d": self.d,
            "k": self.k,
            "eps": self.eps,
            "delta": self.delta,
            "value": self.value,
            "opt": self.opt,
            "ratio": self.ratio,
            "chain": self.chain,
            "total_time": self.total_time,
            "mean_step_time": self.mean_step_time,
            "queries": self.queries,
            "deletes": self.deletes,
            "fallbacks": self.fallbacks,
            "error": self.error,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }
