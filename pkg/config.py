import logging
import os
import sys
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Result store
    DATABASE_URL: str = os.getenv("DATABASE_URL", "sqlite:///bench_runs.db")

    # Logging
    LOG_LEVEL: str = os.getenv("SUBMOD_LOG_LEVEL", "INFO")

    # Sketch ensemble
    SKETCH_DIM_SCALE: float = float(os.getenv("SKETCH_DIM_SCALE", "1.0"))
    SKETCH_CACHE_LIMIT: int = int(os.getenv("SKETCH_CACHE_LIMIT", str(1 << 22)))
    SKETCH_MIN_ENSEMBLE: int = 32

    # Search backends
    LSH_CANDIDATE_FACTOR: int = int(os.getenv("LSH_CANDIDATE_FACTOR", "10"))
    TIE_RTOL: float = 1e-12

    # Oracle
    ORACLE_MAX_N: int = int(os.getenv("ORACLE_MAX_N", "20"))

    # Bench harness
    BENCH_WORKERS: int = int(os.getenv("BENCH_WORKERS", "1"))
    CSV_SCHEMA_VERSION: int = 1
    INSTANCE_FORMAT_VERSION: int = 1


config = Config()


def configure_logging(level: Optional[str] = None) -> None:
    """Install one stream handler on the root logger (CLI start-up only)."""
    logging.basicConfig(
        level=(level or config.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
