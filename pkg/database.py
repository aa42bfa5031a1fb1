import logging
from typing import Dict, Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from config import config

logger = logging.getLogger(__name__)

# Base class for models
Base = declarative_base()

_engines: Dict[str, Engine] = {}


def get_engine(url: Optional[str] = None) -> Engine:
    """One engine per URL, created on first use."""
    url = url or config.DATABASE_URL
    if url not in _engines:
        kwargs = {"pool_pre_ping": True}
        if not url.startswith("sqlite"):
            kwargs.update(pool_size=10, max_overflow=20)
        _engines[url] = create_engine(url, **kwargs)
        logger.debug(f"[DB] engine created for {url}")
    return _engines[url]


def session_factory(url: Optional[str] = None) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))


def get_db(url: Optional[str] = None) -> Iterator[Session]:
    db = session_factory(url)()
    try:
        yield db
    finally:
        db.close()


def init_db(url: Optional[str] = None) -> Engine:
    """Create the result tables if missing."""
    import models  # noqa: F401  registers BenchRun on Base

    engine = get_engine(url)
    Base.metadata.create_all(bind=engine)
    return engine
