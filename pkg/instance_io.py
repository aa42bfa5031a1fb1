"""
Text instance files for DiversityFamily instances.

    submod-instance v1
    n d D lambda
    base <kind>
    <d rows of B>
    <n rows of u_i>

Floats are written with repr() (shortest round-trip form), so reading a file
back gives bit-identical arrays and writing the same instance twice gives
byte-identical files.
"""

import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from config import config
from core import DiversityFamily, EmbeddingInstance, GroundVectors
from errors import InstanceFormatError, SubmodError

logger = logging.getLogger(__name__)

MAGIC = "submod-instance"
PathLike = Union[str, Path]


def _row(values) -> str:
    return " ".join(repr(float(x)) for x in values)


def dumps_instance(inst: EmbeddingInstance, base_kind: str = "custom") -> str:
    oracle = inst.oracle
    if not isinstance(oracle, DiversityFamily):
        raise InstanceFormatError(f"only DiversityFamily instances can be written, got {type(oracle).__name__}")
    g = inst.ground
    lines: List[str] = [
        f"{MAGIC} v{config.INSTANCE_FORMAT_VERSION}",
        f"{g.n} {g.d} {g.norm_bound!r} {oracle.penalty!r}",
        f"base {base_kind}",
    ]
    lines.extend(_row(r) for r in oracle.base)
    lines.extend(_row(u) for u in g.vectors)
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> EmbeddingInstance:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise InstanceFormatError("empty instance file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != MAGIC:
        raise InstanceFormatError(f"not an instance file: {lines[0][:40]!r}")
    if header[1] != f"v{config.INSTANCE_FORMAT_VERSION}":
        raise InstanceFormatError(f"unsupported format version {header[1]}")

    try:
        n_s, d_s, bound_s, penalty_s = lines[1].split()
        n, d = int(n_s), int(d_s)
        bound, penalty = float(bound_s), float(penalty_s)
    except (IndexError, ValueError) as e:
        raise InstanceFormatError(f"bad size line: {e}") from e
    if len(lines) != 3 + d + n:
        raise InstanceFormatError(f"expected {3 + d + n} lines for n={n}, d={d}, got {len(lines)}")
    if not lines[2].startswith("base"):
        raise InstanceFormatError("missing base descriptor line")

    try:
        B = np.array([[float(x) for x in line.split()] for line in lines[3:3 + d]], dtype=np.float64)
        U = np.array([[float(x) for x in line.split()] for line in lines[3 + d:]], dtype=np.float64)
    except ValueError as e:
        raise InstanceFormatError(f"bad float: {e}") from e
    if B.shape != (d, d) or U.shape != (n, d):
        raise InstanceFormatError(f"ragged rows: B {B.shape}, vectors {U.shape}")

    try:
        ground = GroundVectors(U, bound)
        return EmbeddingInstance(ground, DiversityFamily(ground, B, penalty))
    except SubmodError as e:
        raise InstanceFormatError(f"invalid instance: {e}") from e


def write_instance(inst: EmbeddingInstance, path: PathLike, base_kind: str = "custom") -> Path:
    path = Path(path)
    path.write_text(dumps_instance(inst, base_kind), encoding="utf-8")
    logger.info(f"[BENCH] wrote instance n={inst.n} d={inst.d} to {path}")
    return path


def read_instance(path: PathLike) -> EmbeddingInstance:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InstanceFormatError(f"cannot read {path}: {e}") from e
    return loads_instance(text)
