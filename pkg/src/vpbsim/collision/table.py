"""Dense K_1 / K_2 tables on a velocity lattice, with a binary file format.

File layout: an 8-byte little-endian header length, a UTF-8 JSON header
(lattice, collision parameters, array shape, SHA-256 of the data block),
then K_1 and K_2 as row-major little-endian float64 blocks.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import LatticeMismatch, ParseError
from ..lattice import VelocityLattice
from .operators import CollisionOperator
from .params import CollisionParams

FORMAT = "vpbsim-kernel-table"
VERSION = 1


@dataclass
class KernelTable:
    lattice: VelocityLattice
    params: CollisionParams
    k1: np.ndarray
    k2: np.ndarray

    @classmethod
    def build(cls, lattice: VelocityLattice, params: CollisionParams | None = None,
              operator: CollisionOperator | None = None) -> "KernelTable":
        op = CollisionOperator(lattice, params) if operator is None else operator
        return cls(lattice, op.params, op.k1_matrix(), op.k2_matrix())

    def check_lattice(self, lattice: VelocityLattice):
        if lattice != self.lattice:
            raise LatticeMismatch(f"table built for {self.lattice}, used with {lattice}")

    @property
    def matrix(self) -> np.ndarray:
        return self.k2 - self.k1

    def apply(self, f) -> np.ndarray:
        """K f = K_2 f - K_1 f for flat (..., N) profiles."""
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.lattice.size:
            raise LatticeMismatch(f"profile length {f.shape[-1]} != {self.lattice.size}")
        return f @ self.k2.T - f @ self.k1.T

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.k1, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.k2, dtype="<f8").tobytes())
        return h.hexdigest()

    def violations(self) -> list:
        """Invariant check: finite entries and K_1 vanishing for |u-v| <= eps."""
        out = []
        if not (np.all(np.isfinite(self.k1)) and np.all(np.isfinite(self.k2))):
            out.append("non-finite kernel entries")
        P = self.lattice.points
        eps = self.params.chi_epsilon
        for i in range(0, self.lattice.size, max(1, self.lattice.size // 64)):
            close = np.linalg.norm(P - P[i], axis=1) <= eps
            if np.any(self.k1[i, close] != 0.0):
                out.append(f"K_1 row {i} nonzero inside the cutoff")
                break
        return out

    def header(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "lattice": {"n": self.lattice.n, "vmax": self.lattice.vmax},
            "params": asdict(self.params),
            "shape": list(self.k1.shape),
            "blocks": ["k1", "k2"],
            "dtype": "<f8",
            "sha256": self.checksum(),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.k1, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.k2, dtype="<f8").tobytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path, lattice: VelocityLattice | None = None,
             params: CollisionParams | None = None) -> "KernelTable":
        path = Path(path)
        with open(path, "rb") as fh:
            raw = fh.read(8)
            if len(raw) != 8:
                raise ParseError(f"{path}: truncated header")
            (size,) = struct.unpack("<Q", raw)
            try:
                head = json.loads(fh.read(size).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: bad header: {exc}") from exc
            if head.get("format") != FORMAT:
                raise ParseError(f"{path}: not a kernel table")
            shape = tuple(head["shape"])
            count = shape[0] * shape[1]
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != 2 * count:
            raise ParseError(f"{path}: expected {2 * count} values, found {data.size}")
        table = cls(VelocityLattice(**head["lattice"]), CollisionParams(**head["params"]),
                    data[:count].reshape(shape).copy(), data[count:].reshape(shape).copy())
        if table.checksum() != head["sha256"]:
            raise ParseError(f"{path}: checksum mismatch")
        if lattice is not None:
            table.check_lattice(lattice)
        if params is not None and params != table.params:
            raise LatticeMismatch(f"table parameters {table.params} differ from {params}")
        return table


def cache_dir() -> Path:
    env = os.environ.get("VPBSIM_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "vpbsim"


def cache_path(lattice: VelocityLattice, params: CollisionParams) -> Path:
    key = json.dumps({"v": VERSION, "lattice": [lattice.n, lattice.vmax], "params": asdict(params)},
                     sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return cache_dir() / f"ktable-{lattice.n}-{digest}.bin"


def load_or_build(lattice: VelocityLattice, params: CollisionParams | None = None,
                  operator: CollisionOperator | None = None, use_cache: bool = True) -> KernelTable:
    """Load the cached table for (lattice, params) or build and cache it."""
    params = CollisionParams() if params is None else params
    path = cache_path(lattice, params)
    if use_cache and path.exists():
        try:
            return KernelTable.load(path, lattice, params)
        except (ParseError, LatticeMismatch, OSError):
            pass
    table = KernelTable.build(lattice, params, operator)
    if use_cache:
        try:
            table.save(path)
        except OSError:
            pass
    return table
