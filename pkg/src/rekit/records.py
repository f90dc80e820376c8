"""Run records, seeding helpers and solution hashing shared by all solvers."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

STATUSES = ("solved", "timeout", "bp-failure", "contradiction", "completed")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for stream ``stream`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def kernel_seed(seed: int, stream: int = 0) -> int:
    """32-bit seed for the compiled kernels' internal generator, split like ``make_rng``."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


def solution_hash(x) -> str:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.int8))
    return hashlib.sha256(a.tobytes()).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


@dataclass
class RunRecord:
    """Outcome of one solver run on one instance.

    ``iterations`` counts the algorithm's natural unit (attempted moves for the
    annealer, epochs for gradient descent, sweeps for message passing).
    ``trace`` holds one dict of observables per schedule step / epoch / ramp step.
    """

    algorithm: str
    config: dict
    seed: int
    status: str
    iterations: int
    trace: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    solution: list | None = None
    solution_hash: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.solution is not None:
            self.solution = [int(v) for v in np.asarray(self.solution).ravel()]
            self.solution_hash = solution_hash(self.solution)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def stamp(self, started: float) -> "RunRecord":
        self.metadata.update(
            finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
            elapsed=time.time() - started,
            host=platform.node(),
        )
        return self

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def deterministic_dict(self) -> dict:
        """Record contents without timing/host metadata."""
        d = self.to_dict()
        d.pop("metadata")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d and k != "solution_hash"})
