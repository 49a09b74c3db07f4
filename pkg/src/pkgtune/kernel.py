"""Integer matrix-multiply kernel run by linked ``matmul`` artifacts.

The lane width is the number of output columns updated per step, so a
tuned build processes 4 or 8 columns at a time where the baseline does 2.
Arithmetic is exact 64-bit integer arithmetic; operands whose product
could overflow int64 are rejected up front instead of wrapping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

INT64_MAX = np.iinfo(np.int64).max
VALID_LANES = (2, 4, 8)


def seeded_operands(m: int, k: int, n: int, seed: int, bound: int = 1000):
    rng = np.random.default_rng(seed)
    a = rng.integers(-bound, bound, size=(m, k), dtype=np.int64)
    b = rng.integers(-bound, bound, size=(k, n), dtype=np.int64)
    return a, b


def check_overflow(a: np.ndarray, b: np.ndarray) -> None:
    k = a.shape[1]
    amax = int(np.abs(a).max(initial=0))
    bmax = int(np.abs(b).max(initial=0))
    if amax * bmax * max(k, 1) > INT64_MAX:
        raise OverflowError("operands are large enough to overflow 64-bit accumulation")


def matmul_lanes(a: np.ndarray, b: np.ndarray, lanes: int) -> np.ndarray:
    """C = A @ B computed one ``lanes``-wide column block at a time."""
    if lanes not in VALID_LANES:
        raise ValueError(f"lane width must be one of {VALID_LANES}, got {lanes}")
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    check_overflow(a, b)
    m, k = a.shape
    n = b.shape[1]
    c = np.zeros((m, n), dtype=np.int64)
    for j in range(0, n, lanes):
        block = c[:, j:j + lanes]
        for p in range(k):
            block += a[:, p, None] * b[p, j:j + lanes]
    return c


@dataclass
class KernelRun:
    m: int
    k: int
    n: int
    lanes: int
    seconds: float
    result: np.ndarray

    @property
    def gops(self) -> float:
        return 2.0 * self.m * self.n * self.k / self.seconds / 1e9 if self.seconds else 0.0

    def checksum(self) -> int:
        return int(self.result.sum(dtype=np.int64))

    def render(self, march: str) -> str:
        return (
            f"{self.m} x {self.n} x {self.k}\n"
            f"kernel: {self.seconds:.6f} ({self.gops:.3f} GOps/s)\n"
            f"lanes: {self.lanes} (march {march})\n"
            f"checksum: {self.checksum()}\n"
        )


def run_kernel(m: int, k: int, n: int, lanes: int, seed: int = 0) -> KernelRun:
    a, b = seeded_operands(m, k, n, seed)
    start = time.perf_counter()
    c = matmul_lanes(a, b, lanes)
    return KernelRun(m, k, n, lanes, time.perf_counter() - start, c)
