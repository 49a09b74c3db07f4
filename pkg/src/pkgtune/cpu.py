"""x86_64 micro-architecture lineage and host CPU detection.

The lineage follows the SIMD chain SSE2 -> SSE3/SSSE3/SSE4 -> AVX -> AVX2
-> AVX-512.  Required feature sets use the flag spelling of Linux
``/proc/cpuinfo`` and are cumulative: every entry requires everything its
predecessor requires.  Which flags discriminate each generation is taken
from the GCC ``-march`` documentation; see ``LINEAGE`` below.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CpuParseError, UnknownMicroarchError, UnsupportedSystemError

FLAGS_LINE_RE = re.compile(r"^flags\s*:(.*)$", re.MULTILINE)
BARE_FLAGS_RE = re.compile(r"[A-Za-z0-9_.]+(?:[ \t]+[A-Za-z0-9_.]+)*")

# cpuinfo spells some features differently from the compiler.
FLAG_ALIASES = {"pni": "sse3"}

DEFAULT_CPUINFO = Path("/proc/cpuinfo")


class FeatureSet(frozenset):
    """A frozen set of lowercase feature flag names."""

    def __new__(cls, flags: Iterable[str] = ()):
        return super().__new__(cls, (f.lower() for f in flags))

    def __repr__(self) -> str:
        return f"FeatureSet({sorted(self)!r})"


@dataclass(frozen=True)
class Microarchitecture:
    name: str
    required: FeatureSet
    rank: int
    vector_bits: int

    @property
    def lanes(self) -> int:
        """Double-precision lanes per vector register."""
        return self.vector_bits // 64


def _build_lineage() -> tuple[Microarchitecture, ...]:
    tiers = [
        ("x86-64", 128, ["sse2"]),
        ("nehalem", 128, ["sse3", "ssse3", "sse4_1", "sse4_2", "popcnt"]),
        ("sandybridge", 256, ["avx", "xsave", "pclmulqdq"]),
        ("haswell", 256, [
            "avx2", "fma", "bmi1", "bmi2", "movbe", "f16c", "rdrand", "fsgsbase",
        ]),
        ("skylake", 256, [
            "adx", "rdseed", "3dnowprefetch", "clflushopt", "xsavec", "xsaves",
        ]),
        ("skylake-avx512", 512, ["avx512f", "avx512cd"]),
    ]
    acc: set[str] = set()
    out = []
    for rank, (name, bits, added) in enumerate(tiers):
        acc |= set(added)
        out.append(Microarchitecture(name, FeatureSet(acc), rank, bits))
    return tuple(out)


LINEAGE: tuple[Microarchitecture, ...] = _build_lineage()
BASELINE = LINEAGE[0]
MARCH_NAMES = tuple(m.name for m in LINEAGE)


def parse_cpu_flags(text: str) -> FeatureSet:
    """Feature flags from a cpuinfo dump or a bare space-separated flag line.

    Only the first ``flags`` line is read; on multi-processor dumps every
    processor repeats the same list.
    """
    match = FLAGS_LINE_RE.search(text)
    if match:
        flags = match.group(1).split()
    else:
        stripped = text.strip()
        if not stripped or not BARE_FLAGS_RE.fullmatch(stripped):
            raise CpuParseError("no 'flags' line found in CPU description")
        flags = stripped.split()
    flags = [f.lower() for f in flags]
    flags += [FLAG_ALIASES[f] for f in flags if f in FLAG_ALIASES]
    return FeatureSet(flags)


def read_host_features(path: Path | str | None = None) -> FeatureSet:
    path = Path(path) if path is not None else DEFAULT_CPUINFO
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise CpuParseError(f"cannot read {path}: {exc}") from exc
    if not FLAGS_LINE_RE.search(text) and re.search(r"^CPU architecture\s*:", text, re.M):
        raise UnsupportedSystemError(f"{path} describes a non-x86_64 processor")
    return parse_cpu_flags(text)


def check_system(system: str) -> None:
    if not system.startswith("x86_64"):
        raise UnsupportedSystemError(
            f"micro-architecture tuning is only defined for x86_64, not '{system}'"
        )


def detect_microarch(
    features: Iterable[str],
    table: Sequence[Microarchitecture] = LINEAGE,
    system: str = "x86_64-linux",
) -> Microarchitecture:
    """Highest-ranked entry whose required features are all present.

    Falls back to the baseline, which every x86_64 processor satisfies.
    """
    check_system(system)
    features = FeatureSet(features)
    best = table[0]
    for march in table:
        if march.required <= features and march.rank > best.rank:
            best = march
    return best


def lookup_microarch(name: str, table: Sequence[Microarchitecture] = LINEAGE) -> Microarchitecture:
    for march in table:
        if march.name == name:
            return march
    raise UnknownMicroarchError(name, [m.name for m in table])


def is_compatible(march: Microarchitecture, host: Iterable[str]) -> bool:
    return march.required <= FeatureSet(host)


def missing_features(march: Microarchitecture, host: Iterable[str]) -> FeatureSet:
    return FeatureSet(march.required - FeatureSet(host))


def lanes_for(march_name: str | None) -> int:
    """Lane count for a derivation's MARCH value; untuned code uses SSE2."""
    if march_name is None:
        return BASELINE.lanes
    return lookup_microarch(march_name).lanes
