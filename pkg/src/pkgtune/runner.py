"""Execution of built artifacts, guarded by the host's ISA."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Iterable, Sequence

from .cpu import BASELINE, FeatureSet, is_compatible, lookup_microarch, missing_features
from .errors import IncompatibleISAError, PkgTuneError
from .kernel import run_kernel
from .store import artifact_entry, parse_meta

HELLO = "Hello, world!\n"


def read_meta(store_dir: Path) -> dict[str, str]:
    meta = Path(store_dir) / "META"
    if not meta.is_file():
        raise PkgTuneError(f"{store_dir} has no META file; not a runnable artifact")
    return parse_meta(meta.read_text())


def check_isa(meta: dict[str, str], host: Iterable[str]) -> None:
    march = meta.get("march", "none")
    arch = BASELINE if march == "none" else lookup_microarch(march)
    if not is_compatible(arch, host):
        raise IncompatibleISAError(arch.name, missing_features(arch, host))


def find_program(store_dir: Path, name: str | None = None) -> tuple[Path, str]:
    bindir = Path(store_dir) / "bin"
    programs = []
    if bindir.is_dir():
        for exe in sorted(bindir.iterdir()):
            entry = artifact_entry(exe.read_bytes())
            if entry is not None and (name is None or exe.name == name):
                programs.append((exe, entry))
    if not programs:
        raise PkgTuneError(f"no runnable program{' ' + name if name else ''} in {store_dir}")
    if len(programs) > 1:
        names = ", ".join(p.name for p, _ in programs)
        raise PkgTuneError(f"{store_dir} holds several programs ({names}); pick one")
    return programs[0]


def _matmul_args(args: Sequence[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="kernel-bench", add_help=False)
    parser.add_argument("dims", nargs="+", type=int)
    parser.add_argument("--seed", type=int, default=0)
    try:
        ns = parser.parse_args(list(args))
    except SystemExit:
        raise PkgTuneError("usage: kernel-bench N [K M] [--seed S]") from None
    if len(ns.dims) not in (1, 3) or any(d < 1 for d in ns.dims):
        raise PkgTuneError("usage: kernel-bench N [K M] [--seed S]")
    return ns


def run_artifact(
    store_dir: Path, args: Sequence[str], host: FeatureSet, program: str | None = None
) -> str:
    """Run the program of a store item and return what it prints."""
    meta = read_meta(store_dir)
    check_isa(meta, host)
    _, entry = find_program(store_dir, program)
    if entry == "hello":
        return HELLO
    if entry == "matmul":
        ns = _matmul_args(args)
        m, k, n = ns.dims * 3 if len(ns.dims) == 1 else ns.dims
        lanes = int(meta.get("lanes", BASELINE.lanes))
        return run_kernel(m, k, n, lanes, ns.seed).render(meta.get("march", "none"))
    raise PkgTuneError(f"unknown program entry '{entry}'")


def is_artifact(path: Path) -> bool:
    try:
        with open(path, "rb") as fh:
            return artifact_entry(fh.read(256)) is not None
    except OSError:
        return False
