"""Content-addressed store and the deterministic recipe executor.

Layout under a store root::

    store/<digest32>-<name>-<version>/   build outputs, normalized metadata
    store/.links/<digest32>.lock          per-path build locks
    var/log/<digest32>.log                build logs
    var/db/<digest32>.json                which derivation owns the path
    tmp/                                  scratch directories

Recipes are interpreted by a mock toolchain instead of a real compiler.
Every output byte is a function of the derivation and the bytes of its
inputs, which makes bit-for-bit reproducibility checkable without any host
toolchain.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from contextlib import contextmanager
from dataclasses import dataclass, field
from graphlib import TopologicalSorter
from pathlib import Path, PurePosixPath
from string import Template
from typing import Callable, Mapping, Sequence

from .cpu import BASELINE, lookup_microarch
from .errors import BuildError, HermeticityError, PkgTuneError, StoreCorruptionError
from .model import BuildGraph, Derivation, StorePath, closure, digest32

log = logging.getLogger(__name__)

Fetcher = Callable[[str], bytes]

OBJECT_MAGIC = b"MINIOBJ1"
LINK_MAGIC = b"MINILINK1"
COMPILER_ID = b"compile-v1"
SANDBOX_VAR = "SANDBOX"
EXEC_MODE = 0o755
FILE_MODE = 0o644


# -- executor ----------------------------------------------------------------


def _object_record(name: str, source: bytes, flags: Sequence[str], march: str | None) -> bytes:
    h = hashlib.sha256()
    h.update(source)
    h.update(b"\0" + b"\0".join(f.encode() for f in sorted(flags)))
    h.update(b"\0" + (march or "none").encode())
    h.update(b"\0" + COMPILER_ID)
    return OBJECT_MAGIC + b" " + name.encode() + b"\n" + h.hexdigest().encode() + b"\n"


def link_artifact(objects: Sequence[bytes], entry: str | None) -> bytes:
    kind = "exe" if entry else "lib"
    header = f" kind={kind} entry={entry or '-'} objects={len(objects)}\n".encode()
    body = b"".join(str(len(o)).encode() + b":" + o for o in objects)
    return LINK_MAGIC + header + body


def artifact_entry(data: bytes) -> str | None:
    """Program entry of a linked executable, or None for anything else."""
    if not data.startswith(LINK_MAGIC + b" kind=exe "):
        return None
    header = data.split(b"\n", 1)[0].decode()
    fields = dict(part.split("=", 1) for part in header.split()[1:])
    return fields.get("entry")


def render_meta(march: str | None, input_digests: Sequence[str]) -> bytes:
    arch = lookup_microarch(march) if march else BASELINE
    lines = [
        f"march: {march or 'none'}",
        f"vector-bits: {arch.vector_bits}",
        f"lanes: {arch.lanes}",
        f"inputs: {' '.join(sorted(input_digests))}".rstrip(),
    ]
    return ("\n".join(lines) + "\n").encode()


def parse_meta(text: str) -> dict[str, str]:
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition(":")
        if sep:
            meta[key.strip()] = value.strip()
    return meta


class _Sandbox:
    def __init__(self, root: Path, drv: Derivation):
        self.root = root
        self.allowed_inputs = {digest32(d) for d in drv.input_digests}

    def path(self, selector: str, writable: bool = False) -> Path:
        rel = PurePosixPath(selector)
        if rel.is_absolute() or ".." in rel.parts or not rel.parts:
            raise HermeticityError(f"path '{selector}' escapes the build sandbox")
        top = rel.parts[0]
        if top == "inputs":
            if writable:
                raise HermeticityError(f"inputs are read-only: '{selector}'")
            if len(rel.parts) < 2 or rel.parts[1] not in self.allowed_inputs:
                raise HermeticityError(f"'{selector}' is not a declared input")
        elif top not in ("src", "build", "out"):
            raise HermeticityError(f"path '{selector}' is outside the sandbox areas")
        path = self.root.joinpath(*rel.parts)
        real = Path(os.path.realpath(path))
        if real != self.root and self.root not in real.parents:
            raise HermeticityError(f"path '{selector}' resolves outside the sandbox")
        return path

    def read(self, selector: str) -> bytes:
        path = self.path(selector)
        if not path.is_file():
            raise BuildError(f"no such file in sandbox: '{selector}'")
        return path.read_bytes()

    def write(self, selector: str, data: bytes) -> None:
        path = self.path(selector, writable=True)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)


def execute_recipe(
    drv: Derivation,
    sandbox: Path,
    fetch: Fetcher | None = None,
    log_lines: list[str] | None = None,
) -> dict[str, bytes]:
    """Run ``drv``'s recipe inside ``sandbox`` and return the ``out/`` tree.

    The only environment visible to the recipe is the derivation's own, plus
    ``SANDBOX`` (the scratch directory).  Declared inputs must already be
    materialized under ``inputs/<digest32>/``.
    """
    sandbox = Path(os.path.realpath(sandbox))
    box = _Sandbox(sandbox, drv)
    env = dict(drv.env)
    env[SANDBOX_VAR] = str(sandbox)
    march = env.get("MARCH")
    out = log_lines if log_lines is not None else []

    def expand(text: str) -> str:
        try:
            return Template(text).substitute(env)
        except KeyError as exc:
            raise HermeticityError(
                f"variable {exc.args[0]} is not part of the build environment"
            ) from None
        except ValueError as exc:
            raise BuildError(f"bad variable reference in '{text}': {exc}") from None

    (sandbox / "out").mkdir(parents=True, exist_ok=True)
    for step in drv.steps:
        if step.op == "fetch-source":
            if fetch is None:
                raise BuildError("no source fetcher available")
            data = fetch(drv.source_hash)
            if hashlib.sha256(data).hexdigest() != drv.source_hash:
                raise BuildError(f"source hash mismatch for {drv.name}")
            name = step.get("name", "source")
            box.write(f"src/{name}", data)
            out.append(f"fetch-source {name} sha256:{drv.source_hash}")
        elif step.op == "compile":
            src_sel = step.get("source")
            flags = [expand(f) for f in step.get("flags", ())]
            target = step.get("output") or f"build/{PurePosixPath(src_sel).stem}.o"
            if PurePosixPath(target).parts[:1] != ("build",):
                raise HermeticityError(f"compile output must be under build/: '{target}'")
            data = box.read(src_sel)
            box.write(target, _object_record(PurePosixPath(src_sel).name, data, flags, march))
            out.append(f"compile {src_sel} -> {target} march={march or 'none'}")
        elif step.op == "link":
            objects = [box.read(o) for o in step.get("objects")]
            target = f"build/{step.get('artifact')}"
            box.write(target, link_artifact(objects, step.get("entry")))
            out.append(f"link {len(objects)} objects -> {target}")
        elif step.op == "install":
            for dest, src in step.get("paths"):
                box.write(f"out/{dest}", box.read(src))
                out.append(f"install {src} -> {dest}")
        elif step.op == "emit-meta":
            box.write("out/META", render_meta(march, drv.input_digests))
            out.append("emit-meta")
        else:
            raise BuildError(f"unknown recipe op '{step.op}'")
    return read_tree(sandbox / "out")


# -- store -------------------------------------------------------------------


def read_tree(root: Path) -> dict[str, bytes]:
    tree = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            path = Path(dirpath) / name
            tree[path.relative_to(root).as_posix()] = path.read_bytes()
    return dict(sorted(tree.items()))


def tree_hash(tree: Mapping[str, bytes]) -> str:
    h = hashlib.sha256()
    for rel in sorted(tree):
        h.update(f"{rel}\0{mode_for(rel):o}\0{len(tree[rel])}\0".encode())
        h.update(tree[rel])
    return h.hexdigest()


def mode_for(rel: str) -> int:
    return EXEC_MODE if rel.startswith("bin/") else FILE_MODE


def write_normalized(root: Path, tree: Mapping[str, bytes]) -> None:
    """Write ``tree`` under ``root`` with mtime 0 and fixed permissions."""
    root.mkdir(parents=True)
    dirs = {root}
    for rel, data in tree.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        p = path.parent
        while p != root:
            dirs.add(p)
            p = p.parent
        path.write_bytes(data)
        os.chmod(path, mode_for(rel))
        os.utime(path, (0, 0))
    for d in sorted(dirs, key=lambda p: len(p.parts), reverse=True):
        os.chmod(d, EXEC_MODE)
        os.utime(d, (0, 0))


@dataclass
class BuildResult:
    store_path: StorePath
    tree: dict[str, bytes]
    log: str
    duration_ms: float = 0.0
    built: bool = True


class Store:
    def __init__(self, root: Path | str):
        self.root = Path(root).resolve()
        for sub in ("store/.links", "var/log", "var/db", "tmp"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.builds: list[str] = []

    def path(self, sp: StorePath) -> Path:
        return self.root / "store" / sp.basename

    def log_path(self, sp: StorePath) -> Path:
        return self.root / "var" / "log" / f"{sp.digest32}.log"

    def contains(self, drv: Derivation) -> bool:
        return self.path(drv.store_path).is_dir()

    @contextmanager
    def _lock(self, sp: StorePath):
        lockfile = self.root / "store" / ".links" / f"{sp.digest32}.lock"
        with open(lockfile, "a+") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def _db(self, sp: StorePath) -> Path:
        return self.root / "var" / "db" / f"{sp.digest32}.json"

    def _check_owner(self, drv: Derivation) -> None:
        record = self._db(drv.store_path)
        if not record.exists():
            return
        owner = json.loads(record.read_text())
        if owner["derivation"] != drv.digest:
            raise StoreCorruptionError(
                f"store path {drv.store_path} belongs to derivation "
                f"{owner['derivation']}, not {drv.digest}"
            )

    def verify_path(self, drv: Derivation) -> None:
        """Re-hash a stored tree and compare it with the recorded hash."""
        self._check_owner(drv)
        owner = json.loads(self._db(drv.store_path).read_text())
        actual = tree_hash(read_tree(self.path(drv.store_path)))
        if actual != owner["tree"]:
            raise StoreCorruptionError(f"contents of {drv.store_path} were modified")

    def build(self, drv: Derivation, fetch: Fetcher) -> BuildResult:
        """Build one derivation whose inputs are already in the store."""
        sp = drv.store_path
        final = self.path(sp)
        if final.is_dir():
            self._check_owner(drv)
            return BuildResult(sp, read_tree(final), "", 0.0, built=False)
        with self._lock(sp):
            if final.is_dir():
                self._check_owner(drv)
                return BuildResult(sp, read_tree(final), "", 0.0, built=False)
            self._check_owner(drv)
            return self._build_locked(drv, fetch)

    def _build_locked(self, drv: Derivation, fetch: Fetcher) -> BuildResult:
        sp = drv.store_path
        for d in drv.input_digests:
            if not any((self.root / "store").glob(f"{digest32(d)}-*/")):
                raise BuildError(f"{drv.name}: input {digest32(d)} is not in the store")
        lines = [f"building {sp}"]
        start = time.perf_counter()
        scratch = Path(tempfile.mkdtemp(prefix=f"build-{sp.digest32}-", dir=self.root / "tmp"))
        staging = None
        try:
            for d in drv.input_digests:
                src = next((self.root / "store").glob(f"{digest32(d)}-*/"))
                shutil.copytree(src, scratch / "inputs" / digest32(d))
            try:
                tree = execute_recipe(drv, scratch, fetch, lines)
            except BuildError as exc:
                lines.append(f"error: {exc}")
                text = "\n".join(lines) + "\n"
                self.log_path(sp).write_text(text)
                raise type(exc)(
                    f"build of {drv.name} failed: {exc}", text, self.log_path(sp)
                ) from exc
            staging = self.root / "store" / f".tmp-{sp.digest32}-{os.getpid()}-{id(scratch)}"
            write_normalized(staging, tree)
            os.rename(staging, self.path(sp))
            staging = None
            self._db(sp).write_text(json.dumps(
                {"derivation": drv.digest, "name": drv.name, "tree": tree_hash(tree)},
                sort_keys=True,
            ))
        finally:
            shutil.rmtree(scratch, ignore_errors=True)
            if staging is not None:
                shutil.rmtree(staging, ignore_errors=True)
        text = "\n".join(lines) + "\n"
        self.log_path(sp).write_text(text)
        self.builds.append(drv.digest)
        log.info("built %s", sp)
        return BuildResult(sp, tree, text, (time.perf_counter() - start) * 1000)

    def ensure_built(self, drv: Derivation, graph: BuildGraph | Mapping[str, Derivation],
                     fetch: Fetcher | None = None) -> StorePath:
        """Build ``drv`` and, first, any of its inputs missing from the store."""
        derivations, fetch = _unpack(graph, fetch)
        for d in drv.input_digests:
            if d not in derivations:
                raise BuildError(f"{drv.name}: input derivation {d} is unknown")
            self.ensure_built(derivations[d], derivations, fetch)
        return self.build(drv, fetch).store_path

    def build_closure(
        self,
        roots: Sequence[Derivation],
        graph: BuildGraph | Mapping[str, Derivation],
        fetch: Fetcher | None = None,
        jobs: int = 4,
    ) -> dict[str, StorePath]:
        """Build the closure of ``roots`` on a bounded worker pool.

        A derivation is submitted only once every input has finished.
        """
        derivations, fetch = _unpack(graph, fetch)
        members = closure(roots, derivations)
        sorter = TopologicalSorter({d.digest: set(d.input_digests) for d in members})
        sorter.prepare()
        by_digest = {d.digest: d for d in members}
        paths: dict[str, StorePath] = {}
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            running = {}
            while sorter.is_active():
                for d in sorted(sorter.get_ready()):
                    running[pool.submit(self.build, by_digest[d], fetch)] = d
                if not running:
                    break
                done, _ = wait(running, return_when=FIRST_EXCEPTION)
                for fut in done:
                    d = running.pop(fut)
                    exc = fut.exception()
                    if exc is not None:
                        for other in running:
                            other.cancel()
                        raise exc
                    paths[d] = fut.result().store_path
                    sorter.done(d)
        return paths


def _unpack(graph, fetch):
    if isinstance(graph, BuildGraph):
        return graph.derivations, fetch or graph.collection.fetch
    if fetch is None:
        raise BuildError("a source fetcher is required")
    return graph, fetch


# -- reproducibility check ---------------------------------------------------


@dataclass
class ReproReport:
    derivation: str
    rounds: int
    identical: bool
    tree_hashes: list[str] = field(default_factory=list)
    differing_round: int | None = None
    differing_file: str | None = None
    differing_offset: int | None = None

    def summary(self) -> str:
        if self.identical:
            return f"{self.derivation}: {self.rounds} rounds, outputs identical"
        return (
            f"{self.derivation}: round {self.differing_round} differs in "
            f"{self.differing_file} at byte {self.differing_offset}"
        )


def first_difference(a: Mapping[str, bytes], b: Mapping[str, bytes]) -> tuple[str, int] | None:
    for rel in sorted(set(a) | set(b)):
        x, y = a.get(rel), b.get(rel)
        if x == y:
            continue
        if x is None or y is None:
            return rel, 0
        n = min(len(x), len(y))
        offset = next((i for i in range(n) if x[i] != y[i]), n)
        return rel, offset
    return None


def verify_reproducibility(
    drv: Derivation,
    graph: BuildGraph | Mapping[str, Derivation],
    rounds: int = 2,
    fetch: Fetcher | None = None,
    workdir: Path | None = None,
) -> ReproReport:
    """Build ``drv`` ``rounds`` times in throwaway stores and compare bytes."""
    if rounds < 2:
        raise PkgTuneError(f"reproducibility check needs at least 2 rounds, got {rounds}")
    derivations, fetch = _unpack(graph, fetch)
    trees = []
    for _ in range(rounds):
        with tempfile.TemporaryDirectory(prefix="pkgtune-check-", dir=workdir) as tmp:
            store = Store(tmp)
            store.build_closure([drv], derivations, fetch, jobs=1)
            trees.append(read_tree(store.path(drv.store_path)))
    report = ReproReport(drv.name, rounds, True, [tree_hash(t) for t in trees])
    for i, tree in enumerate(trees[1:], start=1):
        diff = first_difference(trees[0], tree)
        if diff is not None:
            report.identical = False
            report.differing_round = i
            report.differing_file, report.differing_offset = diff
            break
    return report
