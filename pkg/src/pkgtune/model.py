"""Packages, derivations and their content-addressed identity.

A ``PackageDef`` is what a packager writes.  Lowering turns it, together
with the rest of its collection and a ``BuildSettings``, into a
``Derivation``: a fully resolved build instruction whose SHA-256 over the
canonical byte form below is its identity.

Canonical form
--------------
An *atom* is ``<decimal byte length>:<utf-8 bytes>``.  Lists are wrapped in
``(`` ... ``)``.  A derivation serializes as::

    drv1(
      4:name <atom>
      7:builder (<language atom> (<step>*))
      10:input-drvs ((<digest atom> <output atom>)*)
      3:env ((<key atom> <value atom>)*)
      6:system <atom>
      11:source-hash <atom>
    )

with no whitespace at all (the layout above is for reading only).  A step
is ``(<op atom> ((<key atom> <value>)*))`` where a value is an atom, a list
of atoms, or a map written as a list of ``(<key atom> <value atom>)``
pairs.  Input derivations must be strictly ascending by digest; env keys,
step argument keys and map keys strictly ascending.  Violations raise
``CanonicalizationError`` rather than being reordered.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

from .errors import (
    CanonicalizationError,
    CycleError,
    PackageParseError,
    ResolutionError,
)

NAME_RE = re.compile(r"[a-z0-9][a-z0-9-]*\Z")
DIGEST_RE = re.compile(r"[0-9a-f]{64}\Z")

RECIPE_LANGUAGE = "minirecipe-v1"
DEFAULT_SYSTEM = "x86_64-linux"
DEFAULT_OUTPUT = "out"

ArgValue = Union[str, tuple]

# op -> {arg: (kind, required)}; kind is "str", "list" or "map"
STEP_SCHEMA: dict[str, dict[str, tuple[str, bool]]] = {
    "fetch-source": {"name": ("str", False)},
    "compile": {
        "source": ("str", True),
        "flags": ("list", False),
        "output": ("str", False),
    },
    "link": {
        "objects": ("list", True),
        "artifact": ("str", True),
        "entry": ("str", False),
    },
    "install": {"paths": ("map", True)},
    "emit-meta": {},
}


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class SourceRef:
    name: str
    sha256: str


@dataclass(frozen=True)
class RecipeStep:
    """One step of the mock toolchain language.

    ``args`` is a tuple of ``(key, value)`` pairs sorted by key.  Values are
    strings, tuples of strings (lists) or tuples of string pairs (maps).
    """

    op: str
    args: tuple = ()

    @classmethod
    def from_json(cls, obj: Mapping) -> "RecipeStep":
        if not isinstance(obj, Mapping) or "op" not in obj:
            raise PackageParseError(f"recipe step must be an object with 'op': {obj!r}")
        op = obj["op"]
        schema = STEP_SCHEMA.get(op)
        if schema is None:
            raise PackageParseError(
                f"unknown recipe op '{op}' (known: {', '.join(STEP_SCHEMA)})"
            )
        args = []
        for key, value in obj.items():
            if key == "op":
                continue
            if key not in schema:
                raise PackageParseError(f"unexpected argument '{key}' for op '{op}'")
            args.append((key, _normalize_arg(op, key, schema[key][0], value)))
        present = {k for k, _ in args}
        for key, (_, required) in schema.items():
            if required and key not in present:
                raise PackageParseError(f"op '{op}' requires argument '{key}'")
        return cls(op, tuple(sorted(args)))

    def to_json(self) -> dict:
        out: dict = {"op": self.op}
        for key, value in self.args:
            kind = STEP_SCHEMA[self.op][key][0]
            if kind == "map":
                out[key] = dict(value)
            elif kind == "list":
                out[key] = list(value)
            else:
                out[key] = value
        return out

    def get(self, key: str, default=None):
        for k, v in self.args:
            if k == key:
                return v
        return default

    def replace(self, **changes) -> "RecipeStep":
        merged = dict(self.args)
        merged.update(changes)
        return RecipeStep(self.op, tuple(sorted(merged.items())))


def _normalize_arg(op, key, kind, value) -> ArgValue:
    where = f"argument '{key}' of op '{op}'"
    if kind == "str":
        if not isinstance(value, str):
            raise PackageParseError(f"{where} must be a string")
        return value
    if kind == "list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise PackageParseError(f"{where} must be a list of strings")
        return tuple(value)
    if not isinstance(value, Mapping) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in value.items()
    ):
        raise PackageParseError(f"{where} must be an object of strings")
    return tuple(sorted(value.items()))


@dataclass(frozen=True)
class PackageDef:
    name: str
    version: str
    source: SourceRef
    recipe: tuple[RecipeStep, ...]
    inputs: tuple[str, ...] = ()
    tunable: bool = False

    def __post_init__(self):
        if not NAME_RE.match(self.name):
            raise PackageParseError(f"invalid package name '{self.name}'")
        if not self.version:
            raise PackageParseError(f"package '{self.name}' has an empty version")
        if len(set(self.inputs)) != len(self.inputs):
            raise PackageParseError(f"package '{self.name}' lists an input twice")
        if self.name in self.inputs:
            raise PackageParseError(f"package '{self.name}' depends on itself")

    @property
    def label(self) -> str:
        return f"{self.name}-{self.version}"

    @classmethod
    def from_json(cls, obj: Mapping) -> "PackageDef":
        try:
            src = obj["source"]
            return cls(
                name=obj["name"],
                version=str(obj["version"]),
                source=SourceRef(src["name"], src["sha256"]),
                recipe=tuple(RecipeStep.from_json(s) for s in obj["recipe"]),
                inputs=tuple(obj.get("inputs", ())),
                tunable=bool(obj.get("tunable", False)),
            )
        except (KeyError, TypeError) as exc:
            raise PackageParseError(f"malformed package definition: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "source": {"name": self.source.name, "sha256": self.source.sha256},
            "recipe": [s.to_json() for s in self.recipe],
            "inputs": list(self.inputs),
            "tunable": self.tunable,
        }


@dataclass(frozen=True)
class PackageCollection:
    """A self-contained set of packages at one revision.

    Source blobs come from ``blobs`` first, then from ``blob_dir`` where
    each blob is stored under its SHA-256.
    """

    revision: str
    packages: Mapping[str, PackageDef]
    blob_dir: Path | None = None
    blobs: Mapping[str, bytes] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.packages

    def get(self, name: str) -> PackageDef:
        try:
            return self.packages[name]
        except KeyError:
            raise ResolutionError(
                f"package '{name}' not found in collection {self.revision}"
            ) from None

    def fetch(self, sha256: str) -> bytes:
        if sha256 in self.blobs:
            return self.blobs[sha256]
        if self.blob_dir is not None:
            path = self.blob_dir / sha256
            if path.is_file():
                return path.read_bytes()
        raise ResolutionError(f"source blob {sha256} not available")

    def validate(self) -> None:
        for pkg in self.packages.values():
            for dep in pkg.inputs:
                if dep not in self.packages:
                    raise ResolutionError(
                        f"package '{pkg.name}' depends on unknown package '{dep}'"
                    )
            if sha256_hex(self.fetch(pkg.source.sha256)) != pkg.source.sha256:
                raise PackageParseError(
                    f"source of '{pkg.name}' does not match its recorded hash"
                )

    def with_packages(self, packages: Mapping[str, PackageDef]) -> "PackageCollection":
        return PackageCollection(self.revision, dict(packages), self.blob_dir, self.blobs)


def load_collection(root: Path, revision: str | None = None) -> PackageCollection:
    """Read ``root/packages/*.pkg.json`` with blobs under ``root/blobs``."""
    root = Path(root)
    packages: dict[str, PackageDef] = {}
    for path in sorted((root / "packages").glob("*.pkg.json")):
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            pkg = PackageDef.from_json(obj)
        except (ValueError, PackageParseError) as exc:
            raise PackageParseError(f"{path.name}: {exc}") from exc
        if pkg.name in packages:
            raise PackageParseError(f"{path.name}: duplicate package '{pkg.name}'")
        packages[pkg.name] = pkg
    coll = PackageCollection(revision or root.name, packages, root / "blobs")
    coll.validate()
    return coll


# -- derivations -------------------------------------------------------------


@dataclass(frozen=True)
class Derivation:
    name: str
    builder: str
    steps: tuple[RecipeStep, ...]
    input_drvs: tuple[tuple[str, str], ...]
    env: tuple[tuple[str, str], ...]
    system: str
    source_hash: str

    @cached_property
    def digest(self) -> str:
        return derivation_hash(self)

    @property
    def march(self) -> str | None:
        return dict(self.env).get("MARCH")

    @property
    def store_path(self) -> "StorePath":
        return StorePath(digest32(self.digest), self.name)

    @property
    def input_digests(self) -> tuple[str, ...]:
        return tuple(d for d, _ in self.input_drvs)


def _atom(text: str) -> bytes:
    data = text.encode("utf-8")
    return str(len(data)).encode("ascii") + b":" + data


def _check_ascending(keys: Sequence[str], what: str) -> None:
    for a, b in zip(keys, keys[1:]):
        if a == b:
            raise CanonicalizationError(f"duplicate {what} '{a}'")
        if a > b:
            raise CanonicalizationError(f"{what} not sorted: '{a}' before '{b}'")


def _value(value) -> bytes:
    if isinstance(value, str):
        return _atom(value)
    if all(isinstance(v, tuple) for v in value) and value:
        _check_ascending([k for k, _ in value], "map key")
        return b"(" + b"".join(b"(" + _atom(k) + _atom(v) + b")" for k, v in value) + b")"
    return b"(" + b"".join(_atom(v) for v in value) + b")"


def _step(step: RecipeStep) -> bytes:
    _check_ascending([k for k, _ in step.args], "step argument")
    body = b"".join(b"(" + _atom(k) + _value(v) + b")" for k, v in step.args)
    return b"(" + _atom(step.op) + b"(" + body + b"))"


def canonical_serialize(drv: Derivation) -> bytes:
    digests = [d for d, _ in drv.input_drvs]
    for d in digests:
        if not DIGEST_RE.match(d):
            raise CanonicalizationError(f"malformed input digest '{d}'")
    _check_ascending(digests, "input derivation")
    _check_ascending([k for k, _ in drv.env], "environment key")
    parts = [
        b"drv1(",
        _atom("name"), _atom(drv.name),
        _atom("builder"), b"(", _atom(drv.builder),
        b"(", *(_step(s) for s in drv.steps), b"))",
        _atom("input-drvs"), b"(",
        *(b"(" + _atom(d) + _atom(o) + b")" for d, o in drv.input_drvs), b")",
        _atom("env"), b"(",
        *(b"(" + _atom(k) + _atom(v) + b")" for k, v in drv.env), b")",
        _atom("system"), _atom(drv.system),
        _atom("source-hash"), _atom(drv.source_hash),
        b")",
    ]
    return b"".join(parts)


def derivation_hash(drv: Derivation) -> str:
    return sha256_hex(canonical_serialize(drv))


def digest32(hex_digest: str) -> str:
    """First 32 characters of the lowercase, unpadded RFC 4648 base32 digest."""
    raw = bytes.fromhex(hex_digest)
    return base64.b32encode(raw).decode("ascii").lower().rstrip("=")[:32]


@dataclass(frozen=True)
class StorePath:
    digest32: str
    label: str

    @property
    def basename(self) -> str:
        return f"{self.digest32}-{self.label}"

    def render(self) -> str:
        return f"store/{self.basename}/"

    def __str__(self) -> str:
        return self.render()


# -- lowering ----------------------------------------------------------------


@dataclass(frozen=True)
class BuildSettings:
    """Per-lowering knobs.  ``march`` is applied to tunable packages only."""

    march: str | None = None
    system: str = DEFAULT_SYSTEM

    def march_for(self, pkg: PackageDef) -> str | None:
        return self.march if pkg.tunable else None


@dataclass(frozen=True)
class BuildGraph:
    roots: tuple[str, ...]
    derivations: Mapping[str, Derivation]
    packages: Mapping[str, str]
    collection: PackageCollection

    def digest_of(self, package: str) -> str:
        for digest, name in self.packages.items():
            if name == package:
                return digest
        raise ResolutionError(f"package '{package}' is not part of this graph")

    def by_package(self) -> dict[str, str]:
        return {name: digest for digest, name in self.packages.items()}

    def root_derivations(self) -> list[Derivation]:
        return [self.derivations[d] for d in self.roots]

    def closure(self) -> list[Derivation]:
        return closure(self.root_derivations(), self.derivations)


class Lowerer:
    """Lowers packages of one collection under one set of settings.

    Results are memoized per package name, so a shared dependency is lowered
    once however many dependents reach it.  An instance is meant to be used
    from a single thread.
    """

    def __init__(self, collection: PackageCollection, settings: BuildSettings | None = None):
        self.collection = collection
        self.settings = settings or BuildSettings()
        self.memo: dict[str, Derivation] = {}

    def lower(self, name: str) -> Derivation:
        return self._lower(name, ())

    def _lower(self, name: str, stack: tuple[str, ...]) -> Derivation:
        if name in self.memo:
            return self.memo[name]
        if name in stack:
            raise CycleError(stack[stack.index(name):] + (name,))
        pkg = self.collection.get(name)
        deps = {}
        for dep in pkg.inputs:
            if dep not in self.collection:
                raise ResolutionError(
                    f"package '{name}' depends on '{dep}', which is not in "
                    f"collection {self.collection.revision}"
                )
            deps[dep] = self._lower(dep, stack + (name,))
        drv = self._derive(pkg, deps)
        self.memo[name] = drv
        return drv

    def _derive(self, pkg: PackageDef, deps: Mapping[str, Derivation]) -> Derivation:
        def resolve(selector: str) -> str:
            if not selector.startswith("@"):
                return selector
            dep, _, rest = selector[1:].partition("/")
            if dep not in deps:
                raise ResolutionError(
                    f"recipe of '{pkg.name}' references '{dep}', "
                    "which is not a declared input"
                )
            return f"inputs/{digest32(deps[dep].digest)}/{rest}"

        steps = []
        for step in pkg.recipe:
            if step.op == "fetch-source":
                step = step.replace(name=pkg.source.name)
            elif step.op == "compile":
                step = step.replace(source=resolve(step.get("source")))
            elif step.op == "link":
                step = step.replace(objects=tuple(resolve(o) for o in step.get("objects")))
            elif step.op == "install":
                step = step.replace(
                    paths=tuple((k, resolve(v)) for k, v in step.get("paths"))
                )
            steps.append(step)

        env = {}
        march = self.settings.march_for(pkg)
        if march is not None:
            env["MARCH"] = march
        inputs = sorted({(d.digest, DEFAULT_OUTPUT) for d in deps.values()})
        return Derivation(
            name=pkg.label,
            builder=RECIPE_LANGUAGE,
            steps=tuple(steps),
            input_drvs=tuple(inputs),
            env=tuple(sorted(env.items())),
            system=self.settings.system,
            source_hash=pkg.source.sha256,
        )


def lower_package(
    pkg: PackageDef, collection: PackageCollection, settings: BuildSettings | None = None
) -> Derivation:
    if collection.packages.get(pkg.name) != pkg:
        collection = collection.with_packages({**collection.packages, pkg.name: pkg})
    return Lowerer(collection, settings).lower(pkg.name)


def lower_graph(
    collection: PackageCollection,
    roots: Sequence[str],
    settings: BuildSettings | None = None,
) -> BuildGraph:
    lowerer = Lowerer(collection, settings)
    root_digests = tuple(lowerer.lower(name).digest for name in roots)
    derivations = {drv.digest: drv for drv in lowerer.memo.values()}
    packages = {drv.digest: name for name, drv in lowerer.memo.items()}
    if len(derivations) != len(lowerer.memo):
        raise ResolutionError("two packages lowered to the same derivation")
    return BuildGraph(root_digests, derivations, packages, collection)


def closure(
    roots: Sequence[Derivation], derivations: Mapping[str, Derivation] | None = None
) -> list[Derivation]:
    """Topological order of the roots and everything they depend on.

    Dependencies come first; among derivations that are ready at the same
    time the smallest digest goes first.
    """
    known: dict[str, Derivation] = dict(derivations or {})
    for r in roots:
        known.setdefault(r.digest, r)

    members: dict[str, Derivation] = {}
    todo = [r.digest for r in roots]
    while todo:
        d = todo.pop()
        if d in members:
            continue
        if d not in known:
            raise ResolutionError(f"input derivation {d} is unknown")
        members[d] = known[d]
        todo.extend(known[d].input_digests)

    pending = {d: set(drv.input_digests) for d, drv in members.items()}
    users: dict[str, list[str]] = {d: [] for d in members}
    for d, deps in pending.items():
        for dep in deps:
            users[dep].append(d)
    ready = [d for d, deps in pending.items() if not deps]
    heapq.heapify(ready)
    order = []
    while ready:
        d = heapq.heappop(ready)
        order.append(members[d])
        for user in users[d]:
            pending[user].discard(d)
            if not pending[user]:
                heapq.heappush(ready, user)
    if len(order) != len(members):
        left = {d for d in members if pending[d]}
        raise CycleError(_find_cycle(left, pending, members))
    return order


def _find_cycle(left, pending, members) -> list[str]:
    start = min(left)
    seen: list[str] = []
    node = start
    while node not in seen:
        seen.append(node)
        node = min(pending[node])
    cycle = seen[seen.index(node):] + [node]
    return [members[d].name for d in cycle]
