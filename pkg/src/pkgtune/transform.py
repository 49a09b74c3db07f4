"""Package transformations as dependency-graph rewrites.

Two transformations exist.  ``tune`` lowers every tunable package of the
closure with a ``MARCH`` environment entry; everything that depends on a
tuned package is rehashed through its input digests, everything else keeps
its digest.  ``with-input`` redirects every dependency edge from one
package to another before lowering.  Transformations apply in the order
they were given.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .cpu import Microarchitecture, lookup_microarch
from .errors import PkgTuneError, ResolutionError, TransformationUsageError
from .model import (
    BuildGraph,
    BuildSettings,
    PackageCollection,
    PackageDef,
    lower_graph,
)

log = logging.getLogger(__name__)

TUNE = "tune"
WITH_INPUT = "with-input"
AUTO = "auto"
KINDS = (TUNE, WITH_INPUT)


@dataclass(frozen=True)
class Transformation:
    kind: str
    argument: str

    def to_record(self) -> dict:
        return {"argument": self.argument, "kind": self.kind}


@dataclass(frozen=True)
class TransformationSpec:
    entries: tuple[Transformation, ...] = ()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def tunes(self) -> bool:
        return any(e.kind == TUNE for e in self.entries)

    @property
    def has_auto(self) -> bool:
        return any(e.kind == TUNE and e.argument == AUTO for e in self.entries)

    def resolve_auto(self, march: str) -> "TransformationSpec":
        return TransformationSpec(tuple(
            Transformation(TUNE, march) if e.kind == TUNE and e.argument == AUTO else e
            for e in self.entries
        ))

    def effective_march(self) -> str | None:
        march = None
        for e in self.entries:
            if e.kind == TUNE:
                march = e.argument
        return march

    def to_records(self) -> list[dict]:
        if self.has_auto:
            raise PkgTuneError(
                "internal error: 'auto' tuning must be resolved before it is recorded"
            )
        return [e.to_record() for e in self.entries]

    @classmethod
    def from_records(cls, records: Iterable) -> "TransformationSpec":
        entries = []
        for rec in records:
            if not isinstance(rec, dict) or set(rec) != {"argument", "kind"}:
                raise TransformationUsageError(f"malformed transformation record: {rec!r}")
            entries.append(_validated(rec["kind"], rec["argument"], allow_auto=False))
        return cls(tuple(entries))


def _validated(kind: str, argument: str, allow_auto: bool = True) -> Transformation:
    if kind == TUNE:
        if argument == AUTO:
            if not allow_auto:
                raise TransformationUsageError("recorded tuning must name a CPU, not 'auto'")
        else:
            lookup_microarch(argument)
        return Transformation(TUNE, argument)
    if kind == WITH_INPUT:
        old, sep, new = argument.partition("=")
        if not sep or not old or not new:
            raise TransformationUsageError(
                f"--with-input expects OLD=NEW, got '{argument}'"
            )
        return Transformation(WITH_INPUT, argument)
    raise TransformationUsageError(f"unknown transformation '{kind}'")


def is_transformation_option(arg: str) -> bool:
    return arg == "--tune" or arg.startswith(("--tune=", "--with-input"))


def parse_transformations(options: Sequence[str]) -> TransformationSpec:
    """Turn ``--tune``, ``--tune=CPU`` and ``--with-input=OLD=NEW`` options,
    in command-line order, into a spec.  ``--with-input OLD=NEW`` (two
    tokens) is accepted too."""
    entries = []
    it = iter(options)
    for opt in it:
        if opt == "--tune":
            entries.append(Transformation(TUNE, AUTO))
        elif opt.startswith("--tune="):
            entries.append(_validated(TUNE, opt[len("--tune="):]))
        elif opt == "--with-input":
            arg = next(it, None)
            if arg is None:
                raise TransformationUsageError("--with-input requires OLD=NEW")
            entries.append(_validated(WITH_INPUT, arg))
        elif opt.startswith("--with-input="):
            entries.append(_validated(WITH_INPUT, opt[len("--with-input="):]))
        else:
            raise TransformationUsageError(f"not a transformation option: '{opt}'")
    return TransformationSpec(tuple(entries))


def serialize_transformations(spec: TransformationSpec) -> str:
    return json.dumps(spec.to_records(), sort_keys=True, indent=2)


def deserialize_transformations(text: str) -> TransformationSpec:
    try:
        records = json.loads(text)
    except ValueError as exc:
        raise TransformationUsageError(f"malformed transformations: {exc}") from exc
    if not isinstance(records, list):
        raise TransformationUsageError("transformations must be a JSON array")
    return TransformationSpec.from_records(records)


# -- graph rewriting ---------------------------------------------------------


@dataclass(frozen=True)
class RewriteReport:
    tuned: tuple[str, ...] = ()
    rehashed: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class RewrittenGraph:
    graph: BuildGraph
    report: RewriteReport = field(default_factory=RewriteReport)


def package_closure(collection: PackageCollection, roots: Iterable[str]) -> set[str]:
    seen: set[str] = set()
    todo = list(roots)
    while todo:
        name = todo.pop()
        if name in seen:
            continue
        seen.add(name)
        todo.extend(collection.get(name).inputs)
    return seen


def _redirect(pkg: PackageDef, old: str, new: str) -> PackageDef:
    inputs = []
    for dep in pkg.inputs:
        dep = new if dep == old else dep
        if dep not in inputs:
            inputs.append(dep)

    def sel(s: str) -> str:
        prefix = f"@{old}/"
        return f"@{new}/{s[len(prefix):]}" if s.startswith(prefix) else s

    recipe = []
    for step in pkg.recipe:
        if step.op == "compile":
            step = step.replace(source=sel(step.get("source")))
        elif step.op == "link":
            step = step.replace(objects=tuple(sel(o) for o in step.get("objects")))
        elif step.op == "install":
            step = step.replace(paths=tuple((k, sel(v)) for k, v in step.get("paths")))
        recipe.append(step)
    return PackageDef(pkg.name, pkg.version, pkg.source, tuple(recipe), tuple(inputs), pkg.tunable)


def rewrite_inputs(
    collection: PackageCollection, roots: Sequence[str], old: str, new: str
) -> tuple[PackageCollection, list[str]]:
    """Collection with every edge to ``old`` pointing at ``new`` instead.

    The replacement's own inputs are left alone so that a package may wrap
    the one it replaces.
    """
    if new not in collection:
        raise ResolutionError(f"--with-input: package '{new}' not found in collection")
    if old == new:
        return collection, []
    if old not in package_closure(collection, roots):
        msg = f"--with-input: '{old}' is not a dependency of {', '.join(roots)}; ignored"
        log.warning(msg)
        return collection, [msg]
    packages = {
        name: pkg if name == new or old not in pkg.inputs else _redirect(pkg, old, new)
        for name, pkg in collection.packages.items()
    }
    return collection.with_packages(packages), []


def _report(base: BuildGraph, result: BuildGraph, march: str | None, warnings) -> RewriteReport:
    before = base.by_package()
    after = result.by_package()
    coll = result.collection
    tuned = sorted(n for n in after if march is not None and coll.get(n).tunable)
    rehashed = sorted(
        n for n, d in after.items()
        if n in before and before[n] != d and n not in tuned
    )
    return RewriteReport(tuple(tuned), tuple(rehashed), tuple(warnings))


def apply_tune(
    collection: PackageCollection,
    roots: Sequence[str],
    march: Microarchitecture,
    system: str | None = None,
) -> RewrittenGraph:
    base_settings = BuildSettings() if system is None else BuildSettings(system=system)
    base = lower_graph(collection, roots, base_settings)
    tuned = lower_graph(
        collection, roots, BuildSettings(march=march.name, system=base_settings.system)
    )
    return RewrittenGraph(tuned, _report(base, tuned, march.name, []))


def apply_with_input(
    collection: PackageCollection, roots: Sequence[str], old: str, new: str
) -> RewrittenGraph:
    base = lower_graph(collection, roots)
    rewritten, warnings = rewrite_inputs(collection, roots, old, new)
    result = lower_graph(rewritten, roots)
    return RewrittenGraph(result, _report(base, result, None, warnings))


def apply_transformations(
    collection: PackageCollection,
    roots: Sequence[str],
    spec: TransformationSpec,
    system: str | None = None,
) -> RewrittenGraph:
    """Apply every entry of ``spec`` left to right and lower the result."""
    if spec.has_auto:
        raise PkgTuneError("internal error: resolve 'auto' tuning before applying it")
    settings = BuildSettings() if system is None else BuildSettings(system=system)
    base = lower_graph(collection, roots, settings)
    current = collection
    march: str | None = None
    warnings: list[str] = []
    for entry in spec:
        if entry.kind == TUNE:
            march = lookup_microarch(entry.argument).name
        else:
            old, _, new = entry.argument.partition("=")
            current, w = rewrite_inputs(current, roots, old, new)
            warnings.extend(w)
    result = lower_graph(current, roots, BuildSettings(march=march, system=settings.system))
    return RewrittenGraph(result, _report(base, result, march, warnings))
