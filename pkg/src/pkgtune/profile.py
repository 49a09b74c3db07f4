"""Profiles: the environment a deployment hands to the user.

A profile lives at ``var/profiles/<id>-profile/`` inside a store root.  It
holds ``profile.json`` (roots plus provenance) and a ``bin/`` directory of
relative symlinks into the store.  The id is derived from ``profile.json``
so identical deployments share one profile.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import MissingProvenanceError, PkgTuneError
from .model import BuildGraph, digest32
from .store import Store
from .transform import TransformationSpec

log = logging.getLogger(__name__)

SEARCH_PATHS = (("PATH", "bin"),)
PROFILE_VAR = "PKGTUNE_PROFILE"


@dataclass(frozen=True)
class Provenance:
    commit: str
    specs: tuple[str, ...]
    transformations: TransformationSpec = TransformationSpec()

    def to_json(self) -> dict:
        return {
            "commit": self.commit,
            "specs": list(self.specs),
            "transformations": self.transformations.to_records(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Provenance":
        return cls(
            obj["commit"],
            tuple(obj["specs"]),
            TransformationSpec.from_records(obj["transformations"]),
        )


@dataclass(frozen=True)
class ProfileRecord:
    roots: tuple[str, ...]
    provenance: Provenance | None
    search_paths: tuple[tuple[str, str], ...] = SEARCH_PATHS

    def to_json(self) -> dict:
        return {
            "roots": list(self.roots),
            "provenance": self.provenance.to_json() if self.provenance else None,
            "search-paths": [{"variable": v, "directory": d} for v, d in self.search_paths],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ProfileRecord":
        prov = obj.get("provenance")
        return cls(
            tuple(obj["roots"]),
            Provenance.from_json(prov) if prov else None,
            tuple((s["variable"], s["directory"]) for s in obj.get("search-paths", ())),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


@dataclass
class Profile:
    path: Path
    record: ProfileRecord
    store_paths: list[Path] = field(default_factory=list)

    def environment(self, base: Mapping[str, str] | None = None) -> dict[str, str]:
        """``base`` with the profile's search paths prepended."""
        env = dict(base if base is not None else os.environ)
        for var, sub in self.record.search_paths:
            entry = str(self.path / sub)
            env[var] = entry + (os.pathsep + env[var] if env.get(var) else "")
        env[PROFILE_VAR] = str(self.path)
        return env


def create_profile(store: Store, graph: BuildGraph, provenance: Provenance) -> Profile:
    if provenance is None:
        raise MissingProvenanceError("profiles must carry provenance")
    roots = graph.root_derivations()
    record = ProfileRecord(tuple(d.store_path.render() for d in roots), provenance)
    text = record.to_text()
    pid = digest32(hashlib.sha256(text.encode()).hexdigest())
    path = store.root / "var" / "profiles" / f"{pid}-profile"
    store_paths = [store.path(d.store_path) for d in roots]
    if not (path / "profile.json").exists():
        tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
        (tmp / "bin").mkdir(parents=True, exist_ok=True)
        for sp in store_paths:
            bindir = sp / "bin"
            if not bindir.is_dir():
                continue
            for exe in sorted(bindir.iterdir()):
                link = tmp / "bin" / exe.name
                if link.is_symlink():
                    log.warning("profile: %s provided twice; keeping the first", exe.name)
                    continue
                os.symlink(os.path.relpath(exe, path / "bin"), link)
        (tmp / "profile.json").write_text(text)
        try:
            os.rename(tmp, path)
        except OSError:
            shutil.rmtree(tmp, ignore_errors=True)
            if not (path / "profile.json").exists():
                raise
    return Profile(path, record, store_paths)


def load_profile(path: Path) -> Profile:
    path = Path(path)
    record_file = path / "profile.json"
    if not record_file.exists():
        raise MissingProvenanceError(f"{path} has no profile.json; not a profile")
    try:
        record = ProfileRecord.from_json(json.loads(record_file.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise PkgTuneError(f"{record_file}: malformed profile record: {exc}") from exc
    store_root = path.parent.parent.parent
    return Profile(path, record, [store_root / r for r in record.roots])
