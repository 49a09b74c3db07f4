"""Channels: commit-pinned package collections, manifests and replay.

A channel is a directory of frozen revisions::

    <channel>/aliases.json                     {"r1": "<commit>", ...}
    <channel>/<commit>/packages/*.pkg.json
    <channel>/<commit>/blobs/<sha256>

A commit is the first 16 hex digits of a SHA-256 over the revision's
files, so equal commits always mean byte-identical package files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import (
    ManifestFormatError,
    MissingProvenanceError,
    PackageParseError,
    UnknownRevisionError,
)
from .model import PackageCollection, load_collection
from .profile import Profile, ProfileRecord, Provenance, create_profile, load_profile
from .store import Store
from .transform import TransformationSpec, apply_transformations

MANIFEST_FORMAT = 1
COMMIT_LENGTH = 16


def default_channel_root() -> Path:
    return Path(str(resources.files("pkgtune") / "fixtures" / "channel"))


def revision_id(revision_dir: Path) -> str:
    h = hashlib.sha256()
    files = sorted(p for p in revision_dir.rglob("*") if p.is_file())
    for path in files:
        rel = path.relative_to(revision_dir).as_posix()
        data = path.read_bytes()
        h.update(f"{rel}\0{len(data)}\0".encode())
        h.update(data)
    return h.hexdigest()[:COMMIT_LENGTH]


class Channel:
    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else default_channel_root()

    def aliases(self) -> dict[str, str]:
        path = self.root / "aliases.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text())

    def revisions(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "packages").is_dir())

    def latest(self) -> str:
        aliases = self.aliases()
        if "latest" in aliases:
            return self.resolve(aliases["latest"])
        revs = self.revisions()
        if not revs:
            raise UnknownRevisionError("latest", [])
        return revs[-1]

    def _available(self) -> list[str]:
        names = [f"{a} ({c})" for a, c in sorted(self.aliases().items()) if a != "latest"]
        return names or self.revisions()

    def resolve(self, ref: str) -> str:
        """Full commit for an alias, a full commit or a unique prefix of one."""
        aliases = self.aliases()
        if ref in aliases:
            ref = aliases[ref]
            if ref in aliases:
                ref = aliases[ref]
        revs = self.revisions()
        if ref in revs:
            return ref
        matches = [r for r in revs if len(ref) >= 4 and r.startswith(ref)]
        if len(matches) == 1:
            return matches[0]
        raise UnknownRevisionError(ref, self._available())

    def load_revision(self, ref: str) -> PackageCollection:
        commit = self.resolve(ref)
        directory = self.root / commit
        actual = revision_id(directory)
        if actual != commit:
            raise PackageParseError(
                f"channel revision {commit} was modified (content hashes to {actual})"
            )
        return load_collection(directory, revision=commit)


def load_revision(commit: str, channel: Channel | Path | str | None = None) -> PackageCollection:
    if not isinstance(channel, Channel):
        channel = Channel(channel)
    return channel.load_revision(commit)


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    commit: str
    specs: tuple[str, ...]
    transformations: TransformationSpec = TransformationSpec()
    format: int = MANIFEST_FORMAT

    def to_json(self) -> dict:
        return {
            "commit": self.commit,
            "format": self.format,
            "specs": list(self.specs),
            "transformations": self.transformations.to_records(),
        }

    def to_text(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        try:
            obj = json.loads(text)
        except ValueError as exc:
            raise ManifestFormatError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestFormatError("manifest must be a JSON object")
        fmt = obj.get("format")
        if fmt != MANIFEST_FORMAT:
            raise ManifestFormatError(
                f"unsupported manifest format {fmt!r}; this tool reads format {MANIFEST_FORMAT}"
            )
        try:
            commit, specs, records = obj["commit"], obj["specs"], obj["transformations"]
        except KeyError as exc:
            raise ManifestFormatError(f"manifest lacks field {exc}") from exc
        if not isinstance(commit, str) or not isinstance(specs, list) or not all(
            isinstance(s, str) for s in specs
        ):
            raise ManifestFormatError("manifest 'commit' or 'specs' has the wrong type")
        return cls(commit, tuple(specs), TransformationSpec.from_records(records), fmt)

    @classmethod
    def from_file(cls, path: Path | str) -> "Manifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def export_manifest(profile: Profile | ProfileRecord | Path | str) -> str:
    """Canonical manifest text describing how ``profile`` was produced."""
    if isinstance(profile, Profile):
        record = profile.record
    elif isinstance(profile, ProfileRecord):
        record = profile
    else:
        record = load_profile(Path(profile)).record
    prov = record.provenance
    if prov is None or not prov.commit:
        raise MissingProvenanceError("profile carries no provenance record")
    return Manifest(prov.commit, prov.specs, prov.transformations).to_text()


def deploy(
    collection: PackageCollection,
    specs: Sequence[str],
    transformations: TransformationSpec,
    store: Store,
    jobs: int = 4,
):
    """Transform, build and profile ``specs``; returns (profile, rewritten graph)."""
    rewritten = apply_transformations(collection, specs, transformations)
    graph = rewritten.graph
    store.build_closure(graph.root_derivations(), graph, jobs=jobs)
    provenance = Provenance(collection.revision, tuple(specs), transformations)
    profile = create_profile(store, graph, provenance)
    return profile, rewritten


def replay_manifest(
    manifest: Manifest, store: Store, channel: Channel | None = None, jobs: int = 4
) -> Profile:
    if manifest.format != MANIFEST_FORMAT:
        raise ManifestFormatError(f"unsupported manifest format {manifest.format!r}")
    channel = channel or Channel()
    collection = channel.load_revision(manifest.commit)
    profile, _ = deploy(collection, manifest.specs, manifest.transformations, store, jobs)
    return profile
