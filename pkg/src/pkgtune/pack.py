"""Deterministic tar archives of a built closure."""

from __future__ import annotations

import io
import tarfile
from pathlib import Path
from typing import Mapping, Sequence

from .errors import UnsupportedFormatError
from .model import Derivation
from .store import Store, mode_for, read_tree

SUPPORTED_FORMATS = ("tar",)


def _info(name: str, kind: bytes, mode: int, size: int = 0, linkname: str = "") -> tarfile.TarInfo:
    info = tarfile.TarInfo(name)
    info.type = kind
    info.mode = mode
    info.size = size
    info.linkname = linkname
    info.mtime = 0
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    return info


def archive_entries(
    store: Store,
    members: Sequence[Derivation],
    roots: Sequence[Derivation],
    extra_files: Mapping[str, bytes] | None = None,
) -> dict[str, tuple]:
    """Map archive path -> (kind, payload) for every entry of the pack."""
    entries: dict[str, tuple] = {}

    def add_dirs(path: str) -> None:
        parts = path.split("/")[:-1]
        for i in range(1, len(parts) + 1):
            entries.setdefault("/".join(parts[:i]), ("dir", None))

    for drv in members:
        base = f"store/{drv.store_path.basename}"
        entries[base] = ("dir", None)
        add_dirs(base)
        for rel, data in read_tree(store.path(drv.store_path)).items():
            name = f"{base}/{rel}"
            add_dirs(name)
            entries[name] = ("file", (data, mode_for(rel)))
    for drv in roots:
        bindir = store.path(drv.store_path) / "bin"
        if bindir.is_dir():
            for exe in sorted(bindir.iterdir()):
                link = f"bin/{exe.name}"
                if link not in entries:
                    add_dirs(link)
                    target = f"../store/{drv.store_path.basename}/bin/{exe.name}"
                    entries[link] = ("symlink", target)
    for name, data in (extra_files or {}).items():
        add_dirs(name)
        entries[name] = ("file", (data, 0o644))
    return entries


def make_tarball(entries: Mapping[str, tuple]) -> bytes:
    """Tar bytes with sorted entries, mtime 0, uid/gid 0 and no pax headers."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name in sorted(entries):
            kind, payload = entries[name]
            if kind == "dir":
                tar.addfile(_info(name, tarfile.DIRTYPE, 0o755))
            elif kind == "symlink":
                tar.addfile(_info(name, tarfile.SYMTYPE, 0o777, linkname=payload))
            else:
                data, mode = payload
                tar.addfile(_info(name, tarfile.REGTYPE, mode, len(data)), io.BytesIO(data))
    return buf.getvalue()


def pack(
    store: Store,
    members: Sequence[Derivation],
    roots: Sequence[Derivation],
    fmt: str = "tar",
    extra_files: Mapping[str, bytes] | None = None,
) -> bytes:
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(
            f"unsupported pack format '{fmt}'; supported formats: {', '.join(SUPPORTED_FORMATS)}"
        )
    return make_tarball(archive_entries(store, members, roots, extra_files))


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
