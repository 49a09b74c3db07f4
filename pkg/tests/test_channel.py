import json
import os
from dataclasses import replace

import pytest

from helpers import make_collection
from pkgtune.channel import (
    Channel,
    Manifest,
    deploy,
    export_manifest,
    load_revision,
    replay_manifest,
    revision_id,
)
from pkgtune.errors import (
    ManifestFormatError,
    MissingProvenanceError,
    PackageParseError,
    UnknownRevisionError,
)
from pkgtune.model import lower_graph
from pkgtune.profile import ProfileRecord, load_profile
from pkgtune.store import Store
from pkgtune.transform import TransformationSpec, parse_transformations


def test_aliases_resolve(channel):
    r1, r2 = channel.resolve("r1"), channel.resolve("r2")
    assert r1 != r2
    assert channel.resolve("latest") == r2
    assert channel.resolve(r1[:6]) == r1
    assert channel.revisions() == sorted([r1, r2])


def test_revision_content_hash_matches_directory_name(channel):
    for commit in channel.revisions():
        assert revision_id(channel.root / commit) == commit


def test_r1_has_thirteen_packages(r1):
    assert len(r1.packages) == 13
    assert {"hello", "minikernel-bench", "openblas"} <= set(r1.packages)


def test_r2_differs_from_r1_only_in_hello(r1, r2):
    changed = {n for n in r1.packages if r1.get(n) != r2.get(n)}
    assert changed == {"hello"}


def test_unknown_revision_lists_available(channel):
    with pytest.raises(UnknownRevisionError) as info:
        channel.resolve("deadbeefdeadbeef")
    assert "r1" in str(info.value) and "r2" in str(info.value)


def test_short_prefix_is_not_enough(channel):
    with pytest.raises(UnknownRevisionError):
        channel.resolve(channel.resolve("r1")[:3])


def test_load_revision_helper(r1):
    coll = load_revision("r1")
    assert coll.revision == r1.revision


def test_malformed_package_file_in_channel(make_channel):
    chan = make_channel({"r1": make_collection({"a": []})})
    commit = chan.resolve("r1")
    (chan.root / commit / "packages" / "a.pkg.json").write_text("{ not json")
    with pytest.raises(PackageParseError):
        chan.load_revision("r1")


def test_modified_revision_is_rejected(make_channel):
    chan = make_channel({"r1": make_collection({"a": []})})
    commit = chan.resolve("r1")
    pkg = chan.root / commit / "packages" / "a.pkg.json"
    obj = json.loads(pkg.read_text())
    obj["version"] = "9.9"
    pkg.write_text(json.dumps(obj))
    with pytest.raises(PackageParseError, match="modified"):
        chan.load_revision(commit)


def test_manifest_text_is_canonical():
    spec = parse_transformations(["--tune=skylake"])
    m = Manifest("293b4063c1fb49b0", ("minikernel-bench",), spec)
    assert m.to_text() == (
        '{\n  "commit": "293b4063c1fb49b0",\n  "format": 1,\n'
        '  "specs": [\n    "minikernel-bench"\n  ],\n'
        '  "transformations": [\n    {\n      "argument": "skylake",\n'
        '      "kind": "tune"\n    }\n  ]\n}\n'
    )
    assert Manifest.from_text(m.to_text()) == m


@pytest.mark.parametrize("text,match", [
    ("[]", "JSON object"),
    ("nope", "valid JSON"),
    ('{"format": 2, "commit": "x", "specs": [], "transformations": []}', "format 2"),
    ('{"format": 1, "specs": [], "transformations": []}', "commit"),
    ('{"format": 1, "commit": 3, "specs": [], "transformations": []}', "wrong type"),
])
def test_manifest_rejects(text, match):
    with pytest.raises(ManifestFormatError, match=match):
        Manifest.from_text(text)


def test_deploy_export_and_replay(r1, channel, tmp_path):
    spec = parse_transformations(["--tune=skylake"])
    store = Store(tmp_path / "first")
    profile, rewritten = deploy(r1, ["minikernel-bench"], spec, store)
    text = export_manifest(profile.path)
    assert export_manifest(profile) == text
    manifest = Manifest.from_text(text)
    assert manifest.commit == r1.revision

    fresh = Store(tmp_path / "second")
    replayed = replay_manifest(manifest, fresh, channel)
    assert replayed.record.roots == profile.record.roots
    original = {d.store_path.render() for d in rewritten.graph.closure()}
    rebuilt = {f"store/{p}/" for p in os.listdir(fresh.root / "store") if not p.startswith(".")}
    assert rebuilt == original


def test_profile_bin_links_resolve(r1, tmp_path):
    store = Store(tmp_path / "root")
    profile, _ = deploy(r1, ["hello"], TransformationSpec(), store)
    link = profile.path / "bin" / "hello"
    assert link.is_symlink() and not os.path.isabs(os.readlink(link))
    assert link.resolve().is_file()
    env = profile.environment({"PATH": "/usr/bin"})
    assert env["PATH"] == f"{profile.path / 'bin'}{os.pathsep}/usr/bin"
    assert load_profile(profile.path).record == profile.record


def test_revision_changes_closure(r1, r2, tmp_path):
    g1 = lower_graph(r1, ["hello"])
    g2 = lower_graph(r2, ["hello"])
    assert g1.roots != g2.roots
    assert g1.digest_of("libc") == g2.digest_of("libc")


def test_missing_provenance():
    with pytest.raises(MissingProvenanceError):
        export_manifest(ProfileRecord(("store/x-a-1/",), None))


def test_non_profile_directory(tmp_path):
    with pytest.raises(MissingProvenanceError):
        export_manifest(tmp_path)


def test_replay_unknown_commit(tmp_path, channel):
    m = Manifest("0000000000000000", ("hello",))
    with pytest.raises(UnknownRevisionError):
        replay_manifest(m, Store(tmp_path / "s"), channel)


def test_replay_future_format(tmp_path, channel):
    m = replace(Manifest(channel.resolve("r1"), ("hello",)), format=2)
    with pytest.raises(ManifestFormatError):
        replay_manifest(m, Store(tmp_path / "s"), channel)


def test_channel_without_aliases(tmp_path):
    from helpers import write_collection
    root = tmp_path / "chan"
    tmp = write_collection(make_collection({"a": []}), root / "staging")
    commit = revision_id(tmp)
    tmp.rename(root / commit)
    chan = Channel(root)
    assert chan.latest() == commit
    assert chan.load_revision(commit).revision == commit
