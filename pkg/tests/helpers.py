"""Builders for small in-memory collections used across the tests."""

import hashlib
import importlib.util
import json
from pathlib import Path

from pkgtune.model import PackageCollection, PackageDef

HERE = Path(__file__).parent
FIXTURES = HERE.parent / "src" / "pkgtune" / "fixtures"
CPUINFO = FIXTURES / "cpuinfo"


def _load_oracle():
    spec = importlib.util.spec_from_file_location("drv_oracle", HERE / "oracle" / "drv_oracle.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


oracle = _load_oracle()


def pkg_json(name, inputs=(), tunable=False, text=None, flags=("-O2",), version="1.0"):
    data = (text if text is not None else f"/* {name} */\n").encode()
    sha = hashlib.sha256(data).hexdigest()
    objects = [f"build/{name}.o"] + [f"@{d}/lib/lib{d}.a" for d in inputs]
    obj = {
        "name": name,
        "version": version,
        "source": {"name": f"{name}.c", "sha256": sha},
        "inputs": list(inputs),
        "tunable": tunable,
        "recipe": [
            {"op": "fetch-source"},
            {"op": "compile", "source": f"src/{name}.c", "flags": list(flags),
             "output": f"build/{name}.o"},
            {"op": "link", "objects": objects, "artifact": f"lib{name}.a"},
            {"op": "install", "paths": {f"lib/lib{name}.a": f"build/lib{name}.a"}},
            {"op": "emit-meta"},
        ],
    }
    return obj, sha, data


def make_collection(graph, tunable=(), revision="test", texts=None):
    """``graph`` maps package name -> list of input names."""
    packages, blobs = {}, {}
    for name, inputs in graph.items():
        text = (texts or {}).get(name)
        obj, sha, data = pkg_json(name, inputs, name in tunable, text)
        packages[name] = PackageDef.from_json(obj)
        blobs[sha] = data
    return PackageCollection(revision, packages, None, blobs)


def write_collection(coll, root):
    """Write an in-memory collection in the on-disk channel revision layout."""
    root = Path(root)
    (root / "packages").mkdir(parents=True, exist_ok=True)
    (root / "blobs").mkdir(exist_ok=True)
    for pkg in coll.packages.values():
        (root / "packages" / f"{pkg.name}.pkg.json").write_text(
            json.dumps(pkg.to_json(), indent=2, sort_keys=True) + "\n"
        )
        (root / "blobs" / pkg.source.sha256).write_bytes(coll.fetch(pkg.source.sha256))
    return root


def oracle_digests(coll, march=None, tmp=None):
    """Digests for ``coll`` computed by the standalone oracle script."""
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        write_collection(coll, d)
        return oracle.digests(oracle.load(d), march)


def triple_loop(a, b):
    a, b = a.tolist(), b.tolist()
    m, k, n = len(a), len(b), len(b[0]) if b else 0
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(n)] for i in range(m)]
