#!/usr/bin/env python3
"""Independent digest oracle for the fixture channel.

Re-derives every derivation digest straight from the package JSON files
using only the documented canonical form, without importing pkgtune.
Used once to freeze tests/golden/*.json and again live by the test suite.

    python drv_oracle.py CHANNEL_REVISION_DIR [--march NAME] [--roots a,b]
"""
import argparse
import base64
import hashlib
import json
import sys
from pathlib import Path


def atom(s):
    b = s.encode("utf-8")
    return b"%d:%s" % (len(b), b)


def value(v):
    if isinstance(v, str):
        return atom(v)
    if isinstance(v, dict):
        return b"(" + b"".join(b"(" + atom(k) + atom(v[k]) + b")" for k in sorted(v)) + b")"
    return b"(" + b"".join(atom(x) for x in v) + b")"


def step_bytes(step):
    keys = sorted(k for k in step if k != "op")
    body = b"".join(b"(" + atom(k) + value(step[k]) + b")" for k in keys)
    return b"(" + atom(step["op"]) + b"(" + body + b"))"


def d32(hexdigest):
    return base64.b32encode(bytes.fromhex(hexdigest)).decode().lower().rstrip("=")[:32]


def load(revdir):
    pkgs = {}
    for f in sorted(Path(revdir, "packages").glob("*.pkg.json")):
        p = json.loads(f.read_text())
        pkgs[p["name"]] = p
    return pkgs


def digests(pkgs, march=None, system="x86_64-linux"):
    memo = {}

    def go(name):
        if name in memo:
            return memo[name]
        p = pkgs[name]
        deps = {d: go(d) for d in p.get("inputs", [])}

        def sel(s):
            if not s.startswith("@"):
                return s
            dep, _, rest = s[1:].partition("/")
            return "inputs/" + d32(deps[dep]) + "/" + rest

        steps = []
        for st in p["recipe"]:
            st = dict(st)
            if st["op"] == "fetch-source":
                st["name"] = p["source"]["name"]
            elif st["op"] == "compile":
                st["source"] = sel(st["source"])
            elif st["op"] == "link":
                st["objects"] = [sel(o) for o in st["objects"]]
            elif st["op"] == "install":
                st["paths"] = {k: sel(v) for k, v in st["paths"].items()}
            steps.append(st)
        env = {"MARCH": march} if (march and p.get("tunable")) else {}
        data = b"drv1(" + atom("name") + atom(p["name"] + "-" + p["version"])
        data += atom("builder") + b"(" + atom("minirecipe-v1") + b"(" + b"".join(step_bytes(s) for s in steps) + b"))"
        data += atom("input-drvs") + b"(" + b"".join(b"(" + atom(d) + atom("out") + b")" for d in sorted(set(deps.values()))) + b")"
        data += atom("env") + b"(" + b"".join(b"(" + atom(k) + atom(env[k]) + b")" for k in sorted(env)) + b")"
        data += atom("system") + atom(system)
        data += atom("source-hash") + atom(p["source"]["sha256"])
        data += b")"
        memo[name] = hashlib.sha256(data).hexdigest()
        return memo[name]

    for name in pkgs:
        go(name)
    return memo


def topo_order(pkgs, dig):
    """Dependencies first; among ready nodes the smallest digest first."""
    emitted, order = set(), []
    while len(order) < len(pkgs):
        ready = [n for n in pkgs if n not in emitted and all(d in emitted for d in pkgs[n].get("inputs", []))]
        n = min(ready, key=lambda x: dig[x])
        emitted.add(n)
        order.append(n)
    return order


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("revdir")
    ap.add_argument("--march")
    args = ap.parse_args(argv)
    pkgs = load(args.revdir)
    dig = digests(pkgs, args.march)
    out = {
        "digests": dig,
        "store_paths": {n: "store/%s-%s-%s/" % (d32(d), n, pkgs[n]["version"]) for n, d in dig.items()},
        "closure_order": topo_order(pkgs, dig),
    }
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
