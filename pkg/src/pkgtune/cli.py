"""Command-line interface.

Exit codes: 0 success, 1 user error, 2 build failure, 3 incompatible ISA.
Machine-readable output (store paths, manifests, archive paths) goes to
standard output; progress and the tuning banner go to standard error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import shutil
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .channel import Channel, Manifest, deploy, export_manifest
from .cpu import FeatureSet, detect_microarch, read_host_features
from .errors import PkgTuneError, TransformationUsageError
from .model import digest32
from .pack import SUPPORTED_FORMATS, pack, write_atomic
from .profile import Profile, load_profile
from .runner import is_artifact, run_artifact
from .store import Store, verify_reproducibility
from .transform import (
    TransformationSpec,
    apply_transformations,
    is_transformation_option,
    parse_transformations,
)

PROG = "pkgtune"
COMMANDS = ("build", "env", "pack", "time-machine", "describe", "run")
TRANSFORMING = ("build", "env", "pack")

log = logging.getLogger(PROG)


class UsageError(PkgTuneError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def default_store_root() -> Path:
    if os.environ.get("PKGTUNE_ROOT"):
        return Path(os.environ["PKGTUNE_ROOT"])
    data = os.environ.get("XDG_DATA_HOME") or Path.home() / ".local" / "share"
    return Path(data) / PROG


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Reproducible, CPU-tunable package builds.")
    parser.add_argument("--store", type=Path, default=None, help="store root directory")
    parser.add_argument("--channel", type=Path, default=None, help="channel directory")
    parser.add_argument("--cpuinfo", type=Path, default=None,
                        help="read host CPU flags from this file instead of /proc/cpuinfo")
    parser.add_argument("-j", "--jobs", type=int, default=4)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def deploy_opts(p):
        p.add_argument("specs", nargs="*")
        p.add_argument("--commit", default=None)
        p.add_argument("-m", "--manifest", type=Path, default=None)

    p = sub.add_parser("build", help="build packages and print their store paths")
    deploy_opts(p)
    p.add_argument("--rounds", type=int, default=None,
                   help="build N times in fresh stores and compare outputs")

    p = sub.add_parser("env", help="build packages into a profile and run a command in it")
    deploy_opts(p)

    p = sub.add_parser("pack", help="write a deterministic archive of the closure")
    deploy_opts(p)
    p.add_argument("-f", "--format", default="tar")
    p.add_argument("-o", "--output", type=Path, default=None)

    p = sub.add_parser("time-machine", help="run a command against a pinned revision")
    p.add_argument("--commit", default=None)

    p = sub.add_parser("describe", help="show channel revisions or a profile's provenance")
    p.add_argument("--profile", type=Path, default=None)
    p.add_argument("--export-manifest", type=Path, default=None, metavar="PROFILE")

    p = sub.add_parser("run", help="run a built artifact")
    p.add_argument("artifact")
    p.add_argument("args", nargs=argparse.REMAINDER)
    return parser


@dataclass
class Context:
    store: Store
    channel: Channel
    cpuinfo: Path | None
    jobs: int
    out: object
    err: object
    forced_commit: str | None = None

    def host_features(self) -> FeatureSet:
        return read_host_features(self.cpuinfo)


def split_argv(argv: Sequence[str]):
    """Separate transformation options from the rest of the command line.

    Returns (remaining args, transformation options, trailing command).
    Transformation options are only recognized after a transforming
    command name and before ``--``.
    """
    argv = list(argv)
    if "--" in argv:
        i = argv.index("--")
        head, tail = argv[:i], argv[i + 1:]
    else:
        head, tail = argv, []
    cmd_index = next((i for i, a in enumerate(head) if a in COMMANDS), None)
    if cmd_index is None or head[cmd_index] not in TRANSFORMING:
        return head, [], tail
    rest, options = head[:cmd_index + 1], []
    it = iter(head[cmd_index + 1:])
    for arg in it:
        if is_transformation_option(arg):
            options.append(arg)
            if arg == "--with-input":
                nxt = next(it, None)
                if nxt is None:
                    raise TransformationUsageError("--with-input requires OLD=NEW")
                options.append(nxt)
        else:
            rest.append(arg)
    return rest, options, tail


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, options, tail = split_argv(argv)
        args = build_parser().parse_args(rest)
        _configure_logging(err, args.verbose)
        ctx = Context(
            store=Store(args.store or default_store_root()),
            channel=Channel(args.channel),
            cpuinfo=args.cpuinfo,
            jobs=args.jobs,
            out=out,
            err=err,
        )
        return dispatch(ctx, args, options, tail, argv)
    except PkgTuneError as exc:
        print(f"{PROG}: error: {exc}", file=err)
        log_path = getattr(exc, "log_path", None)
        if log_path:
            print(f"{PROG}: build log: {log_path}", file=err)
        return exc.exit_code


def _configure_logging(stream, verbose: bool) -> None:
    logger = logging.getLogger(PROG)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream)
    handler.setFormatter(logging.Formatter(f"{PROG}: %(levelname)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO if verbose else logging.WARNING)
    logger.propagate = False


def dispatch(ctx: Context, args, options, tail, argv) -> int:
    if args.command is None:
        raise UsageError(f"{PROG}: a command is required ({', '.join(COMMANDS)})")
    if args.command == "time-machine":
        return cmd_time_machine(ctx, args.commit, tail)
    if args.command == "describe":
        return cmd_describe(ctx, args)
    if args.command == "run":
        return cmd_run_artifact(ctx, args.artifact, list(args.args) + tail)
    if ctx.forced_commit is not None:
        if args.commit is not None and ctx.channel.resolve(args.commit) != ctx.forced_commit:
            raise UsageError("--commit conflicts with the time-machine commit")
        args.commit = ctx.forced_commit
    spec = parse_transformations(options)
    if args.command == "build":
        if tail:
            raise UsageError("build takes no trailing command")
        return cmd_build(ctx, args, spec)
    if args.command == "env":
        return cmd_env(ctx, args, spec, tail)
    if tail:
        raise UsageError("pack takes no trailing command")
    return cmd_pack(ctx, args, spec)


def resolve_request(ctx: Context, args, spec: TransformationSpec):
    """Collection, specs and a fully concrete transformation spec."""
    if args.manifest is not None:
        if args.specs or len(spec) or args.commit:
            raise UsageError("--manifest cannot be combined with specs, transformations or --commit")
        manifest = Manifest.from_file(args.manifest)
        collection = ctx.channel.load_revision(manifest.commit)
        specs, spec = list(manifest.specs), manifest.transformations
    else:
        if not args.specs:
            raise UsageError("no packages given")
        commit = ctx.channel.resolve(args.commit) if args.commit else ctx.channel.latest()
        collection = ctx.channel.load_revision(commit)
        specs = list(args.specs)
    if spec.has_auto:
        march = detect_microarch(ctx.host_features())
        spec = spec.resolve_auto(march.name)
    march = spec.effective_march()
    if march is not None:
        print(f"{PROG}: tuning for CPU {march}", file=ctx.err)
    return collection, specs, spec


def cmd_build(ctx: Context, args, spec: TransformationSpec) -> int:
    collection, specs, spec = resolve_request(ctx, args, spec)
    graph = apply_transformations(collection, specs, spec).graph
    if args.rounds is not None:
        status = 0
        for drv in graph.root_derivations():
            report = verify_reproducibility(drv, graph, args.rounds, workdir=ctx.store.root / "tmp")
            print(report.summary(), file=ctx.err)
            if not report.identical:
                status = 2
        if status:
            return status
    ctx.store.build_closure(graph.root_derivations(), graph, jobs=ctx.jobs)
    for drv in graph.root_derivations():
        print(drv.store_path.render(), file=ctx.out)
    return 0


def cmd_env(ctx: Context, args, spec: TransformationSpec, command: Sequence[str]) -> int:
    collection, specs, spec = resolve_request(ctx, args, spec)
    profile, _ = deploy(collection, specs, spec, ctx.store, jobs=ctx.jobs)
    if not command:
        print(profile.path, file=ctx.out)
        return 0
    return spawn(ctx, profile, command)


def spawn(ctx: Context, profile: Profile, command: Sequence[str]) -> int:
    """Run ``command`` with the profile on the search path.

    Built artifacts are run by the in-process interpreter; anything else is
    an ordinary subprocess.
    """
    env = profile.environment()
    exe = shutil.which(command[0], path=env.get("PATH"))
    if exe is None:
        raise UsageError(f"command not found: {command[0]}")
    exe_path = Path(exe)
    if is_artifact(exe_path):
        store_dir = exe_path.resolve().parent.parent
        output = run_artifact(store_dir, command[1:], ctx.host_features(), exe_path.name)
        ctx.out.write(output)
        ctx.out.flush()
        return 0
    ctx.out.flush()
    return subprocess.run([exe, *command[1:]], env=env).returncode


def cmd_pack(ctx: Context, args, spec: TransformationSpec) -> int:
    if args.format not in SUPPORTED_FORMATS:
        pack(ctx.store, [], [], args.format)
    collection, specs, spec = resolve_request(ctx, args, spec)
    march = spec.effective_march()
    if march is not None and march != "x86-64":
        print(f"{PROG}: warning: packing code tuned for {march}; "
              "it will not run on CPUs lacking its features", file=ctx.err)
    graph = apply_transformations(collection, specs, spec).graph
    ctx.store.build_closure(graph.root_derivations(), graph, jobs=ctx.jobs)
    manifest = Manifest(collection.revision, tuple(specs), spec).to_text()
    data = pack(ctx.store, graph.closure(), graph.root_derivations(), args.format,
                {"manifest.json": manifest.encode()})
    if args.output is not None:
        target = args.output
    else:
        name = "-".join(specs)
        target = ctx.store.root / "var" / "packs" / (
            f"{digest32(hashlib.sha256(data).hexdigest())}-{name}.tar")
    write_atomic(target, data)
    print(target, file=ctx.out)
    return 0


def cmd_time_machine(ctx: Context, commit: str | None, command: Sequence[str]) -> int:
    if not commit:
        raise UsageError("time-machine requires --commit")
    if not command:
        raise UsageError("time-machine requires a command after '--'")
    if command[0] not in TRANSFORMING:
        raise UsageError(f"time-machine can run {', '.join(TRANSFORMING)}, not '{command[0]}'")
    ctx.forced_commit = ctx.channel.resolve(commit)
    rest, options, tail = split_argv(command)
    args = build_parser().parse_args(rest)
    return dispatch(ctx, args, options, tail, command)


def cmd_describe(ctx: Context, args) -> int:
    if args.export_manifest is not None:
        ctx.out.write(export_manifest(args.export_manifest))
        return 0
    if args.profile is not None:
        ctx.out.write(load_profile(args.profile).record.to_text())
        return 0
    aliases = {c: a for a, c in ctx.channel.aliases().items() if a != "latest"}
    latest = ctx.channel.latest()
    for commit in ctx.channel.revisions():
        tag = aliases.get(commit, "")
        mark = " (latest)" if commit == latest else ""
        print(f"{commit} {tag}{mark}".rstrip(), file=ctx.out)
    return 0


def cmd_run_artifact(ctx: Context, artifact: str, args: Sequence[str]) -> int:
    path = Path(artifact)
    if not path.exists():
        path = ctx.store.root / artifact
    if not path.exists():
        raise UsageError(f"no such artifact: {artifact}")
    program = None
    if path.is_file():
        program = path.name
        path = path.resolve().parent.parent
    output = run_artifact(path, args, ctx.host_features(), program)
    ctx.out.write(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
