import json
import shutil

import pytest

from pkgtune.channel import Channel, revision_id
from pkgtune.store import Store

ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def channel():
    return Channel()


@pytest.fixture(scope="session")
def r1(channel):
    return channel.load_revision("r1")


@pytest.fixture(scope="session")
def r2(channel):
    return channel.load_revision("r2")


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "root")


@pytest.fixture
def make_channel(tmp_path):
    """Create a channel directory from in-memory collections: {alias: coll}."""
    from helpers import write_collection

    def make(revisions):
        root = tmp_path / "channel"
        root.mkdir(exist_ok=True)
        aliases = {}
        for alias, coll in revisions.items():
            tmp = write_collection(coll, root / f"tmp-{alias}")
            commit = revision_id(tmp)
            if (root / commit).exists():
                shutil.rmtree(tmp)
            else:
                tmp.rename(root / commit)
            aliases[alias] = commit
        (root / "aliases.json").write_text(json.dumps(aliases))
        return Channel(root)

    return make


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion."""
    holder = {}

    def record(number, text):
        holder["key"] = (number, text)

    yield record
    if "key" in holder:
        number, text = holder["key"]
        rep = getattr(request.node, "rep_call", None)
        passed = rep is not None and rep.passed
        ACCEPTANCE_RESULTS[number] = ("PASS" if passed else "FAIL", text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")
