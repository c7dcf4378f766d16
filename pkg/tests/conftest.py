from __future__ import annotations

from pathlib import Path

import pytest

from octoloop.suite import load_suite

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def suite():
    return load_suite()


@pytest.fixture(scope="session")
def tasks(suite):
    return {t.key: t for t in suite}


@pytest.fixture
def bacon(tasks):
    return tasks["bacon"]


@pytest.fixture
def bacon_world(bacon):
    return bacon.world(0)


def obj(oid, pos, size="small", caps=(), ground=None, container=False, states=None):
    """Compact object entry for hand-built scenes."""
    d = {"id": oid, "category": oid.rsplit("_", 1)[0], "position": list(pos), "size_class": size,
         "capabilities": list(caps), "container": container,
         "on_ground": size == "large" if ground is None else ground}
    if states is not None:
        d["states"] = states
    return d


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = []
    for status in ("passed", "failed"):
        for rep in terminalreporter.stats.get(status, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                rows.append((props["criterion"], status.upper()[:4], props.get("title", ""), props.get("seconds")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, title, secs in sorted(rows):
        took = f" ({secs:.2f} s)" if secs is not None else ""
        terminalreporter.write_line(f"[{status}] criterion {num}: {title}{took}")
