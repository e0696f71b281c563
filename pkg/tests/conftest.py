import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


def rand64(*shape, g=None, low=-2.0, high=2.0):
    g = g if g is not None else torch.Generator().manual_seed(0)
    return torch.rand(*shape, generator=g, dtype=torch.float64) * (high - low) + low


# --- acceptance summary -------------------------------------------------------

_CRITERIA: dict[str, dict] = {}


def _criterion(item):
    name = getattr(item, "originalname", item.name)
    if item.module.__name__ != "test_acceptance" or not name.startswith("test_c"):
        return None
    return name.split("_")[1].upper()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    key = _criterion(item)
    if key is None or not (report.when == "call" or report.failed or report.skipped):
        return
    entry = _CRITERIA.setdefault(key, {"doc": (item.function.__doc__ or "").strip().splitlines()[0], "runs": {}})
    if entry["runs"].get(item.nodeid) != "failed":
        entry["runs"][item.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        entry = _CRITERIA[key]
        states = list(entry["runs"].values())
        if "failed" in states:
            verdict = "FAIL"
        elif all(s == "skipped" for s in states):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = f" [{states.count('passed')}/{len(states)} cases]" if len(states) > 1 else ""
        doc = entry["doc"][len(key):].strip()
        terminalreporter.write_line(f"{verdict:4} {key}: {doc}{detail}")
