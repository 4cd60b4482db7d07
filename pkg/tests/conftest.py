import pytest

from safeadapt.scenario import Scenario, build_benchmark, builtin_scenarios


def short_scenario(problem: int = 2, **overrides) -> Scenario:
    """A fast variant of the built-in scenarios for mechanics-level tests:
    3 s horizon, 2 s approach, everything else at the shipped values."""
    base = dict(
        name=f"short_p{problem}",
        problem=problem,
        horizon=3.0,
        traj_settle=2.0,
    )
    if problem == 1:
        base["mass_hat0"] = None
    base.update(overrides)
    scn = Scenario(**base)
    scn.validate()
    return scn


@pytest.fixture(scope="session")
def bench_p1():
    return build_benchmark(builtin_scenarios()["default_p1"])


@pytest.fixture(scope="session")
def bench_p2():
    return build_benchmark(builtin_scenarios()["default_p2"])


# ---------------------------------------------------------------------------
# acceptance reporting: tests in test_acceptance.py record one line per
# criterion; the lines are echoed in the terminal summary so the pass/fail
# status of every criterion is visible in one block regardless of capture.

def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture(scope="session")
def criterion_line(request):
    lines = request.config._criterion_lines

    def record(text: str) -> None:
        lines.append(text)
        print(text)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
