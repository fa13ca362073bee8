import numpy as np
import pytest

from groupemo import autodiff as ad
from groupemo.data import SyntheticSpec, generate_synthetic_dataset
from groupemo.gradcheck import micro_config, micro_lexicons


@pytest.fixture
def f64():
    with ad.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """12/6/6 separable bundles at width 8 with 2 scene scales."""
    root = tmp_path_factory.mktemp("tiny")
    spec = SyntheticSpec(n_train=12, n_val=6, n_test=6, dim=8, scales=2, seed=3)
    generate_synthetic_dataset(spec, root)
    return root


@pytest.fixture
def tiny_config(tiny_data, tmp_path):
    return micro_config(hidden=8, heads=2, fusion_depth=1, epochs=2, precision="f32", dropout=0.1,
                        data=str(tiny_data), out=str(tmp_path / "run"))


@pytest.fixture
def lexicons5():
    return micro_lexicons(5)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line for an acceptance criterion."""
    state = {"name": request.node.name.removeprefix("test_"), "detail": ""}
    yield state
    outcome = getattr(request.node, "rep_call", None)
    passed = outcome is not None and outcome.passed
    line = f"{'PASS' if passed else 'FAIL'}  {state['name']}  {state['detail']}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
