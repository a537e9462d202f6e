import numpy as np
import pytest
from hypothesis import settings

# fixed example sequence so a given checkout always runs the same cases
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

from fedblur.nn import MlpModel
from fedblur.params import ParamVector


def random_mlp(rng, sizes=None, activation="relu", loss="cross_entropy"):
    if sizes is None:
        depth = int(rng.integers(1, 3))
        sizes = [int(rng.integers(2, 9))] + [int(rng.integers(3, 17)) for _ in range(depth)] + [int(rng.integers(2, 6))]
    model = MlpModel(sizes, activation, loss)
    model.init_params(int(rng.integers(2**31)))
    return model


def random_batch(rng, model, n):
    X = rng.normal(size=(n, model.n_inputs))
    if model.loss == "cross_entropy":
        y = rng.integers(0, model.n_outputs, size=n)
    else:
        y = rng.normal(size=(n, model.n_outputs))
    return X, y


def vec(*layers):
    """ParamVector with layers named L0, L1, ... from plain sequences."""
    return ParamVector.from_layers([(f"L{i}", np.asarray(v, dtype=float)) for i, v in enumerate(layers)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
