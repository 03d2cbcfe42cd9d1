import numpy as np
import pytest

from robust_unlearning.toy_models import MLP, TABULAR, Sample, ToyModel, init_model


def random_sample(rng, V, prompt_len=None, target_len=None, sid=0):
    prompt_len = rng.integers(0, 4) if prompt_len is None else prompt_len
    target_len = rng.integers(1, 5) if target_len is None else target_len
    return Sample(sid, tuple(rng.integers(0, V, prompt_len).tolist()),
                  tuple(rng.integers(0, V, target_len).tolist()))


def random_model(rng, variant, V=4, order=2, scale=1.0):
    """Small model with non-trivial (not near-uniform) parameters."""
    seed = int(rng.integers(0, 2**31))
    if variant == TABULAR:
        return init_model(TABULAR, V, order, seed=seed, scale=scale)
    return init_model(MLP, V, order, seed=seed, embed_dim=3, hidden_dim=4, scale=scale)


def forced_tabular(V, order, token):
    """Tabular model whose every context puts its mass on ``token``."""
    table = np.zeros(((V + 1) ** order, V))
    table[:, token] = 50.0
    return ToyModel(TABULAR, V, order, table.ravel())


def zero_tabular(V=4, order=2):
    return ToyModel(TABULAR, V, order, np.zeros((V + 1) ** order * V))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# (criterion number, title, passed, detail) rows filled in by test_acceptance
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
