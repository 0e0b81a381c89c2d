import time

import numpy as np
import pytest

from dyadface import cgan, clstm
from dyadface.corpus import SynthConfig, one_hot, synth, synthetic_pdm
from dyadface.dictionary import build_dictionary

ACCEPTANCE_LINES = []

TOY_MEANS = np.array([[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, -0.5, 0.5]])
TOY_SDS = np.array([[0.5, 0.3, 0.4, 0.6], [0.4, 0.5, 0.3, 0.3]])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number: int, name: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} :: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def random_params(pdm, rng):
    """Pose and expression inside the range a face camera would see."""
    v = np.zeros(pdm.dim)
    v[0] = rng.uniform(70, 110)
    v[1:4] = rng.uniform(-0.5, 0.5, 3)
    v[4:6] = rng.uniform(100, 156, 2)
    v[6:] = rng.uniform(-2, 2, pdm.m) * np.sqrt(pdm.variances)
    return v


@pytest.fixture(scope="session")
def pdm():
    return synthetic_pdm(10, 0)


@pytest.fixture(scope="session")
def default_corpus():
    return synth(SynthConfig())


@pytest.fixture(scope="session")
def default_dictionary(default_corpus):
    return build_dictionary(default_corpus, min_size=100, seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    return synth(SynthConfig(n_sequences=24, seq_len=120, seed=3))


@pytest.fixture(scope="session")
def small_dictionary(small_corpus):
    return build_dictionary(small_corpus, min_size=20, seed=0)


@pytest.fixture(scope="session")
def heldout_corpus():
    return synth(SynthConfig(n_sequences=40, seed=0, start_index=100_000))


@pytest.fixture(scope="session")
def trained_lstms(default_corpus):
    """C-LSTMs (window 20) trained on the default corpus for seeds 0, 1, 2."""
    out = {}
    for seed in range(3):
        start = time.perf_counter()
        config = clstm.CLstmConfig(d=default_corpus.d, hidden_dim=64, window=20, epochs=20, seed=seed)
        model, report = clstm.train(clstm.CLstmModel.init(config), default_corpus.sequences)
        out[seed] = (model, report, time.perf_counter() - start)
    return out


def toy_data(rng, n=4000):
    classes = rng.integers(2, size=n)
    x = np.stack([one_hot(c) for c in classes])
    y = TOY_MEANS[classes] + TOY_SDS[classes] * rng.normal(size=(n, 4))
    return x, y


@pytest.fixture(scope="session")
def toy_gans():
    """CGANs trained 5000 steps on the two-class gaussian toy, seeds 0, 1, 2."""
    out = {}
    for seed in range(3):
        start = time.perf_counter()
        rng = np.random.default_rng([seed, 7])
        x, y = toy_data(rng)
        model = cgan.CGanModel.init(cgan.CGanConfig(d=4, seed=seed))
        history = cgan.train(model, x, y, 5000, rng)
        out[seed] = (model, history, time.perf_counter() - start)
    return out


def toy_errors(model):
    """Per condition: (max abs mean error, relative covariance-trace error)."""
    errs = []
    for c in range(2):
        g = cgan.generate(model, one_hot(c), count=20000, rng=np.random.default_rng(1))
        mean_err = float(np.abs(g.mean(axis=0) - TOY_MEANS[c]).max())
        trace = float(np.trace(np.cov(g.T)))
        errs.append((mean_err, abs(trace / np.sum(TOY_SDS[c] ** 2) - 1.0)))
    return errs


def fd_relative_error(loss_fn, params: dict, grads: dict, eps: float = 1e-5) -> float:
    """Worst per-array relative error of ``grads`` against central differences of ``loss_fn``."""
    worst = 0.0
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat, out = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_fn()
            flat[i] = keep - eps
            down = loss_fn()
            flat[i] = keep
            out[i] = (up - down) / (2 * eps)
        scale = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-8)
        worst = max(worst, float(np.linalg.norm(num - grads[name]) / scale))
    return worst


def lstm_fd_instance(seed: int):
    """Random 5-step, hidden-8 C-LSTM problem: (model, inputs, targets)."""
    rng = np.random.default_rng([seed, 11])
    model = clstm.CLstmModel.init(clstm.CLstmConfig(d=3, hidden_dim=8, window=5, seed=seed))
    for arr in model.params.values():
        arr += 0.3 * rng.normal(size=arr.shape)
    inputs = rng.normal(size=(5, 2, model.config.input_dim))
    targets = rng.normal(size=(5, 2, 3))
    return model, inputs, targets


def gan_fd_instance(seed: int):
    """Small CGAN (each net under 200 parameters) with one batch: (model, x, y, z)."""
    rng = np.random.default_rng([seed, 12])
    model = cgan.CGanModel.init(cgan.CGanConfig(d=2, z_dim=2, hidden=8, n_hidden=1, seed=seed))
    x = rng.random((6, 8))
    return model, x, rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
