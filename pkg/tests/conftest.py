import numpy as np
import pytest

from mmdtest import GaussianParams


def random_psd(rng, d, rank=None, scale=1.0):
    rank = d if rank is None else rank
    a = rng.standard_normal((d, rank))
    return scale * a @ a.T / max(rank, 1)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_params(rng, d, scale=1.0):
    return GaussianParams(rng.standard_normal(d), random_psd(rng, d, scale=scale))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# Acceptance verdicts, echoed as one line each in the terminal summary.
ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
