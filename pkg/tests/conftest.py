import numpy as np
import pytest

from mgprecode.scenario import ChannelRealization, build_scenario

DESK = dict(N=25, M=4, k=4, k_bar=2)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, rank=None):
    Z = crandn(rng, n, rank or n)
    return Z @ Z.conj().T


def random_semi_unitary(rng, n, k):
    Q, _ = np.linalg.qr(crandn(rng, n, k))
    return Q


def random_channel(rng, M, k, n, N=None, disjoint=False):
    """Gaussian channel with random (possibly overlapping) feed sets."""
    N = N or (M * n if disjoint else n + 2)
    if disjoint:
        perm = rng.permutation(N)
        sets = tuple(np.sort(perm[m * n:(m + 1) * n]) for m in range(M))
    else:
        sets = tuple(np.sort(rng.choice(N, size=n, replace=False)) for _ in range(M))
    H = crandn(rng, M * k, N)
    return ChannelRealization(H_tilde=H, feed_sets=sets, k=k, user_positions=np.zeros((M * k, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk10():
    return build_scenario(dict(DESK, n=10))


@pytest.fixture(scope="session")
def desk6():
    return build_scenario(dict(DESK, n=6))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record (and print) one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append((number, line))
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
