import numpy as np
import pytest

from obigrad.core import Dataset, NuisanceSet, StructuralModel


def scalar_linear_model() -> StructuralModel:
    """g(omega, z) = omega * z with q = d = 1."""
    return StructuralModel(
        g=lambda w, z: z[:, :1] * w[0],
        dg=lambda w, z: z[:, None, :1] * np.ones((1, 1, 1)),
        d=1,
        q=1,
        name="scalar_linear",
        affine=True,
    )


def constant_nuisances(h, j, m) -> NuisanceSet:
    h, j, m = (np.asarray(v, dtype=float) for v in (h, j, m))
    return NuisanceSet(
        h=lambda x: np.broadcast_to(h, (len(x),) + h.shape).copy(),
        j=lambda x: np.broadcast_to(j, (len(x),) + j.shape).copy(),
        m=lambda x: np.broadcast_to(m, (len(x),) + m.shape).copy(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset(rng):
    n = 40
    x = rng.standard_normal((n, 2))
    z = x[:, :1] + 0.1 * rng.standard_normal((n, 1))
    y = 2.0 * z + 0.1 * rng.standard_normal((n, 1))
    return Dataset(x, y, z)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
