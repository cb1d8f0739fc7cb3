import numpy as np
import pytest
from hypothesis import settings

from accompany_lab.distributions import FiniteLaw, merge_atoms

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def pmf_gap(a: FiniteLaw, b: FiniteLaw) -> float:
    """Largest absolute pmf difference over the union of supports."""
    atoms = np.vstack([a.atoms, b.atoms])
    weights = np.concatenate([a.weights, -b.weights])
    _, diff = merge_atoms(atoms, weights)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def random_finite_law(gen: np.random.Generator, d: int, k: int, scale: float = 1.0) -> FiniteLaw:
    atoms = np.round(gen.uniform(-scale, scale, (k, d)), 3)
    return FiniteLaw.from_pmf(atoms, gen.dirichlet(np.ones(k)))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def subspace_directions(gen, d, k, m):
    """``m`` unit vectors spanning a random ``k``-dimensional subspace of R^d."""
    q, _ = np.linalg.qr(gen.standard_normal((d, k)))
    t = gen.standard_normal((m, k)) @ q.T
    return t / np.linalg.norm(t, axis=1)[:, None]


# acceptance criteria report: one line per criterion at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    def record(key: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[key] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
