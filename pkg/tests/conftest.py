import numpy as np
import pytest


def random_spd(n: int, cond: float, rng: np.random.Generator) -> np.ndarray:
    """SPD matrix with eigenvalues geomspaced across the given condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.geomspace(1.0, cond, n) if n > 1 else np.array([1.0])
    m = (q * eigs) @ q.T
    return 0.5 * (m + m.T)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
