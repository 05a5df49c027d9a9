import numpy as np
import pytest

from multimix.model import Dataset, MixtureParams


def random_instance(rng, n=20, K=2, n_categories=4, P=2, scale=1.0, total=(5, 40)):
    """Random dataset, parameters and responsibilities of the given size."""
    J = n_categories - 1
    s = rng.integers(total[0], total[1], size=n)
    probs = rng.dirichlet(np.ones(n_categories), size=n)
    y = np.array([rng.multinomial(si, pi) for si, pi in zip(s, probs)])
    x = np.column_stack([np.ones(n), rng.standard_normal((n, P - 1))]) if P > 1 else np.ones((n, 1))
    data = Dataset.from_arrays(y, x)
    pi = rng.dirichlet(np.ones(K))
    beta = scale * rng.standard_normal((K, J, P))
    w = rng.dirichlet(np.ones(K), size=n)
    return data, MixtureParams(pi, beta), w


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
