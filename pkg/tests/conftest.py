import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def finite_difference_rel_error(value_fn, params, analytic, h=1e-5):
    """Vector-norm relative error between central finite differences and
    analytic gradients over every parameter entry."""
    num_all, ana_all = [], []
    for name, p in params.items():
        g = analytic[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = value_fn()
            p[idx] = orig - h
            dn = value_fn()
            p[idx] = orig
            num_all.append((up - dn) / (2.0 * h))
            ana_all.append(g[idx])
    num = np.array(num_all)
    ana = np.array(ana_all)
    return float(np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12))
