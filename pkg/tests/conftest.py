import numpy as np
import pytest

from delaylq.harness import make_scalar_spec
from delaylq.riccati import solve_delayed_riccati_sigma, solve_L


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once; timing-sensitive tests then see only
    the numerical work (compiled kernels are also disk-cached)."""
    spec = make_scalar_spec(a=0.1, b=1.0, bbar=0.1, q=0.2, m=4)
    sigma, _ = solve_delayed_riccati_sigma(spec)
    solve_L(spec, sigma)
    yield


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=2024))
