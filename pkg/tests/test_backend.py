import subprocess
import sys

import numpy as np

SNIPPET = """
import numpy as np
from delaylq import backend
from delaylq.riccati import solve_delayed_riccati_sigma, solve_L
from delaylq.harness import make_scalar_spec
assert backend.backend_name() == {expected!r}
spec = make_scalar_spec(a=0.3, b=1.0, bbar=0.4, q=0.8, m=8)
traj, diag = solve_delayed_riccati_sigma(spec)
gain = solve_L(spec, traj)
vals = np.concatenate([traj.interior().ravel(), gain.interior().ravel()])
np.save({out!r}, vals)
"""


def _run(tmp_path, backend_env, expected):
    out = str(tmp_path / f"{expected}.npy")
    code = SNIPPET.format(expected=expected, out=out)
    env = {"PATH": "/usr/bin:/bin", "HOME": "/root"}
    if backend_env:
        env.update(backend_env)
    proc = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=600
    )
    assert proc.returncode == 0, proc.stderr
    return np.load(out)


def test_numpy_fallback_matches_numba(tmp_path):
    compiled = _run(tmp_path, {}, "numba")
    fallback = _run(tmp_path, {"DELAYLQ_BACKEND": "numpy"}, "numpy")
    assert np.allclose(compiled, fallback, rtol=0, atol=1e-12)


def test_disable_flag_variant(tmp_path):
    fallback = _run(tmp_path, {"DELAYLQ_DISABLE_NUMBA": "1"}, "numpy")
    assert np.all(np.isfinite(fallback))
