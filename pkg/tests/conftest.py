import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssmlab.ssm import AffineGatedSystem, Schedule

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stable(rng, n, margin=0.1):
    """Gaussian matrix shifted so every eigenvalue has real part <= -margin."""
    G = rng.standard_normal((n, n)) / np.sqrt(n)
    shift = max(0.0, np.max(np.linalg.eigvals(G).real)) + margin
    return G - shift * np.eye(n)


def taylor_expm_apply(A, t, v, terms=80):
    """exp(At) v by the plain power series; fine when |At| is of order one."""
    out = np.array(v, dtype=complex if np.iscomplexobj(A) else float)
    term = out.copy()
    for k in range(1, terms):
        term = (A * t) @ term / k
        out = out + term
    return out


def random_schedule(rng, T, pieces=6):
    bp = np.sort(rng.uniform(0.1, T - 0.1, pieces - 1))
    bp = bp[np.concatenate([[True], np.diff(bp) > 1e-3])]
    return Schedule(bp, rng.uniform(-3, 3, len(bp) + 1), 0.0, T)


def contracting_system(rng, n, delta):
    """Affine-gated system satisfying Q A(x) + A(x)^T Q <= -2 delta Q for every x."""
    L = rng.standard_normal((n, n))
    Q = L @ L.T + 0.5 * np.eye(n)
    Qi = np.linalg.inv(Q)
    K0, K1 = (S - S.T for S in rng.standard_normal((2, n, n)))
    P1 = rng.standard_normal((n, n))
    P1 = P1 @ P1.T * 0.2
    P0 = P1 + 0.1 * np.eye(n)
    A_base = Qi @ (K0 - delta * Q - P0)
    A_sel = Qi @ (K1 - P1)
    B = rng.standard_normal((n, 2))
    return AffineGatedSystem(A_base, A_sel, B, rng.standard_normal((2, n))), Q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def experiment_runs(tmp_path_factory):
    """One CLI run per experiment at the shipped defaults, shared by the whole session.

    ``experiment_runs(name)`` returns ``(result, outdir, seconds)``.
    """
    import time

    from ssmlab.cli import execute, parse_config

    outdir = tmp_path_factory.mktemp("runs")
    cache = {}

    def get(name):
        if name not in cache:
            cfg = parse_config([name, "--outdir", str(outdir)])
            t0 = time.perf_counter()
            result, status = execute(cfg)
            assert status == 0
            cache[name] = (result, outdir / name, time.perf_counter() - t0)
        return cache[name]

    return get
