from __future__ import annotations

import numpy as np
import pytest

from gravcont import PointSource, Rectangle, make_regular_observation_grid, synth_field

SQUARE = Rectangle(-1.0, 1.0, -1.0, 1.0)
TWO_SOURCES = (
    PointSource(0.1, (-0.2, 0.2, -0.3)),
    PointSource(0.2, (0.3, -0.1, -0.4)),
)


def two_source_observations(n=40):
    obs = make_regular_observation_grid(SQUARE, n, n)
    return obs.with_values(synth_field(TWO_SOURCES, obs.points))


@pytest.fixture(scope="session")
def two_source_obs():
    return two_source_observations(40)


@pytest.fixture(scope="session")
def small_obs():
    return two_source_observations(12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


# Every converged solve anywhere in the suite must pass the KKT verifier at
# the tolerance the solver itself used.  Solves inside joblib worker
# processes are not seen by this hook.
KKT_LOG: list[bool] = []


@pytest.fixture(autouse=True, scope="session")
def _kkt_on_every_converged_solve():
    import gravcont
    from gravcont import cli, continuation, estimators
    from gravcont import nnls as nnls_mod

    original = nnls_mod.nnls_solve

    def checked(A, f, *args, **kwargs):
        res = original(A, f, *args, **kwargs)
        if res.converged:
            rep = nnls_mod.kkt_check(A, f, res.phi, res.tolerance)
            KKT_LOG.append(rep.feasible)
            assert rep.feasible, f"converged solve fails KKT: {rep}"
        return res

    mp = pytest.MonkeyPatch()
    for mod in (gravcont, nnls_mod, continuation, estimators, cli):
        if hasattr(mod, "nnls_solve"):
            mp.setattr(mod, "nnls_solve", checked)
    yield
    mp.undo()
