import numpy as np
import pytest

from asamp.problems import BGPriorParams, ProblemInstance, make_lasso_instance


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def small_lasso(seed, m=10, n=20, eps=0.25, snr_db=20.0, lam_scale=1.0):
    """Small general-position lasso instance from the standard pipeline."""
    return make_lasso_instance("gaussian", m, n, BGPriorParams(eps), snr_db,
                               seed=seed, lam_scale=lam_scale)


def raw_lasso(A, y, lam):
    """Wrap a hand-built (A, y, lam) triple; sigma_w2 = 1 convention."""
    return ProblemInstance(A=np.asarray(A, dtype=float),
                           y=np.asarray(y, dtype=float),
                           sigma_w2=1.0, lam=float(lam))


@pytest.fixture
def rng0():
    return rng(0)
