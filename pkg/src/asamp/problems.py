"""Seeded generation of synthetic sparse-recovery instances.

Every generator is a pure function of (dimensions, parameters, seed); the
RNG is the counter-based Philox so replication workers can partition the
seed space without coordination.  An instance carries its own generation
recipe so a run can be replayed byte-for-byte from a small JSON file.
"""

import json
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Requested shape is inconsistent (e.g. more rows than columns)."""


class ZeroSignal(ValueError):
    """Cannot set a noise level relative to an all-zero signal."""


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class BGPriorParams:
    """Bernoulli-Gaussian prior: active with probability epsilon, then
    Gaussian with variance sigma0_2."""

    epsilon: float
    sigma0_2: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.sigma0_2 <= 0.0:
            raise ValueError("sigma0_2 must be positive")


@dataclass
class HMCPriorParams:
    """Two-state hidden Markov chain over the activity pattern.

    p01 = P(next active | inactive), p10 = P(next inactive | active); the
    stationary activity is p01 / (p01 + p10).
    """

    p01: float
    p10: float
    sigma0_2: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.p01 < 1.0 and 0.0 < self.p10 < 1.0):
            raise ValueError("transition probabilities must lie in (0, 1)")
        if self.sigma0_2 <= 0.0:
            raise ValueError("sigma0_2 must be positive")

    @property
    def activity(self):
        return self.p01 / (self.p01 + self.p10)


@dataclass
class ProblemInstance:
    """One measurement model y = A x + w together with its regularization.

    lam follows the convention lam = lam_scale * sigma_w2; overriding the
    scale is explicit.  x_dag is the ground truth when known.
    """

    A: np.ndarray
    y: np.ndarray
    sigma_w2: float
    lam: float
    x_dag: np.ndarray | None = None
    spec: dict | None = field(default=None, repr=False)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def field_tag(self):
        return "complex" if np.iscomplexobj(self.A) else "real"

    def normalized(self):
        """Noise-whitened copy: (A, y, lam) -> (A/sw, y/sw, lam/sw^2).

        The minimizer is unchanged and the relative KKT residual takes the
        same value; quasi-variances on this scale are O(1), which is how
        the solvers are tuned.
        """
        if self.sigma_w2 <= 0.0:
            return self
        sw = np.sqrt(self.sigma_w2)
        return ProblemInstance(
            A=np.asfortranarray(self.A / sw), y=self.y / sw, sigma_w2=1.0,
            lam=self.lam / self.sigma_w2, x_dag=self.x_dag, spec=self.spec)


def gen_gaussian_matrix(m, n, seed):
    """i.i.d. Gaussian measurement matrix with entry variance 1/m."""
    if m < 1 or n < 1:
        raise DimensionError("matrix dimensions must be positive")
    A = _rng(seed).normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    return np.asfortranarray(A)


def gen_row_orthogonal(m, n, seed):
    """m rows drawn from a random n x n orthogonal matrix, so A A^T = I_m."""
    if m > n:
        raise DimensionError("row-orthogonal matrix needs m <= n")
    rng = _rng(seed)
    B = rng.normal(0.0, 1.0, size=(n, n))
    Q, _ = np.linalg.qr(B)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    return np.asfortranarray(Q[rows, :])


def gen_pdft_rp(m, n, seed, identity_permutation=False):
    """Partial DFT matrix with a random column permutation: A = S F P.

    S keeps m of the n rows of the unitary DFT F and P permutes columns,
    hence A A^H = I_m and every entry has modulus 1/sqrt(n).
    """
    if m > n:
        raise DimensionError("partial DFT needs m <= n")
    rng = _rng(seed)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    perm = np.arange(n) if identity_permutation else rng.permutation(n)
    j = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    return np.asfortranarray(F[np.ix_(rows, perm)])


def sample_bg_signal(n, params, seed, complex_field=False):
    """Bernoulli-Gaussian draw: zero w.p. 1-epsilon, else (C)N(0, sigma0_2)."""
    rng = _rng(seed)
    active = rng.random(n) < params.epsilon
    sigma0 = np.sqrt(params.sigma0_2)
    if complex_field:
        vals = (rng.normal(size=n) + 1j * rng.normal(size=n)) * (sigma0 / np.sqrt(2.0))
        x = np.zeros(n, dtype=complex)
    else:
        vals = rng.normal(0.0, sigma0, size=n)
        x = np.zeros(n)
    x[active] = vals[active]
    return x


def sample_hmc_signal(n, params, seed, complex_field=False):
    """Hidden-Markov-chain draw: the activity pattern follows the binary
    chain started from its stationary law; active entries are Gaussian."""
    rng = _rng(seed)
    u = rng.random(n)
    s = np.zeros(n, dtype=bool)
    s[0] = u[0] < params.activity
    for i in range(1, n):
        if s[i - 1]:
            s[i] = u[i] < 1.0 - params.p10
        else:
            s[i] = u[i] < params.p01
    sigma0 = np.sqrt(params.sigma0_2)
    if complex_field:
        vals = (rng.normal(size=n) + 1j * rng.normal(size=n)) * (sigma0 / np.sqrt(2.0))
        x = np.zeros(n, dtype=complex)
    else:
        vals = rng.normal(0.0, sigma0, size=n)
        x = np.zeros(n)
    x[s] = vals[s]
    return x


def add_awgn(clean, snr_db, seed):
    """Add white Gaussian noise at the requested SNR.

    The variance solves 10*log10(||clean||^2 / (m * sigma_w2)) = snr_db,
    i.e. larger snr_db means less noise.  Returns (y, sigma_w2).
    """
    clean = np.asarray(clean)
    energy = float(np.linalg.norm(clean) ** 2)
    if energy == 0.0:
        raise ZeroSignal("clean signal has zero norm")
    m = clean.shape[0]
    sigma_w2 = energy / (m * 10.0 ** (snr_db / 10.0))
    rng = _rng(seed)
    if np.iscomplexobj(clean):
        w = (rng.normal(size=m) + 1j * rng.normal(size=m)) * np.sqrt(sigma_w2 / 2.0)
    else:
        w = rng.normal(0.0, np.sqrt(sigma_w2), size=m)
    return clean + w, sigma_w2


_ENSEMBLES = {
    "gaussian": gen_gaussian_matrix,
    "row_orthogonal": gen_row_orthogonal,
    "pdft_rp": gen_pdft_rp,
}


def make_lasso_instance(ensemble, m, n, prior, snr_db, seed, lam_scale=1.0):
    """Full lasso instance: matrix, BG ground truth, noisy data, lam.

    Sub-seeds are derived as 4*seed + {0,1,2} for matrix / signal / noise
    so replications r can simply use seed = base_seed + r.
    """
    if ensemble not in ("gaussian", "row_orthogonal"):
        raise DimensionError(f"unsupported lasso ensemble {ensemble!r}")
    A = _ENSEMBLES[ensemble](m, n, 4 * seed)
    x_dag = np.zeros(n)
    for attempt in range(100):
        x_dag = sample_bg_signal(n, prior, 4 * seed + 1 + 1_000_000 * attempt)
        if np.any(x_dag != 0):
            break
    else:
        raise ZeroSignal("Bernoulli-Gaussian prior kept drawing empty signals")
    y, sigma_w2 = add_awgn(A @ x_dag, snr_db, 4 * seed + 2)
    spec = {
        "kind": "lasso",
        "ensemble": ensemble,
        "m": m,
        "n": n,
        "prior": {"type": "bg", "epsilon": prior.epsilon, "sigma0_2": prior.sigma0_2},
        "snr_db": snr_db,
        "seed": seed,
        "lam_scale": lam_scale,
    }
    return ProblemInstance(A, y, sigma_w2, lam_scale * sigma_w2, x_dag, spec)


def make_channel_instance(m, n, prior, snr_db, seed, lam_scale=1.0):
    """Angular-domain channel estimation instance: PDFT-RP matrix and a
    group-sparse complex channel drawn from the hidden Markov prior.

    Sparse chains with long dwell times draw the all-zero channel with
    non-negligible probability; such draws are resampled deterministically
    (the SNR-relative noise level is undefined for them).
    """
    A = gen_pdft_rp(m, n, 4 * seed)
    h = np.zeros(n)
    for attempt in range(100):
        h = sample_hmc_signal(n, prior, 4 * seed + 1 + 1_000_000 * attempt,
                              complex_field=True)
        if np.any(h != 0):
            break
    else:
        raise ZeroSignal("hidden-Markov prior kept drawing empty channels")
    y, sigma_w2 = add_awgn(A @ h, snr_db, 4 * seed + 2)
    spec = {
        "kind": "channel",
        "ensemble": "pdft_rp",
        "m": m,
        "n": n,
        "prior": {
            "type": "hmc",
            "p01": prior.p01,
            "p10": prior.p10,
            "sigma0_2": prior.sigma0_2,
        },
        "snr_db": snr_db,
        "seed": seed,
        "lam_scale": lam_scale,
    }
    return ProblemInstance(A, y, sigma_w2, lam_scale * sigma_w2, h, spec)


def prior_from_dict(d):
    if d["type"] == "bg":
        return BGPriorParams(d["epsilon"], d["sigma0_2"])
    if d["type"] == "hmc":
        return HMCPriorParams(d["p01"], d["p10"], d["sigma0_2"])
    raise ValueError(f"unknown prior type {d['type']!r}")


def instance_from_spec(spec):
    """Regenerate an instance from its recipe; byte-identical per seed."""
    prior = prior_from_dict(spec["prior"])
    if spec["kind"] == "lasso":
        return make_lasso_instance(
            spec["ensemble"], spec["m"], spec["n"], prior, spec["snr_db"],
            spec["seed"], spec.get("lam_scale", 1.0),
        )
    if spec["kind"] == "channel":
        return make_channel_instance(
            spec["m"], spec["n"], prior, spec["snr_db"], spec["seed"],
            spec.get("lam_scale", 1.0),
        )
    raise ValueError(f"unknown instance kind {spec['kind']!r}")


def save_instance_spec(instance, path):
    if instance.spec is None:
        raise ValueError("instance carries no generation recipe")
    with open(path, "w") as fh:
        json.dump(instance.spec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance_spec(path):
    with open(path) as fh:
        return json.load(fh)
