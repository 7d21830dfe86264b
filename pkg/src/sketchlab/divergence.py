"""Closed forms and Monte Carlo verifiers for the divergence argument.

* ``E_{x,y} exp(x^T A y)`` for independent standard Gaussian ``x, y``:
  exact value ``prod_i (1 - sigma_i^2)^(-1/2)`` and its Frobenius bound
  ``(1 - ||A||_F^2)^(-1/2)``.
* The sketched mean shift ``z_i = sum_j s_j (u_j)^T L^i v_j``, its squared
  norm ``xi`` (mean ``k ||s||^2``) and the conditioning event
  ``||s||^2 xi < 1/2``.
* ``E exp(<z1, z2>) - 1`` with ``z1`` conditioned on the event and ``z2``
  unconditioned, against ``k ||s||^4``.
* The resulting total variation bound.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .ensembles import SpikeParams, sample_factors
from .rng import as_generator
from .sketch import apply_sketch

MC_MIN_SAMPLES = 1000
MC_MAX_FROBENIUS = 0.9
MIN_ACCEPTANCE = 1e-2
_EXP_LIMIT = 700.0
_CHUNK = 4096


class LemmaDomainError(ValueError):
    """``||A||_F >= 1``: the expectation may be infinite."""


class MonteCarloOverflow(FloatingPointError):
    def __init__(self, exponent):
        self.exponent = exponent
        super().__init__(f"exponential overflow: exponent {exponent:.6g} exceeds {_EXP_LIMIT}")


class ConditioningError(RuntimeError):
    """Too few draws satisfy the conditioning event."""

    def __init__(self, rate, floor):
        self.rate = rate
        super().__init__(
            f"acceptance rate {rate:.4g} is below the floor {floor:.4g}; "
            "spike or k too large for the conditioning to be meaningful"
        )


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float
    samples: int


class _Moments:
    """Streaming mean/variance, merged pairwise (Chan et al.)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x):
        x = np.asarray(x, dtype=np.float64)
        nb = x.size
        if nb == 0:
            return
        mb = float(np.mean(x))
        m2b = float(np.sum((x - mb) ** 2))
        tot = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / tot
        self.m2 += m2b + delta**2 * self.n * nb / tot
        self.n = tot

    @property
    def std_error(self):
        if self.n < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


def _checked_exp(expo):
    top = float(np.max(expo))
    if top > _EXP_LIMIT:
        raise MonteCarloOverflow(top)
    return np.exp(expo)


# ------------------------------------------------------------------ lemma


def lemma1_bound(A):
    """``1 / sqrt(1 - ||A||_F^2)``."""
    f2 = linalg.frobenius_norm(A) ** 2
    if f2 >= 1.0:
        raise LemmaDomainError(f"||A||_F^2 = {f2:.6g} >= 1")
    return 1.0 / math.sqrt(1.0 - f2)


def lemma1_exact(A):
    """``E exp(x^T A y) = prod_i (1 - sigma_i^2)^(-1/2)`` for ``||A||_F < 1``.

    The product is checked against :func:`lemma1_bound` before returning.
    """
    bound = lemma1_bound(A)
    sig = linalg.singular_values(A)
    exact = math.exp(-0.5 * math.fsum(np.log1p(-(sig**2))))
    if exact > bound + 1e-12:
        raise ArithmeticError(f"product {exact!r} exceeds Frobenius bound {bound!r}")
    return exact


def lemma1_monte_carlo(A, samples, rng, method="importance", batch=_CHUNK):
    """Monte Carlo estimate of ``E exp(x^T A y)`` with its standard error.

    ``method="plain"`` averages ``exp(x^T A y)`` over independent Gaussian
    pairs. Its variance is infinite once ``sigma_1 > 1/2``, so the standard
    error is unreliable there.

    ``method="importance"`` (default) integrates ``x`` out,
    ``E_x exp(x^T A y) = exp(|A y|^2 / 2)``, and draws ``y`` from the
    equal mixture of ``N(0, I)`` and ``N(0, I / (1 - ||A||_F^2))``. The
    weights have finite variance whenever ``||A||_F < 1`` and the
    proposal uses only the Frobenius norm, never the spectrum.
    """
    A = linalg.as_matrix(A)
    if samples < MC_MIN_SAMPLES:
        raise ValueError(f"need at least {MC_MIN_SAMPLES} samples, got {samples}")
    f2 = float(np.sum(A * A))
    if math.sqrt(f2) > MC_MAX_FROBENIUS + 1e-12:
        raise LemmaDomainError(
            f"||A||_F = {math.sqrt(f2):.6g} above the Monte Carlo cap {MC_MAX_FROBENIUS}"
        )
    if method not in ("plain", "importance"):
        raise ValueError(f"unknown method {method!r}")
    if f2 == 0.0:
        return MCEstimate(1.0, 0.0, samples)
    gen = as_generator(rng)
    m, n = A.shape
    tau2 = 1.0 / (1.0 - f2)
    log_half = math.log(0.5)
    acc = _Moments()
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        if method == "plain":
            x = gen.standard_normal((b, m))
            y = gen.standard_normal((b, n))
            expo = np.einsum("ij,ij->i", x @ A, y)
        else:
            wide = gen.random(b) < 0.5
            y = gen.standard_normal((b, n))
            y[wide] *= math.sqrt(tau2)
            yy = np.einsum("ij,ij->i", y, y)
            ay = y @ A.T
            log_p = -0.5 * yy
            log_q = log_half + np.logaddexp(log_p, -0.5 * yy / tau2 - 0.5 * n * math.log(tau2))
            expo = 0.5 * np.einsum("ij,ij->i", ay, ay) + log_p - log_q
        acc.add(_checked_exp(expo))
        done += b
    return MCEstimate(acc.mean, acc.std_error, samples)


# ------------------------------------------------------------------ xi


@dataclass(frozen=True)
class XiSample:
    xi: float
    shift: np.ndarray
    accepted: bool


def shift_vectors(S, spike, u, v):
    """Sketched planted part ``z_i = sum_j s_j u_j^T L^i v_j``.

    `u` and `v` have shapes ``(r, m)``/``(r, n)`` or ``(T, r, m)``/``(T, r, n)``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u, v = u[None], v[None]
    if u.shape[1:] != (spike.r, S.m) or v.shape[1:] != (spike.r, S.n) or len(u) != len(v):
        raise ValueError(
            f"factor shapes {u.shape[1:]}, {v.shape[1:]} do not match "
            f"r={spike.r}, sketch dimensions {(S.m, S.n)}"
        )
    planted = np.einsum("tjm,j,tjn->tmn", u, spike.array, v)
    z = apply_sketch(S, planted)
    return z[0] if single else z


def xi_statistic(S, spike, u, v):
    z = shift_vectors(S, spike, u, v)
    xi = float(np.dot(z, z))
    return XiSample(xi, z, spike.norm2 * xi < 0.5)


def sample_shifts(S, spike, trials, rng, chunk=_CHUNK):
    """``trials`` independent shift vectors, shape ``(trials, k)``.

    Factors are drawn chunk by chunk from one generator, so the result is
    a deterministic function of the stream.
    """
    gen = as_generator(rng)
    out = np.empty((trials, S.k))
    for t0 in range(0, trials, chunk):
        b = min(chunk, trials - t0)
        u, v = sample_factors(S.m, S.n, spike.r, gen, size=b)
        out[t0 : t0 + b] = shift_vectors(S, spike, u, v)
    return out


def xi_mean(S, spike, trials, rng):
    """Empirical mean of ``xi`` with its standard error."""
    z = sample_shifts(S, spike, trials, rng)
    xi = np.einsum("ij,ij->i", z, z)
    acc = _Moments()
    acc.add(xi)
    return MCEstimate(acc.mean, acc.std_error, trials), xi


# ------------------------------------------------------------------ chi^2


@dataclass(frozen=True)
class Chi2Estimate:
    estimate: float
    acceptance_rate: float
    std_error: float
    accepted: int


def chi2_from_shifts(z1, z2):
    """Plug-in ``mean(exp(<z1_t, z2_t>)) - 1`` over paired rows."""
    acc = _Moments()
    acc.add(_checked_exp(np.einsum("ij,ij->i", z1, z2)))
    return acc.mean - 1.0, acc.std_error


def chi2_monte_carlo(S, spike, trials, rng, min_acceptance=MIN_ACCEPTANCE):
    """Estimate ``E exp(<z1, z2>) - 1``, ``z1`` conditioned on the event.

    ``trials`` candidate shifts are drawn and the ones with
    ``||s||^2 xi < 1/2`` kept (rejection sampling). Each kept ``z1`` is
    paired with one fresh unconditioned ``z2``.
    """
    if trials < MC_MIN_SAMPLES:
        raise ValueError(f"need at least {MC_MIN_SAMPLES} trials, got {trials}")
    gen = as_generator(rng)
    z1 = sample_shifts(S, spike, trials, gen)
    keep = spike.norm2 * np.einsum("ij,ij->i", z1, z1) < 0.5
    accepted = int(np.count_nonzero(keep))
    rate = accepted / trials
    if rate < min_acceptance:
        raise ConditioningError(rate, min_acceptance)
    z2 = sample_shifts(S, spike, accepted, gen)
    est, se = chi2_from_shifts(z1[keep], z2)
    return Chi2Estimate(est, rate, se, accepted)


# ------------------------------------------------------------------ bounds


@dataclass(frozen=True)
class BoundReport:
    """Closed-form bounds at sketch size ``k``.

    ``acceptance_rate`` is the Markov lower bound ``1 - 2 k ||s||^4`` on the
    probability of the conditioning event (clipped at 0).
    """

    k: int
    spike: SpikeParams
    c: float
    chi2_bound: float
    tv_bound: float
    acceptance_rate: float


def tv_bound(k, spike, c):
    """``chi2 <= k ||s||^4`` and ``d_TV <= sqrt(k||s||^4/(1-2c)) + 2c/(1-2c)``."""
    if not 0 < c < 0.5:
        raise ValueError(f"c must lie in (0, 1/2), got {c}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    kn4 = k * spike.norm4
    tv = math.sqrt(kn4 / (1 - 2 * c)) + 2 * c / (1 - 2 * c)
    return BoundReport(k, spike, c, kn4, tv, max(0.0, 1.0 - 2.0 * kn4))
