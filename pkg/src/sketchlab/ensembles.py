"""Gaussian and spiked Gaussian matrix ensembles, and the hard instances.

The null ensemble is ``G(m, n)``: i.i.d. N(0, 1) entries. The spiked
ensemble adds a planted low-rank part,

    X = G + sum_i s_i u_i v_i^T,   u_i ~ N(0, I_m),  v_i ~ N(0, I_n),

with every piece independent. :func:`sample_spiked` always returns the
latent factors alongside ``X`` since the sketch-space statistics need them.

:func:`corollary_instance` builds the four preset instances (operator norm
to a factor alpha, Schatten p, rectangular (1+eps) operator norm, Ky-Fan)
together with the norm-gap predicate that separates the two ensembles.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from . import linalg
from .rng import Rng, as_generator

KINDS = ("alpha-operator", "schatten-p", "eps-operator-rect", "kyfan")

# Ky-Fan instance is proven only for s <= KYFAN_S_RATIO * sqrt(n)
KYFAN_S_RATIO = 0.0789
# largest null singular value is below NULL_EDGE * sqrt(n) w.h.p.
NULL_EDGE = 2.1
DEFAULT_C = 5.0
DEFAULT_RECT_ALPHA = 3.0 * math.sqrt(7.0 / 2.0)


@dataclass(frozen=True)
class SpikeParams:
    """Spike magnitudes ``s = (s_1, ..., s_r)``, all strictly positive."""

    s: tuple

    def __post_init__(self):
        s = tuple(float(x) for x in np.atleast_1d(self.s))
        if len(s) == 0:
            raise ValueError("spike needs at least one magnitude")
        if not all(math.isfinite(x) and x > 0 for x in s):
            raise ValueError(f"spike magnitudes must be finite and positive, got {s}")
        object.__setattr__(self, "s", s)

    @classmethod
    def uniform(cls, r, norm2):
        """``r`` equal magnitudes with ``||s||_2^2 = norm2``."""
        if r < 1:
            raise ValueError(f"spike rank must be >= 1, got {r}")
        return cls((math.sqrt(norm2 / r),) * int(r))

    @property
    def r(self):
        return len(self.s)

    @property
    def array(self):
        return np.array(self.s)

    @property
    def norm2(self):
        """``||s||_2^2``."""
        return float(math.fsum(x * x for x in self.s))

    @property
    def norm4(self):
        """``||s||_2^4``."""
        return self.norm2**2


@dataclass(frozen=True)
class SpikedSample:
    matrix: np.ndarray
    background: np.ndarray
    u: np.ndarray  # (r, m)
    v: np.ndarray  # (r, n)
    spike: SpikeParams

    @property
    def planted(self):
        """The low-rank part ``sum_i s_i u_i v_i^T``."""
        return planted_part(self.spike, self.u, self.v)


def planted_part(spike, u, v):
    return (u.T * spike.array) @ v


def sample_gaussian(m, n, rng):
    """m x n matrix of i.i.d. standard normals."""
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    return as_generator(rng).standard_normal((m, n))


def sample_factors(m, n, r, rng, size=None):
    """Latent factors ``(u, v)`` with shapes ``(..., r, m)`` and ``(..., r, n)``."""
    gen = as_generator(rng)
    lead = () if size is None else (size,)
    u = gen.standard_normal(lead + (r, m))
    v = gen.standard_normal(lead + (r, n))
    return u, v


def sample_spiked(m, n, spike, rng):
    """Draw ``X = G + sum_i s_i u_i v_i^T``.

    Draw order is background first, then all ``u``, then all ``v``; hence
    ``background`` is bit-identical to :func:`sample_gaussian` on the same
    stream.
    """
    if spike.r > min(m, n):
        raise ValueError(f"spike rank {spike.r} exceeds min(m, n) = {min(m, n)}")
    gen = as_generator(rng)
    G = sample_gaussian(m, n, gen)
    u, v = sample_factors(m, n, spike.r, gen)
    return SpikedSample(G + planted_part(spike, u, v), G, u, v, spike)


# ---------------------------------------------------------------- instances


@dataclass(frozen=True)
class InstanceKind:
    """Which hard instance to build, with its parameters.

    ``alpha`` is the approximation factor for ``alpha-operator`` and the
    spike constant for ``eps-operator-rect`` (default ``3 sqrt(7/2)``).
    ``C`` is the spike constant of ``alpha-operator``.
    """

    tag: str
    n: int = None
    d: int = None
    alpha: float = None
    p: float = None
    eps: float = None
    s: int = None
    C: float = DEFAULT_C
    allow_outside_regime: bool = False

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown instance kind {self.tag!r}; expected one of {KINDS}")
        need = {
            "alpha-operator": ("n", "alpha"),
            "schatten-p": ("n", "p"),
            "eps-operator-rect": ("d", "eps"),
            "kyfan": ("n", "s"),
        }[self.tag]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.tag} instance needs {', '.join(missing)}")
        for dim in ("n", "d"):
            val = getattr(self, dim)
            if val is not None and val < 1:
                raise ValueError(f"{dim} must be positive, got {val}")
        if self.tag == "alpha-operator" and not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.tag == "schatten-p" and not self.p > 2:
            raise ValueError(f"p must exceed 2, got {self.p}")
        if self.tag == "eps-operator-rect":
            if not 0 < self.eps < 1 / 3:
                raise ValueError(f"eps must lie in (0, 1/3), got {self.eps}")
            if self.alpha is not None and not self.alpha > 0:
                raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.tag == "kyfan":
            if not 1 <= self.s <= self.n:
                raise ValueError(f"Ky-Fan s must lie in [1, n], got {self.s}")
            if self.s > KYFAN_S_RATIO * math.sqrt(self.n) and not self.allow_outside_regime:
                raise ValueError(
                    f"Ky-Fan s={self.s} exceeds {KYFAN_S_RATIO}*sqrt(n)="
                    f"{KYFAN_S_RATIO * math.sqrt(self.n):.4g}; "
                    "pass allow_outside_regime=True to run anyway"
                )
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")


@dataclass(frozen=True)
class GapPredicate:
    """Norm statistic plus the threshold pair separating null from spiked.

    The null side succeeds when ``statistic(X) <= null_upper`` and the
    spiked side when ``statistic(X) >= spiked_lower``.
    """

    norm: str
    null_upper: float
    spiked_lower: float
    order: float = None  # Schatten p or Ky-Fan s

    def statistic(self, X):
        if self.norm == "operator":
            return linalg.operator_norm(X)
        if self.norm == "schatten-pow":
            return linalg.schatten_norm(X, self.order) ** self.order
        if self.norm == "kyfan":
            return linalg.kyfan_norm(X, int(self.order))
        raise ValueError(f"unknown norm {self.norm!r}")

    def as_dict(self):
        return {
            "norm": self.norm,
            "order": self.order,
            "null_upper": self.null_upper,
            "spiked_lower": self.spiked_lower,
        }


@dataclass(frozen=True)
class Instance:
    kind: InstanceKind
    m: int
    n: int
    spike: SpikeParams
    gap: GapPredicate


def corollary_instance(kind):
    """Dimensions, spike parameters and gap predicate for a preset instance.

    * ``alpha-operator``: ``m = n``, one spike ``C alpha / sqrt(n)``. Gap on
      the operator norm: null ``<= 2.1 sqrt(n)``, spiked ``>= alpha * 2.1 sqrt(n)``.
    * ``schatten-p``: ``m = n``, one spike ``5 / n^(1/2 - 1/p)``. Gap on
      ``||X||_p^p``: null ``<= n (2.1 sqrt(n))^p`` (every singular value
      below the edge), spiked ``>= ((4.5 n^(1/p) - 2.1) sqrt(n))^p`` (planted
      singular value ``5 n^(1/2+1/p)`` at 90% less the null edge).
    * ``eps-operator-rect``: ``m = d / eps^2``, ``n = d``, one spike
      ``alpha sqrt(eps / d)``. Gap on the operator norm:
      ``(1 + 1.1 eps) sqrt(d) / eps`` versus ``(1 + 2 eps) sqrt(d) / eps``.
    * ``kyfan``: ``m = n``, ``r = s`` spikes all ``5 / sqrt(n)``. Gap on the
      Ky-Fan s-norm: ``2.1 s sqrt(n)`` versus ``2.4 s sqrt(n)``.
    """
    tag = kind.tag
    if tag == "alpha-operator":
        n = kind.n
        spike = SpikeParams((kind.C * kind.alpha / math.sqrt(n),))
        edge = NULL_EDGE * math.sqrt(n)
        gap = GapPredicate("operator", edge, kind.alpha * edge)
        return Instance(kind, n, n, spike, gap)
    if tag == "schatten-p":
        n, p = kind.n, float(kind.p)
        spike = SpikeParams((5.0 / n ** (0.5 - 1.0 / p),))
        root = math.sqrt(n)
        gap = GapPredicate(
            "schatten-pow",
            n * (NULL_EDGE * root) ** p,
            ((4.5 * n ** (1.0 / p) - NULL_EDGE) * root) ** p,
            order=p,
        )
        return Instance(kind, n, n, spike, gap)
    if tag == "eps-operator-rect":
        d, eps = kind.d, kind.eps
        alpha = DEFAULT_RECT_ALPHA if kind.alpha is None else kind.alpha
        m = int(math.ceil(d / eps**2 - 1e-9))
        spike = SpikeParams((alpha * math.sqrt(eps / d),))
        base = math.sqrt(d) / eps
        gap = GapPredicate("operator", (1 + 1.1 * eps) * base, (1 + 2 * eps) * base)
        return Instance(kind, m, d, spike, gap)
    # kyfan: r = s spikes of equal size
    n, s = kind.n, int(kind.s)
    spike = SpikeParams((5.0 / math.sqrt(n),) * s)
    root = math.sqrt(n)
    gap = GapPredicate("kyfan", NULL_EDGE * s * root, 2.4 * s * root, order=s)
    return Instance(kind, n, n, spike, gap)


# ---------------------------------------------------------------- gap check


def wilson_interval(successes, trials, alpha=0.05):
    lo, hi = proportion_confint(successes, trials, alpha=alpha, method="wilson")
    return float(lo), float(hi)


@dataclass
class SideResult:
    successes: int
    trials: int
    values: np.ndarray = field(repr=False)

    @property
    def rate(self):
        return self.successes / self.trials

    @property
    def interval(self):
        return wilson_interval(self.successes, self.trials)


@dataclass
class GapReport:
    instance: Instance
    null: SideResult
    spiked: SideResult
    extras: dict = field(default_factory=dict)

    @property
    def median_ratio(self):
        """Median spiked statistic over median null statistic."""
        return float(np.median(self.spiked.values) / np.median(self.null.values))


def low_rank_trace_norm(u, v):
    """``||sum_i u_i v_i^T||_1`` from the factors, via two thin QRs.

    ``U^T V = Q_u (R_u R_v^T) Q_v^T`` so the singular values are those of
    the ``r x r`` core.
    """
    Ru = np.linalg.qr(u.T, mode="r")
    Rv = np.linalg.qr(v.T, mode="r")
    return float(np.sum(np.linalg.svd(Ru @ Rv.T, compute_uv=False)))


@dataclass(frozen=True)
class FactorReport:
    trials: int
    trace_norm_rate: float  # P(||P||_1 >= 0.9 s n)
    u_band_rate: float  # P(0.99 sqrt(n) <= ||u_i|| <= 1.01 sqrt(n) for all i)


def kyfan_factor_check(n, s, trials, rng):
    """Frequency of the two factor events the Ky-Fan gap argument conditions on.

    ``P = sum_{i<=s} u_i v_i^T`` with ``u_i, v_i ~ N(0, I_n)``; trial ``t``
    uses stream ``rng.child(t)``.
    """
    if not isinstance(rng, Rng):
        rng = Rng(int(rng))
    trace_ok = 0
    band_ok = 0
    for t in range(trials):
        u, v = sample_factors(n, n, s, rng.child(t))
        trace_ok += low_rank_trace_norm(u, v) >= 0.9 * s * n
        un = np.linalg.norm(u, axis=1) / math.sqrt(n)
        band_ok += bool(np.all((un >= 0.99) & (un <= 1.01)))
    return FactorReport(trials, trace_ok / trials, band_ok / trials)


def gap_check(kind, trials, rng):
    """Monte Carlo success rate of the gap predicate on each side.

    Trial ``t`` of the null side draws from ``rng.child(0, t)`` and of the
    spiked side from ``rng.child(1, t)``. For Ky-Fan instances ``extras``
    also records, over the same spiked draws, how often
    ``||P||_1 >= 0.9 s n`` (``P = sum_i u_i v_i^T``) and how often every
    ``||u_i||`` lies in ``[0.99, 1.01] sqrt(n)``.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not isinstance(rng, Rng):
        rng = Rng(int(rng))
    inst = corollary_instance(kind)
    gap = inst.gap
    null_vals = np.empty(trials)
    spiked_vals = np.empty(trials)
    p_trace = np.empty(trials)
    u_band = np.empty(trials, dtype=bool)
    for t in range(trials):
        null_vals[t] = gap.statistic(sample_gaussian(inst.m, inst.n, rng.child(0, t)))
        smp = sample_spiked(inst.m, inst.n, inst.spike, rng.child(1, t))
        spiked_vals[t] = gap.statistic(smp.matrix)
        if kind.tag == "kyfan":
            p_trace[t] = low_rank_trace_norm(smp.u, smp.v)
            un = np.linalg.norm(smp.u, axis=1) / math.sqrt(inst.m)
            u_band[t] = bool(np.all((un >= 0.99) & (un <= 1.01)))
    report = GapReport(
        inst,
        SideResult(int(np.sum(null_vals <= gap.null_upper)), trials, null_vals),
        SideResult(int(np.sum(spiked_vals >= gap.spiked_lower)), trials, spiked_vals),
    )
    if kind.tag == "kyfan":
        s = int(kind.s)
        report.extras["trace_norm_P_rate"] = float(np.mean(p_trace >= 0.9 * s * inst.n))
        report.extras["u_norm_band_rate"] = float(np.mean(u_band))
    return report
