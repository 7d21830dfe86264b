"""Detection experiments: can a fixed sketch tell G(m, n) from the spiked ensemble?

For each sketch size ``k`` a fresh :class:`SketchOperator` is drawn and
both ensembles are sketched ``trials`` times. A test statistic declares
"spiked" or "null"; the advantage ``|P(spiked | D2) - P(spiked | D1)|``
lower-bounds the total variation distance between the sketch laws.

Two statistics are available:

``norm-squared``
    ``|y|^2 > k + k ||s||^2 / 2``, the midpoint of the two means.
``mean-shift-projection``
    ``<y, z/|z|> > |z| / 2`` where ``z`` is the realized sketched shift.
    On the null side ``z`` comes from independently drawn decoy factors.
    This is an oracle test (it sees the latent factors) and serves as a
    reference.

Measured advantage is one-sided evidence: it cannot certify the total
variation distance from above.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from statsmodels.stats.proportion import confint_proportions_2indep

from . import linalg
from .ensembles import InstanceKind, SpikeParams, sample_factors
from .rng import Rng, as_generator
from .sketch import apply_sketch, check_size, make_random_sketch

STATISTICS = ("norm-squared", "mean-shift-projection")
MIN_TRIALS = 50
_CHUNK = 128

ONE_SIDED_NOTE = (
    "advantage of a concrete test is a lower bound on total variation distance; "
    "no implementable test certifies it from above"
)


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n: int
    spike: SpikeParams
    k_grid: tuple
    trials: int = 400
    statistic: str = "norm-squared"
    seed: int = 0
    kind: InstanceKind = None
    per_trial_sketch: bool = False
    allow_large: bool = False

    def __post_init__(self):
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        if not self.k_grid:
            raise ValueError("k-grid is empty")
        for k in self.k_grid:
            check_size(k, self.m, self.n, self.allow_large)
        if self.trials < MIN_TRIALS:
            raise ValueError(f"trials per k must be >= {MIN_TRIALS}, got {self.trials}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; expected one of {STATISTICS}")
        if self.spike.r > min(self.m, self.n):
            raise ValueError(f"spike rank {self.spike.r} exceeds min(m, n)")


@dataclass(frozen=True)
class AdvantageRecord:
    k: int
    null_rate: float
    spiked_rate: float
    advantage: float
    ci_lo: float
    ci_hi: float
    threshold: float  # nan for the per-trial projection threshold
    statistic: str
    trials: int


@dataclass
class AdvantageCurve:
    records: list
    seed: int
    statistic: str
    note: str = ONE_SIDED_NOTE

    @property
    def ks(self):
        return [r.k for r in self.records]

    @property
    def advantages(self):
        return np.array([r.advantage for r in self.records])


def advantage_interval(spiked_hits, null_hits, trials, alpha=0.05):
    """Advantage and a 95% interval from Newcombe's hybrid Wilson score
    interval for the difference of two independent proportions."""
    d = (spiked_hits - null_hits) / trials
    lo, hi = confint_proportions_2indep(
        spiked_hits, trials, null_hits, trials, method="newcomb", compare="diff", alpha=alpha
    )
    lo, hi = float(lo), float(hi)
    if lo >= 0:
        iv = (lo, hi)
    elif hi <= 0:
        iv = (-hi, -lo)
    else:
        iv = (0.0, max(-lo, hi))
    return abs(d), (max(0.0, iv[0]), min(1.0, iv[1]))


@dataclass
class CellResult:
    """Per-trial decisions of both statistics for one ``k``."""

    k: int
    threshold: float
    null_norm: np.ndarray = field(repr=False)
    spiked_norm: np.ndarray = field(repr=False)
    null_proj: np.ndarray = field(repr=False)
    spiked_proj: np.ndarray = field(repr=False)

    def decisions(self, statistic):
        if statistic == "norm-squared":
            return self.null_norm, self.spiked_norm
        return self.null_proj, self.spiked_proj

    def record(self, statistic):
        null, spiked = self.decisions(statistic)
        trials = len(null)
        nh, sh = int(np.sum(null)), int(np.sum(spiked))
        adv, (lo, hi) = advantage_interval(sh, nh, trials)
        thr = self.threshold if statistic == "norm-squared" else math.nan
        return AdvantageRecord(self.k, nh / trials, sh / trials, adv, lo, hi, thr, statistic, trials)


def _side(S, k, m, n, spike, threshold, trials, gen, planted_in_x, sketch_gen=None):
    # S is None in per-trial mode: every trial draws its own sketch from sketch_gen
    norm_dec = np.empty(trials, dtype=bool)
    proj_dec = np.empty(trials, dtype=bool)
    for t0 in range(0, trials, _CHUNK):
        b = min(_CHUNK, trials - t0)
        G = gen.standard_normal((b, m, n))
        u, v = sample_factors(m, n, spike.r, gen, size=b)
        P = np.einsum("tjm,j,tjn->tmn", u, spike.array, v)
        if S is None:
            y = np.empty((b, k))
            z = np.empty((b, k))
            for i in range(b):
                Si = make_random_sketch(k, m, n, sketch_gen)
                z[i] = apply_sketch(Si, P[i])
                y[i] = apply_sketch(Si, G[i])
        else:
            z = apply_sketch(S, P)
            y = apply_sketch(S, G)
        if planted_in_x:
            y += z
        norm_dec[t0 : t0 + b] = np.einsum("ij,ij->i", y, y) > threshold
        # <y, z/|z|> > |z|/2  <=>  <y, z> > |z|^2 / 2
        proj_dec[t0 : t0 + b] = np.einsum("ij,ij->i", y, z) > 0.5 * np.einsum("ij,ij->i", z, z)
    return norm_dec, proj_dec


def detect_cell(k, m, n, spike, trials, rng, per_trial_sketch=False, allow_large=False):
    """Run one ``(k, both sides)`` cell on stream `rng`.

    Sub-streams: ``child(0)`` draws the sketch(es), ``child(1)`` the null
    side, ``child(2)`` the spiked side.
    """
    if not isinstance(rng, Rng):
        rng = Rng(int(rng))
    check_size(k, m, n, allow_large)
    threshold = k + 0.5 * k * spike.norm2
    sketch_gen = rng.child(0).generator()
    S = None
    if not per_trial_sketch:
        S = make_random_sketch(k, m, n, sketch_gen, allow_large=allow_large)
    args = (k, m, n, spike, threshold, trials)
    nn, npj = _side(S, *args, rng.child(1).generator(), False, sketch_gen)
    sn, spj = _side(S, *args, rng.child(2).generator(), True, sketch_gen)
    return CellResult(k, threshold, nn, sn, npj, spj)


def run_detection(cfg, threads=1):
    """Advantage curve over ``cfg.k_grid``; cell ``k`` uses stream ``Rng(seed).child(k)``."""
    root = Rng(cfg.seed)

    def cell(k):
        res = detect_cell(
            k, cfg.m, cfg.n, cfg.spike, cfg.trials, root.child(k),
            cfg.per_trial_sketch, cfg.allow_large,
        )
        return res.record(cfg.statistic)

    if threads > 1 and len(cfg.k_grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(cell, cfg.k_grid))
    else:
        records = [cell(k) for k in cfg.k_grid]
    return AdvantageCurve(records, cfg.seed, cfg.statistic)


def is_monotone(curve):
    """Non-decreasing in ``k`` up to confidence-interval slack: each later
    interval must reach the lower end of every earlier one."""
    recs = sorted(curve.records, key=lambda r: r.k)
    for i, a in enumerate(recs):
        for b in recs[i + 1 :]:
            if b.ci_hi < a.ci_lo:
                return False
    return True


def critical_k(curve, level=0.5):
    """Sketch size where the advantage first crosses `level`, interpolated
    linearly in ``log k``; None if it never does."""
    recs = sorted(curve.records, key=lambda r: r.k)
    for a, b in zip(recs, recs[1:]):
        if a.advantage < level <= b.advantage:
            frac = (level - a.advantage) / (b.advantage - a.advantage)
            return float(math.exp(math.log(a.k) + frac * (math.log(b.k) - math.log(a.k))))
    if recs and recs[0].advantage >= level:
        return float(recs[0].k)
    return None


def ose_opnorm_estimate(A, kp, rng):
    """``||S A||_op`` for a ``kp x m`` Gaussian embedding with ``N(0, 1/kp)`` entries."""
    A = linalg.as_matrix(A)
    if kp < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {kp}")
    S = as_generator(rng).standard_normal((kp, A.shape[0])) / math.sqrt(kp)
    return linalg.operator_norm(S @ A)


# ------------------------------------------------------------------ sweep

SUB = "sub-critical"
SUPER = "super-critical"
SUPER_REDUCED = "super-critical-reduced"
MID = "intermediate"
# regime boundaries tolerate roundoff in ||s||^4
_RTOL = 1e-9


@dataclass(frozen=True)
class SweepRecord:
    record: AdvantageRecord
    ratio: float  # k ||s||^4
    label: str
    passed: object  # True/False, None when unchecked


@dataclass
class SweepReport:
    records: list
    curve: AdvantageCurve
    super_reachable: bool
    spans_transition: bool
    critical_ratio: float

    @property
    def failed(self):
        return any(r.passed is False for r in self.records)

    @property
    def status(self):
        """``pass``, ``fail`` or ``unreachable``."""
        if self.failed:
            return "fail"
        if not self.super_reachable:
            return "unreachable"
        return "pass"


def sweep_phase_transition(
    cfg,
    threads=1,
    sub_ratio=0.01,
    super_ratio=100.0,
    fallback_ratio=10.0,
    sub_max_advantage=0.2,
    super_min_advantage=0.6,
):
    """Label each ``k`` by its regime and check the measured advantage.

    ``k ||s||^4 <= sub_ratio`` is sub-critical and must show advantage
    ``<= sub_max_advantage``; ``k ||s||^4 >= super_ratio`` is super-critical
    and must reach ``super_min_advantage``. When ``super_ratio / ||s||^4``
    exceeds ``m n`` the super-critical regime cannot be sketched at all:
    the report says so (``super_reachable=False``) and grid points with
    ``k ||s||^4 >= fallback_ratio`` are checked under the separate label
    ``super-critical-reduced``.
    """
    curve = run_detection(cfg, threads=threads)
    n4 = cfg.spike.norm4
    reachable = super_ratio / n4 <= cfg.m * cfg.n * (1 + _RTOL)
    out = []
    for rec in curve.records:
        ratio = rec.k * n4
        if ratio <= sub_ratio * (1 + _RTOL):
            label, ok = SUB, rec.advantage <= sub_max_advantage
        elif ratio >= super_ratio * (1 - _RTOL):
            label, ok = SUPER, rec.advantage >= super_min_advantage
        elif not reachable and ratio >= fallback_ratio * (1 - _RTOL):
            label, ok = SUPER_REDUCED, rec.advantage >= super_min_advantage
        else:
            label, ok = MID, None
        out.append(SweepRecord(rec, ratio, label, ok))
    kc = 1.0 / n4
    ks = cfg.k_grid
    spans = min(ks) <= kc <= max(ks) and max(ks) >= 100 * min(ks)
    return SweepReport(out, curve, reachable, spans, kc)


def default_k_grid(spike, m, n, points=5):
    """Log-spaced grid over two decades on each side of ``1/||s||^4``,
    clipped to ``[1, m n]``."""
    kc = 1.0 / spike.norm4
    lo = max(1.0, kc / 100.0)
    hi = min(float(m * n), kc * 100.0)
    grid = np.unique(np.round(np.geomspace(lo, hi, points)).astype(int))
    return tuple(int(k) for k in grid)
