"""Streaming regression engine for covariate sets that expand mid-stream.

The engine ingests compressed batch statistics and maintains weighted
cumulative cross-product matrices, a running residual sum of squares and the
homogenization maps that let pre-change data inform the post-change
parameters. Its entire memory is a fixed number of small matrices; raw data
never need to be retained.

Phases
------
Phase.PRE   only x observed; plain least squares on x.
Phase.ONE   z became observable at the first event; the bordered system
            fuses both segments through the estimated projection B-hat.
Phase.TWO   w became observable at the second event; the (p+q+r) system
            additionally uses C-hat and D-hat.

Weight conventions
------------------
"gram-squared" (default) multiplies every Gram contribution by the squared
row weight, i.e. rows are weighted before forming cross products. This is
internally consistent with the residual-sum and F formulas. "paper-linear"
applies the weight linearly to the Gram contributions instead and exists for
fidelity experiments; the residual-sum machinery is convention independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import linalg
from .batchstats import (
    PHASE_X,
    PHASE_XZ,
    PHASE_XZW,
    BatchStats,
    StreamSchema,
    merge,
)
from .errors import (
    DimensionMismatch,
    InsufficientData,
    InvalidConfig,
    PhaseMismatch,
    SingularMatrix,
)

GRAM_SQUARED = "gram-squared"
PAPER_LINEAR = "paper-linear"
CONVENTIONS = (GRAM_SQUARED, PAPER_LINEAR)

NON_RANDOM = "non-random"
ESTIMATED = "estimated-from-first-post-batch"

CASE_UNCORRELATED = "uncorrelated"
CASE_CORRELATED = "correlated"

# Residual variance below this relative floor counts as noiseless; the engine
# then falls back to unit weights instead of dividing by ~zero.
_VARIANCE_FLOOR_RTOL = 1e-12


class Phase(Enum):
    PRE = PHASE_X
    ONE = PHASE_XZ
    TWO = PHASE_XZW


@dataclass(frozen=True)
class WeightSpec:
    """Initial choices that define the two segment weights after the event.

    sigma0_sq is the initial choice of the post-change error variance,
    theta0 / e0_zz the initial choices of the new coefficients and the new
    covariates' second moment. The pre-change weight is the reciprocal root
    of sigma_eps_bar_sq = theta0' e0_zz theta0 + sigma0_sq, the post-change
    weight the reciprocal root of sigma0_sq.
    """

    sigma0_sq: float
    theta0: np.ndarray
    e0_zz: np.ndarray
    convention: str = GRAM_SQUARED
    provenance: str = ESTIMATED

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=np.float64))
        object.__setattr__(self, "e0_zz", np.asarray(self.e0_zz, dtype=np.float64))
        if self.sigma0_sq <= 0.0:
            raise InvalidConfig("sigma0_sq must be positive")
        if self.convention not in CONVENTIONS:
            raise InvalidConfig(f"unknown weight convention {self.convention!r}")
        if self.sigma_eps_bar_sq < self.sigma0_sq - 1e-12 * self.sigma0_sq:
            raise InvalidConfig("e0_zz must be nonnegative definite")

    @property
    def sigma_eps_bar_sq(self) -> float:
        return float(self.theta0 @ self.e0_zz @ self.theta0 + self.sigma0_sq)

    @property
    def w1(self) -> float:
        return 1.0 / np.sqrt(self.sigma_eps_bar_sq)

    @property
    def w2(self) -> float:
        return 1.0 / np.sqrt(self.sigma0_sq)


@dataclass(frozen=True)
class SecondWeightSpec:
    """Initial choices taken at the second event (first batch exposing w).

    The three segment error variances nest: the final segment has sigma0_sq,
    the middle segment adds gamma0' e0_ww gamma0, and the first segment adds
    theta0' e0_zz theta0 on top of that.
    """

    sigma0_sq: float
    gamma0: np.ndarray
    theta0: np.ndarray
    e0_ww: np.ndarray
    e0_zz: np.ndarray
    provenance: str = ESTIMATED

    def __post_init__(self):
        for name in ("gamma0", "theta0", "e0_ww", "e0_zz"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.sigma0_sq <= 0.0:
            raise InvalidConfig("sigma0_sq must be positive")

    @property
    def sigma_mid_sq(self) -> float:
        return float(self.gamma0 @ self.e0_ww @ self.gamma0 + self.sigma0_sq)

    @property
    def sigma_pre_sq(self) -> float:
        return float(self.theta0 @ self.e0_zz @ self.theta0 + self.sigma_mid_sq)

    @property
    def w_pre(self) -> float:
        return 1.0 / np.sqrt(self.sigma_pre_sq)

    @property
    def w_mid(self) -> float:
        return 1.0 / np.sqrt(self.sigma_mid_sq)

    @property
    def w_post(self) -> float:
        return 1.0 / np.sqrt(self.sigma0_sq)


@dataclass(frozen=True)
class HomogenizationMap:
    """Estimated projections of missing covariate groups onto observed ones.

    b_hat maps z onto x, c_hat maps w onto x, d_hat maps w onto (x, z).
    Each is estimated once, on the first batch of the phase that revealed the
    group, and never refined.
    """

    b_hat: np.ndarray
    c_hat: np.ndarray | None = None
    d_hat: np.ndarray | None = None
    estimated_on: int = 0

    def __post_init__(self):
        object.__setattr__(self, "b_hat", np.asarray(self.b_hat, dtype=np.float64))
        if self.c_hat is not None:
            object.__setattr__(self, "c_hat", np.asarray(self.c_hat, dtype=np.float64))
        if self.d_hat is not None:
            object.__setattr__(self, "d_hat", np.asarray(self.d_hat, dtype=np.float64))


@dataclass(frozen=True)
class EstimateReport:
    """Coefficient estimates with plug-in covariance and stream bookkeeping."""

    beta: np.ndarray
    theta: np.ndarray | None
    gamma: np.ndarray | None
    theta_naive: np.ndarray | None
    cov_plugin: np.ndarray | None
    rho_hat: float
    n_total: int
    m_post: int
    case_label: str | None

    @property
    def coefficients(self) -> np.ndarray:
        parts = [self.beta]
        if self.theta is not None:
            parts.append(self.theta)
        if self.gamma is not None:
            parts.append(self.gamma)
        return np.concatenate(parts)


def _gram_weight(w: float, convention: str) -> float:
    return w * w if convention == GRAM_SQUARED else w


class AccumulatorState:
    """Single-writer accumulator: ingestion mutates, queries only read.

    Construct via new_stream(). The state is serializable (see hetstream.io)
    and reconstructible from batch statistics alone.
    """

    def __init__(
        self,
        schema: StreamSchema,
        weight_convention: str = GRAM_SQUARED,
        refine_maps: bool = True,
    ):
        if weight_convention not in CONVENTIONS:
            raise InvalidConfig(f"unknown weight convention {weight_convention!r}")
        self.schema = schema
        self.convention = weight_convention
        # refine_maps: keep re-estimating the projection maps from all
        # accumulated post-event cross products instead of freezing the
        # designated-batch estimates. A single-batch projection carries
        # O(1/sqrt(n)) noise that never averages out of the estimator, so
        # refinement is the default; the frozen mode reproduces the
        # estimate-once construction exactly.
        self.refine_maps = refine_maps
        self.phase = Phase.PRE
        self.weights: WeightSpec | None = None
        self.weights2: SecondWeightSpec | None = None
        self.homog: HomogenizationMap | None = None
        self.case_label: str | None = None
        self.k_index: int | None = None   # batch index of the last x-only batch
        self.m_index: int | None = None   # batch index of the last (x,z) batch
        self.batch_count = 0
        self._segments: list[BatchStats] = [BatchStats.zeros(schema.p)]
        self._b_forced = False   # projection supplied/forced: never refine it
        self._cd_forced = False
        self._sse = 0.0
        self._q_prev = 0.0

    # ------------------------------------------------------------------
    # weights and bookkeeping
    # ------------------------------------------------------------------

    def row_weights(self) -> tuple[float, ...]:
        """Row weight applied to each segment under the current phase."""
        if self.phase is Phase.PRE:
            return (1.0,)
        if self.phase is Phase.ONE:
            return (self.weights.w1, self.weights.w2)
        return (self.weights2.w_pre, self.weights2.w_mid, self.weights2.w_post)

    def gram_weights(self) -> tuple[float, ...]:
        return tuple(_gram_weight(w, self.convention) for w in self.row_weights())

    @property
    def n_total(self) -> int:
        return sum(seg.n for seg in self._segments)

    @property
    def m_post(self) -> int:
        return sum(seg.n for seg in self._segments[1:])

    @property
    def sse(self) -> float:
        return self._sse

    # Weighted cumulative matrices, assembled from the per-segment raw sums.
    # Rescaling frozen segments at a phase transition is implicit: weights
    # are applied here, at read time, which is algebraically identical.

    @property
    def v_x_pre(self) -> np.ndarray:
        return self.gram_weights()[0] * self._segments[0].xtx

    @property
    def v_x(self) -> np.ndarray:
        g = self.gram_weights()
        return sum(gi * seg.xtx for gi, seg in zip(g, self._segments))

    @property
    def v_xy(self) -> np.ndarray:
        g = self.gram_weights()
        return sum(gi * seg.xty for gi, seg in zip(g, self._segments))

    @property
    def v_xz(self) -> np.ndarray | None:
        if self.phase is Phase.PRE:
            return None
        g = self.gram_weights()
        return sum(gi * seg.xtz for gi, seg in zip(g[1:], self._segments[1:]))

    @property
    def v_z(self) -> np.ndarray | None:
        if self.phase is Phase.PRE:
            return None
        g = self.gram_weights()
        return sum(gi * seg.ztz for gi, seg in zip(g[1:], self._segments[1:]))

    @property
    def v_zy(self) -> np.ndarray | None:
        if self.phase is Phase.PRE:
            return None
        g = self.gram_weights()
        return sum(gi * seg.zty for gi, seg in zip(g[1:], self._segments[1:]))

    @property
    def wyy(self) -> float:
        w = self.row_weights()
        return float(sum(wi * wi * seg.yty for wi, seg in zip(w, self._segments)))

    @property
    def eta_tilde(self) -> np.ndarray:
        """Current coefficient vector (beta, theta[, gamma]); solves on read."""
        return self._solve_eta()

    # ------------------------------------------------------------------
    # ingestion
    # ------------------------------------------------------------------

    def ingest_pre_change(self, stats: BatchStats) -> "AccumulatorState":
        """Accumulate an x-only batch (weight 1 before any event)."""
        if self.phase is not Phase.PRE:
            raise PhaseMismatch("pre-change batch after a covariate addition")
        if stats.phase_tag != PHASE_X:
            raise PhaseMismatch(f"expected an x-only batch, got {stats.phase_tag!r}")
        if stats.p != self.schema.p:
            raise DimensionMismatch(f"batch has p={stats.p}, schema has p={self.schema.p}")
        self._segments[0] = merge(self._segments[0], stats)
        self.batch_count += 1
        self._sse_step(stats.yty)
        return self

    def begin_update_phase(
        self,
        first_post_stats: BatchStats,
        *,
        sigma0_sq: float | None = None,
        theta0=None,
        e0_zz=None,
        b_hat=None,
        assume_uncorrelated: bool = False,
    ) -> "AccumulatorState":
        """Transition to Phase.ONE with the first batch that exposes z.

        The projection B-hat and, unless all three initial choices are
        supplied, the weight spec are estimated on this batch before it is
        ingested as the first post-change batch. assume_uncorrelated forces
        B-hat to zero (the uncorrelated-case formulas).
        """
        if self.phase is not Phase.PRE:
            raise PhaseMismatch("stream already has an (x, z) phase")
        if first_post_stats.phase_tag != PHASE_XZ:
            raise PhaseMismatch("the event batch must carry exactly the x and z groups")
        p = self.schema.p
        q = first_post_stats.q
        if first_post_stats.p != p:
            raise DimensionMismatch(f"batch has p={first_post_stats.p}, schema has p={p}")
        if self.schema.q and self.schema.q != q:
            raise DimensionMismatch(f"batch has q={q}, schema declares q={self.schema.q}")
        self.schema = self.schema.with_q(q)

        if assume_uncorrelated:
            b = np.zeros((p, q))
            self._b_forced = True
        elif b_hat is not None:
            b = np.asarray(b_hat, dtype=np.float64)
            if b.shape != (p, q):
                raise DimensionMismatch(f"b_hat has shape {b.shape}, expected ({p}, {q})")
            self._b_forced = True
        else:
            try:
                b = linalg.solve_spd(first_post_stats.xtx, first_post_stats.xtz)
            except SingularMatrix as exc:
                raise SingularMatrix(
                    f"first post-change batch cannot identify the projection of z on x; "
                    f"it needs at least {p} observations with full-rank x "
                    f"(got n={first_post_stats.n})"
                ) from exc
        case = CASE_UNCORRELATED if not np.any(b) else CASE_CORRELATED

        overrides = (sigma0_sq, theta0, e0_zz)
        if all(v is not None for v in overrides):
            spec = WeightSpec(
                float(sigma0_sq), theta0, e0_zz,
                convention=self.convention, provenance=NON_RANDOM,
            )
        else:
            est_s, est_t, est_e = self._estimate_initial_choices(first_post_stats)
            spec = WeightSpec(
                float(sigma0_sq) if sigma0_sq is not None else est_s,
                theta0 if theta0 is not None else est_t,
                e0_zz if e0_zz is not None else est_e,
                convention=self.convention,
                provenance=ESTIMATED,
            )

        self.weights = spec
        self.homog = HomogenizationMap(b, estimated_on=self.batch_count + 1)
        self.case_label = case
        self.k_index = self.batch_count
        self.phase = Phase.ONE
        self._segments.append(BatchStats.zeros(p, q))
        self._sse_rebase()
        return self.ingest_post_change(first_post_stats)

    def _estimate_initial_choices(self, stats: BatchStats):
        """Per-batch fit of y on every observed group: the empirical initial
        choices of the error variance, new coefficients and second moment."""
        dim = stats.p + stats.q + stats.r
        if stats.n <= dim:
            raise SingularMatrix(
                f"estimating the initial weight choices needs at least {dim + 1} "
                f"observations in the event batch (got n={stats.n}); "
                f"supply non-random overrides to lift the requirement"
            )
        gram = stats.full_gram()
        moment = stats.full_moment()
        try:
            eta = linalg.solve_spd(gram, moment)
        except SingularMatrix as exc:
            raise SingularMatrix(
                "the event batch design is rank deficient; cannot estimate the "
                "initial weight choices"
            ) from exc
        rss = stats.yty - float(moment @ eta)
        sigma_sq = rss / (stats.n - dim)
        floor = _VARIANCE_FLOOR_RTOL * max(stats.yty / stats.n, 1.0)
        if sigma_sq <= floor:
            warnings.warn(
                "event-batch residual variance is ~0 (noiseless data?); "
                "falling back to unit weights",
                stacklevel=3,
            )
            return 1.0, np.zeros(stats.q), stats.ztz / stats.n
        theta0 = eta[stats.p : stats.p + stats.q]
        return float(sigma_sq), theta0, stats.ztz / stats.n

    def ingest_post_change(self, stats: BatchStats) -> "AccumulatorState":
        """Weighted accumulation of a batch carrying the current phase's groups."""
        if self.phase is Phase.PRE:
            raise PhaseMismatch("no covariate-addition event has happened yet")
        expected = self.phase.value
        if stats.phase_tag != expected:
            raise PhaseMismatch(
                f"expected a {expected!r} batch in this phase, got {stats.phase_tag!r}"
            )
        sch = self.schema
        if (stats.p, stats.q) != (sch.p, sch.q) or (expected == PHASE_XZW and stats.r != sch.r):
            raise DimensionMismatch(
                f"batch dims (p={stats.p}, q={stats.q}, r={stats.r}) do not match "
                f"schema (p={sch.p}, q={sch.q}, r={sch.r})"
            )
        self._segments[-1] = merge(self._segments[-1], stats)
        self.batch_count += 1
        w_last = self.row_weights()[-1]
        self._sse_step(w_last * w_last * stats.yty)
        return self

    def begin_second_update(
        self,
        first_post_stats: BatchStats,
        *,
        sigma0_sq: float | None = None,
        gamma0=None,
        theta0=None,
        e0_ww=None,
        e0_zz=None,
        assume_uncorrelated: bool | None = None,
    ) -> "AccumulatorState":
        """Transition to Phase.TWO with the first batch that exposes w.

        C-hat and D-hat are estimated on this batch; initial choices for the
        second weight spec are re-estimated here as well (or overridden).
        assume_uncorrelated defaults to the stream's existing case label.
        """
        if self.phase is not Phase.ONE:
            raise PhaseMismatch("a second update requires an active (x, z) phase")
        if first_post_stats.phase_tag != PHASE_XZW:
            raise PhaseMismatch("the second event batch must carry the x, z and w groups")
        p, q = self.schema.p, self.schema.q
        r = first_post_stats.r
        if (first_post_stats.p, first_post_stats.q) != (p, q):
            raise DimensionMismatch("second event batch does not match the (p, q) schema")
        if self.schema.r and self.schema.r != r:
            raise DimensionMismatch(f"batch has r={r}, schema declares r={self.schema.r}")
        self.schema = self.schema.with_r(r)

        if assume_uncorrelated is None:
            assume_uncorrelated = self.case_label == CASE_UNCORRELATED
        if assume_uncorrelated:
            c = np.zeros((p, r))
            d = np.zeros((p + q, r))
            self._cd_forced = True
        else:
            try:
                c = linalg.solve_spd(first_post_stats.xtx, first_post_stats.xtw)
                d = linalg.solve_spd(
                    first_post_stats.xz_gram(),
                    np.vstack([first_post_stats.xtw, first_post_stats.ztw]),
                )
            except SingularMatrix as exc:
                raise SingularMatrix(
                    f"second event batch cannot identify the projections of w; it "
                    f"needs at least {p + q} full-rank observations "
                    f"(got n={first_post_stats.n})"
                ) from exc

        overrides = (sigma0_sq, gamma0, theta0, e0_ww, e0_zz)
        if all(v is not None for v in overrides):
            spec = SecondWeightSpec(
                float(sigma0_sq), gamma0, theta0, e0_ww, e0_zz, provenance=NON_RANDOM
            )
        else:
            spec = self._estimate_second_choices(first_post_stats, sigma0_sq, gamma0, theta0, e0_ww, e0_zz)

        self.weights2 = spec
        self.homog = HomogenizationMap(
            self.homog.b_hat, c_hat=c, d_hat=d, estimated_on=self.homog.estimated_on
        )
        self.m_index = self.batch_count
        self.phase = Phase.TWO
        self._segments.append(BatchStats.zeros(p, q, r))
        self._sse_rebase()
        return self.ingest_post_change(first_post_stats)

    def _estimate_second_choices(self, stats, sigma0_sq, gamma0, theta0, e0_ww, e0_zz):
        p, q, r = stats.p, stats.q, stats.r
        dim = p + q + r
        if stats.n <= dim:
            raise SingularMatrix(
                f"estimating the second-event initial choices needs at least "
                f"{dim + 1} observations (got n={stats.n}); supply overrides"
            )
        try:
            eta = linalg.solve_spd(stats.full_gram(), stats.full_moment())
        except SingularMatrix as exc:
            raise SingularMatrix(
                "the second event batch design is rank deficient"
            ) from exc
        rss = stats.yty - float(stats.full_moment() @ eta)
        est_sigma = rss / (stats.n - dim)
        floor = _VARIANCE_FLOOR_RTOL * max(stats.yty / stats.n, 1.0)
        degenerate = est_sigma <= floor
        if degenerate:
            warnings.warn(
                "second-event residual variance is ~0; falling back to unit weights",
                stacklevel=3,
            )
        return SecondWeightSpec(
            sigma0_sq=float(sigma0_sq) if sigma0_sq is not None else (1.0 if degenerate else float(est_sigma)),
            gamma0=gamma0 if gamma0 is not None else (np.zeros(r) if degenerate else eta[p + q :]),
            theta0=theta0 if theta0 is not None else (np.zeros(q) if degenerate else eta[p : p + q]),
            e0_ww=e0_ww if e0_ww is not None else stats.wtw / stats.n,
            e0_zz=e0_zz if e0_zz is not None else stats.ztz / stats.n,
            provenance=ESTIMATED,
        )

    # ------------------------------------------------------------------
    # system assembly
    # ------------------------------------------------------------------

    def current_maps(self) -> HomogenizationMap:
        """Projection maps in effect for estimation.

        With refinement on, each map is re-estimated from every batch that
        observed its covariate group (weights cancel within a segment, so
        the pooled unweighted cross products are the natural estimator);
        supplied or forced maps and too-small accumulations fall back to the
        designated-batch record.
        """
        if self.homog is None:
            raise PhaseMismatch("no covariate-addition event has happened yet")
        if not self.refine_maps or self.phase is Phase.PRE:
            return self.homog
        b = self.homog.b_hat
        c, d = self.homog.c_hat, self.homog.d_hat
        if not self._b_forced:
            sxx = sum(seg.xtx for seg in self._segments[1:])
            sxz = sum(seg.xtz for seg in self._segments[1:])
            try:
                b = linalg.solve_spd(sxx, sxz)
            except SingularMatrix:
                pass
        if self.phase is Phase.TWO and not self._cd_forced:
            s2 = self._segments[2]
            try:
                c = linalg.solve_spd(s2.xtx, s2.xtw)
                d = linalg.solve_spd(s2.xz_gram(), np.vstack([s2.xtw, s2.ztw]))
            except SingularMatrix:
                pass
        return HomogenizationMap(b, c_hat=c, d_hat=d, estimated_on=self.homog.estimated_on)

    def _system(self) -> tuple[np.ndarray, np.ndarray]:
        """Bordered normal-equation system of the current phase.

        One estimating-equation row block per covariate group, summed over the
        phases where the group is observed, with each phase's homogenized
        prediction standing in for the unobserved groups.
        """
        p, q, r = self.schema.p, self.schema.q, self.schema.r
        if self.phase is Phase.PRE:
            s0 = self._segments[0]
            return s0.xtx.copy(), s0.xty.copy()
        if self.phase is Phase.ONE:
            g0, g1 = self.gram_weights()
            s0, s1 = self._segments
            b = self.current_maps().b_hat
            top = np.hstack([g0 * s0.xtx + g1 * s1.xtx, g0 * (s0.xtx @ b) + g1 * s1.xtz])
            bottom = np.hstack([g1 * s1.xtz.T, g1 * s1.ztz])
            rhs = np.concatenate([g0 * s0.xty + g1 * s1.xty, g1 * s1.zty])
            return np.vstack([top, bottom]), rhs
        g0, g1, g2 = self.gram_weights()
        s0, s1, s2 = self._segments
        maps = self.current_maps()
        b, c, d = maps.b_hat, maps.c_hat, maps.d_hat
        dx, dz = d[:p], d[p:]
        a_xx = g0 * s0.xtx + g1 * s1.xtx + g2 * s2.xtx
        a_xz = g0 * (s0.xtx @ b) + g1 * s1.xtz + g2 * s2.xtz
        a_xw = g0 * (s0.xtx @ c) + g1 * (s1.xtx @ dx + s1.xtz @ dz) + g2 * s2.xtw
        a_zx = g1 * s1.xtz.T + g2 * s2.xtz.T
        a_zz = g1 * s1.ztz + g2 * s2.ztz
        a_zw = g1 * (s1.xtz.T @ dx + s1.ztz @ dz) + g2 * s2.ztw
        a_wx = g2 * s2.xtw.T
        a_wz = g2 * s2.ztw.T
        a_ww = g2 * s2.wtw
        a = np.block([[a_xx, a_xz, a_xw], [a_zx, a_zz, a_zw], [a_wx, a_wz, a_ww]])
        rhs = np.concatenate(
            [
                g0 * s0.xty + g1 * s1.xty + g2 * s2.xty,
                g1 * s1.zty + g2 * s2.zty,
                g2 * s2.wty,
            ]
        )
        return a, rhs

    def _homog_embeddings(self) -> list[np.ndarray]:
        """Per segment, the map from observed covariates to the homogenized
        covariate vector (identity on observed groups, hat-matrices on the
        rest)."""
        p, q, r = self.schema.p, self.schema.q, self.schema.r
        if self.phase is Phase.PRE:
            return [np.eye(p)]
        maps = self.current_maps()
        if self.phase is Phase.ONE:
            return [np.hstack([np.eye(p), maps.b_hat]), np.eye(p + q)]
        return [
            np.hstack([np.eye(p), maps.b_hat, maps.c_hat]),
            np.hstack([np.eye(p + q), maps.d_hat]),
            np.eye(p + q + r),
        ]

    def _sse_components(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Gram matrix, moment vector and response norm of the weighted
        homogenized covariate rows. Always squared row weights: the weighted
        rows themselves carry the weight, whatever the estimator convention."""
        maps = self._homog_embeddings()
        dim = maps[0].shape[1]
        gram = np.zeros((dim, dim))
        moment = np.zeros(dim)
        wyy = 0.0
        for w, seg, emb in zip(self.row_weights(), self._segments, maps):
            u = w * w
            if seg.n == 0:
                continue
            seg_gram = seg.full_gram()
            seg_moment = seg.full_moment()
            gram += u * (emb.T @ seg_gram @ emb)
            moment += u * (emb.T @ seg_moment)
            wyy += u * seg.yty
        return gram, moment, wyy

    def _sse_quadratic(self) -> float:
        gram, moment, _ = self._sse_components()
        if not np.any(moment):
            return 0.0
        return float(moment @ linalg.solve_consistent(gram, moment))

    def _sse_step(self, wyy_add: float) -> None:
        # Two-term update: previous quadratic term comes back, the refreshed
        # one leaves; per-batch residual terms always sum to the weighted
        # response norm of the batch.
        q_new = self._sse_quadratic()
        self._sse += wyy_add + self._q_prev - q_new
        self._q_prev = q_new

    def _sse_rebase(self) -> None:
        # Weights and homogenization maps changed: re-derive the running
        # residual sum for the frozen segments under the new regime.
        gram, moment, wyy = self._sse_components()
        if np.any(moment):
            q = float(moment @ linalg.solve_consistent(gram, moment))
        else:
            q = 0.0
        self._sse = wyy - q
        self._q_prev = q

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def _solve_eta(self) -> np.ndarray:
        if self.n_total == 0:
            raise InsufficientData("no data ingested yet")
        if self.phase is not Phase.PRE and self.m_post == 0:
            raise InsufficientData("no post-change observations; theta is unidentified")
        a, rhs = self._system()
        if self.phase is Phase.PRE:
            return linalg.solve_spd(a, rhs)
        return linalg.solve_general(a, rhs)

    def estimate(self) -> EstimateReport:
        """Current coefficient estimates with plug-in covariance."""
        eta = self._solve_eta()
        p, q = self.schema.p, self.schema.q
        theta = gamma = None
        if self.phase is not Phase.PRE:
            theta = eta[p : p + q]
        if self.phase is Phase.TWO:
            gamma = eta[p + q :]
        try:
            naive = self.naive_theta()
        except (InsufficientData, SingularMatrix, PhaseMismatch):
            naive = None
        try:
            cov = self.asymptotic_covariance()
        except (InsufficientData, SingularMatrix):
            cov = None
        n = self.n_total
        return EstimateReport(
            beta=eta[:p],
            theta=theta,
            gamma=gamma,
            theta_naive=naive,
            cov_plugin=cov,
            rho_hat=self.m_post / n if n else 0.0,
            n_total=n,
            m_post=self.m_post,
            case_label=self.case_label,
        )

    def naive_theta(self) -> np.ndarray:
        """Theta block of the plain OLS fit on the newest segment only."""
        if self.phase is Phase.PRE:
            raise PhaseMismatch("theta does not exist before the first event")
        seg = self._segments[-1]
        if seg.n == 0:
            raise InsufficientData("the current segment has no data yet")
        eta = linalg.solve_spd(seg.full_gram(), seg.full_moment())
        p, q = self.schema.p, self.schema.q
        return eta[p : p + q]

    def update_sse(self) -> float:
        """Running residual sum of squares of the weighted homogenized fit."""
        return max(self._sse, 0.0)

    def _segment_residual_variance(self, index: int) -> float | None:
        """Residual variance of the plain OLS fit within one segment."""
        seg = self._segments[index]
        dim = seg.p + seg.q + seg.r
        if seg.n <= dim:
            return None
        try:
            eta = linalg.solve_spd(seg.full_gram(), seg.full_moment())
        except SingularMatrix:
            return None
        rss = seg.yty - float(seg.full_moment() @ eta)
        return max(rss, 0.0) / (seg.n - dim)

    def asymptotic_covariance(self) -> np.ndarray:
        """Plug-in sandwich covariance of the coefficient estimate.

        Scaled to the estimate itself (the root-N normalization is divided
        back out). In the uncorrelated case the cross-group blocks are zero
        by construction.
        """
        n = self.n_total
        if n == 0:
            raise InsufficientData("no data ingested yet")
        p, q, r = self.schema.p, self.schema.q, self.schema.r
        if self.phase is Phase.PRE:
            s0 = self._segments[0]
            sig = self._segment_residual_variance(0)
            if sig is None:
                raise InsufficientData("need more than p pre-change observations")
            return sig * linalg.solve_spd(s0.xtx, np.eye(p))

        segs = self._segments
        counts = np.array([seg.n for seg in segs], dtype=np.float64)
        fracs = counts / n
        grams = np.array(self.gram_weights())

        sigma_post = self._segment_residual_variance(len(segs) - 1)
        if sigma_post is None:
            raise InsufficientData(
                "the newest segment is too small to estimate the error variance"
            )
        eta = self._solve_eta()
        theta = eta[p : p + q]

        # moment estimates from the unweighted segment sums
        exx = sum(seg.xtx for seg in segs) / n
        m_z = counts[1:].sum()
        exz = sum(seg.xtz for seg in segs[1:]) / m_z
        ezz = sum(seg.ztz for seg in segs[1:]) / m_z

        if self.phase is Phase.ONE:
            sigma_pre = self._segment_residual_variance(0)
            if sigma_pre is None:
                sigma_pre = float(theta @ ezz @ theta) + sigma_post
            groups = [p, q]
            moments = [[exx, exz], [exz.T, ezz]]
            seg_of_group = [0, 1]      # first segment in which each group appears
            sigmas = [sigma_pre, sigma_post]
        else:
            gamma = eta[p + q :]
            s2 = segs[2]
            eww = s2.wtw / s2.n
            exw = s2.xtw / s2.n
            ezw = s2.ztw / s2.n
            sigma_mid = self._segment_residual_variance(1)
            if sigma_mid is None:
                sigma_mid = float(gamma @ eww @ gamma) + sigma_post
            sigma_pre = self._segment_residual_variance(0)
            if sigma_pre is None:
                sigma_pre = float(theta @ ezz @ theta) + sigma_mid
            groups = [p, q, r]
            moments = [[exx, exz, exw], [exz.T, ezz, ezw], [exw.T, ezw.T, eww]]
            seg_of_group = [0, 1, 2]
            sigmas = [sigma_pre, sigma_mid, sigma_post]

        n_groups = len(groups)
        n_segs = len(segs)
        c_row = [float(np.sum(fracs[s:] * grams[s:])) for s in seg_of_group]
        d_row = [
            float(np.sum(fracs[s:] * grams[s:] ** 2 * np.array(sigmas[s:])))
            for s in seg_of_group
        ]
        zero_cross = self.case_label == CASE_UNCORRELATED

        def blockmat(scale_of):
            rows = []
            for i in range(n_groups):
                row = []
                for j in range(n_groups):
                    blk = moments[i][j]
                    if zero_cross and i != j:
                        blk = np.zeros_like(blk)
                    row.append(scale_of(i, j) * blk)
                rows.append(row)
            return np.block(rows)

        omega = blockmat(lambda i, j: c_row[i])
        phi = blockmat(lambda i, j: d_row[max(i, j)])
        omega_inv = linalg.solve_general(omega, np.eye(sum(groups)))
        cov = omega_inv @ phi @ omega_inv.T / n
        return linalg.symmetrize(cov)


# ----------------------------------------------------------------------
# operation-style aliases over the state methods
# ----------------------------------------------------------------------

def new_stream(
    schema: StreamSchema,
    weight_convention: str = GRAM_SQUARED,
    refine_maps: bool = True,
) -> AccumulatorState:
    """Fresh Phase.PRE state with zeroed accumulators."""
    return AccumulatorState(
        schema, weight_convention=weight_convention, refine_maps=refine_maps
    )


def ingest_pre_change(state: AccumulatorState, stats: BatchStats) -> AccumulatorState:
    return state.ingest_pre_change(stats)


def begin_update_phase(state: AccumulatorState, first_post_stats: BatchStats, **options) -> AccumulatorState:
    return state.begin_update_phase(first_post_stats, **options)


def ingest_post_change(state: AccumulatorState, stats: BatchStats) -> AccumulatorState:
    return state.ingest_post_change(stats)


def begin_second_update(state: AccumulatorState, first_post_stats: BatchStats, **options) -> AccumulatorState:
    return state.begin_second_update(first_post_stats, **options)


def estimate(state: AccumulatorState) -> EstimateReport:
    return state.estimate()


def naive_theta(state: AccumulatorState) -> np.ndarray:
    return state.naive_theta()


def update_sse(state: AccumulatorState) -> float:
    return state.update_sse()


def asymptotic_covariance(state: AccumulatorState) -> np.ndarray:
    return state.asymptotic_covariance()
