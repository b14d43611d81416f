"""Shared fixtures: random stream cases and independent pooled-data oracles.

The oracles deliberately work from raw rows kept by the test harness, not
from the engine's accumulators, so every identity check compares two
genuinely different computation paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import hetstream as hs
from hetstream.engine import GRAM_SQUARED, PAPER_LINEAR


def ar1_cov(dim: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass
class RawSegments:
    """Raw rows grouped by model regime, as the oracle's memory."""

    x: list[np.ndarray] = field(default_factory=lambda: [[], [], []])
    z: list[np.ndarray] = field(default_factory=lambda: [[], [], []])
    w: list[np.ndarray] = field(default_factory=lambda: [[], [], []])
    y: list[np.ndarray] = field(default_factory=lambda: [[], [], []])

    def add(self, seg, x, y, z=None, w=None):
        self.x[seg].append(x)
        self.y[seg].append(y)
        if z is not None:
            self.z[seg].append(z)
        if w is not None:
            self.w[seg].append(w)

    def stacked(self, seg):
        if not self.x[seg]:
            return None
        return (
            np.vstack(self.x[seg]),
            np.vstack(self.z[seg]) if self.z[seg] else None,
            np.vstack(self.w[seg]) if self.w[seg] else None,
            np.concatenate(self.y[seg]),
        )


def oracle_one_shot(state: hs.AccumulatorState, raw: RawSegments, return_system: bool = False):
    """Pooled weighted one-shot solve assembled from raw rows."""
    a, rhs = oracle_system(state, raw)
    eta = np.linalg.solve(a, rhs)
    if return_system:
        return eta, (a, rhs)
    return eta


def oracle_system(state: hs.AccumulatorState, raw: RawSegments) -> tuple[np.ndarray, np.ndarray]:
    """Pooled weighted bordered system assembled from raw rows."""
    p, q = state.schema.p, state.schema.q
    if state.phase is hs.Phase.PRE:
        x, _, _, y = raw.stacked(0)
        return x.T @ x, x.T @ y
    grams = state.gram_weights()
    if state.phase is hs.Phase.ONE:
        g0, g1 = grams
        b = state.current_maps().b_hat
        pre = raw.stacked(0)
        x1, z1, _, y1 = raw.stacked(1)
        if pre is None:
            vxk = np.zeros((p, p))
            vxy0 = np.zeros(p)
        else:
            x0, _, _, y0 = pre
            vxk = g0 * x0.T @ x0
            vxy0 = g0 * x0.T @ y0
        a = np.block(
            [
                [vxk + g1 * x1.T @ x1, vxk @ b + g1 * x1.T @ z1],
                [g1 * z1.T @ x1, g1 * z1.T @ z1],
            ]
        )
        rhs = np.concatenate([vxy0 + g1 * x1.T @ y1, g1 * z1.T @ y1])
        return a, rhs
    g0, g1, g2 = grams
    maps = state.current_maps()
    b, c, d = maps.b_hat, maps.c_hat, maps.d_hat
    dx, dz = d[:p], d[p:]
    pre = raw.stacked(0)
    mid = raw.stacked(1)
    x2, z2, w2, y2 = raw.stacked(2)
    axx = g2 * x2.T @ x2
    axz = g2 * x2.T @ z2
    axw = g2 * x2.T @ w2
    azx = g2 * z2.T @ x2
    azz = g2 * z2.T @ z2
    azw = g2 * z2.T @ w2
    rx = g2 * x2.T @ y2
    rz = g2 * z2.T @ y2
    rw = g2 * w2.T @ y2
    if mid is not None:
        x1, z1, _, y1 = mid
        axx += g1 * x1.T @ x1
        axz += g1 * x1.T @ z1
        axw += g1 * (x1.T @ x1 @ dx + x1.T @ z1 @ dz)
        azx += g1 * z1.T @ x1
        azz += g1 * z1.T @ z1
        azw += g1 * (z1.T @ x1 @ dx + z1.T @ z1 @ dz)
        rx += g1 * x1.T @ y1
        rz += g1 * z1.T @ y1
    if pre is not None:
        x0, _, _, y0 = pre
        axx += g0 * x0.T @ x0
        axz += g0 * x0.T @ x0 @ b
        axw += g0 * x0.T @ x0 @ c
        rx += g0 * x0.T @ y0
    a = np.block(
        [
            [axx, axz, axw],
            [azx, azz, azw],
            [g2 * w2.T @ x2, g2 * w2.T @ z2, g2 * w2.T @ w2],
        ]
    )
    return a, np.concatenate([rx, rz, rw])


def oracle_sse_direct(state: hs.AccumulatorState, raw: RawSegments) -> float:
    """Residual sum from the stacked weighted homogenized design."""
    p, q = state.schema.p, state.schema.q
    weights = state.row_weights()
    designs, responses = [], []
    if state.phase is hs.Phase.PRE:
        x, _, _, y = raw.stacked(0)
        designs.append(x)
        responses.append(y)
    elif state.phase is hs.Phase.ONE:
        w1, w2 = weights
        b = state.current_maps().b_hat
        pre = raw.stacked(0)
        if pre is not None:
            x0, _, _, y0 = pre
            designs.append(w1 * np.hstack([x0, x0 @ b]))
            responses.append(w1 * y0)
        x1, z1, _, y1 = raw.stacked(1)
        designs.append(w2 * np.hstack([x1, z1]))
        responses.append(w2 * y1)
    else:
        w0, w1, w2 = weights
        maps = state.current_maps()
        b, c, d = maps.b_hat, maps.c_hat, maps.d_hat
        pre = raw.stacked(0)
        if pre is not None:
            x0, _, _, y0 = pre
            designs.append(w0 * np.hstack([x0, x0 @ b, x0 @ c]))
            responses.append(w0 * y0)
        mid = raw.stacked(1)
        if mid is not None:
            x1, z1, _, y1 = mid
            designs.append(w1 * np.hstack([x1, z1, np.hstack([x1, z1]) @ d]))
            responses.append(w1 * y1)
        x2, z2, w2_, y2 = raw.stacked(2)
        designs.append(w2 * np.hstack([x2, z2, w2_]))
        responses.append(w2 * y2)
    s = np.vstack(designs)
    ytil = np.concatenate(responses)
    moment = s.T @ ytil
    gram = s.T @ s
    try:
        sol = np.linalg.solve(gram, moment)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(gram, moment, rcond=None)
    return float(ytil @ ytil - moment @ sol)


def oracle_f_factor(state: hs.AccumulatorState, raw: RawSegments) -> np.ndarray:
    """Directly assembled Schur-complement factor from raw rows."""
    g = state.gram_weights()
    b = state.current_maps().b_hat
    pre = raw.stacked(0)
    x1, z1, _, _ = raw.stacked(1)
    vz = g[1] * z1.T @ z1
    vzx = g[1] * z1.T @ x1
    vxz = g[1] * x1.T @ z1
    vx = g[1] * x1.T @ x1
    coupling = vxz.copy()
    if pre is not None:
        x0 = pre[0]
        vx = vx + g[0] * x0.T @ x0
        coupling = coupling + g[0] * x0.T @ x0 @ b
    return vz - vzx @ np.linalg.solve(vx, coupling)


@dataclass
class StreamCase:
    """One randomized stream scenario for the identity sweeps."""

    p: int
    q: int
    r: int
    k: int
    m: int
    batch_sizes: list[int]
    sigma: float
    convention: str
    overrides: bool
    uncorrelated: bool
    seed: int
    refine: bool = True


def random_stream_case(rng: np.random.Generator, allow_second: bool = True) -> StreamCase:
    p = int(rng.integers(1, 6))
    q = int(rng.integers(1, 4))
    r = int(rng.integers(1, 3)) if (allow_second and rng.random() < 0.3) else 0
    total = int(rng.integers(5, 31))
    k = int(rng.integers(0, max(1, total - (3 if r else 1))))
    m = int(rng.integers(1, max(2, total - k - 1))) if r else 0
    overrides = bool(rng.random() < 0.5)
    uncorrelated = bool(rng.random() < 0.3)
    dim = p + q + r
    sizes = []
    for j in range(1, total + 1):
        first_of_phase = j == k + 1 or (r and j == k + m + 1)
        if first_of_phase and not overrides:
            sizes.append(int(rng.integers(dim + 2, dim + 12)))
        elif first_of_phase:
            # projections still need a full-rank batch
            sizes.append(int(rng.integers(dim + 1, dim + 8)))
        else:
            sizes.append(int(rng.integers(1, dim + 8)))
    return StreamCase(
        p=p, q=q, r=r, k=k, m=m, batch_sizes=sizes, sigma=float(rng.uniform(0.3, 2.0)),
        convention=GRAM_SQUARED if rng.random() < 0.5 else PAPER_LINEAR,
        overrides=overrides, uncorrelated=uncorrelated,
        seed=int(rng.integers(0, 2**31)),
        refine=bool(rng.random() < 0.7),
    )


def run_stream_case(case: StreamCase, check):
    """Drive the engine through the case, calling check(state, raw, j) after
    every ingested batch."""
    rng = np.random.default_rng(case.seed)
    dim = case.p + case.q + case.r
    chol = np.linalg.cholesky(ar1_cov(dim))
    truth = rng.normal(size=dim)
    state = hs.new_stream(
        hs.StreamSchema(case.p),
        weight_convention=case.convention,
        refine_maps=case.refine,
    )
    raw = RawSegments()
    p, q, r = case.p, case.q, case.r

    options = {}
    if case.overrides:
        sig_full = ar1_cov(dim)
        options = dict(
            sigma0_sq=case.sigma**2,
            theta0=truth[p : p + q],
            e0_zz=sig_full[p : p + q, p : p + q],
        )
    for j, n in enumerate(case.batch_sizes, start=1):
        rows = rng.standard_normal((n, dim)) @ chol.T
        y = rows @ truth + rng.normal(scale=case.sigma, size=n)
        x = rows[:, :p]
        z = rows[:, p : p + q]
        w = rows[:, p + q :]
        if j <= case.k:
            raw.add(0, x, y)
            state.ingest_pre_change(hs.compress_batch(x, y, hs.StreamSchema(p)))
        elif j == case.k + 1:
            raw.add(1, x, y, z=z)
            state.begin_update_phase(
                hs.compress_batch(x, y, hs.StreamSchema(p, q), z_rows=z),
                assume_uncorrelated=case.uncorrelated,
                **options,
            )
        elif not r or j <= case.k + case.m:
            raw.add(1, x, y, z=z)
            state.ingest_post_change(hs.compress_batch(x, y, hs.StreamSchema(p, q), z_rows=z))
        elif j == case.k + case.m + 1:
            raw.add(2, x, y, z=z, w=w)
            state.begin_second_update(
                hs.compress_batch(x, y, hs.StreamSchema(p, q, r), z_rows=z, w_rows=w)
            )
        else:
            raw.add(2, x, y, z=z, w=w)
            state.ingest_post_change(
                hs.compress_batch(x, y, hs.StreamSchema(p, q, r), z_rows=z, w_rows=w)
            )
        check(state, raw, j)
    return state, raw


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)
