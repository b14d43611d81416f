"""Persistence and text formats: state snapshots, batch CSVs, config files.

The snapshot is a versioned .npz archive; every float travels as a float64
array entry, so counts round-trip bit exactly and reals to full precision.
Batch CSVs carry a header row x1..xp[,z1..zq][,w1..wr],y with one observation
per line, '.' decimals and no missing cells.
"""

from __future__ import annotations

import csv
import json
import re

import numpy as np

from .batchstats import BatchStats, StreamSchema
from .engine import (
    AccumulatorState,
    HomogenizationMap,
    Phase,
    SecondWeightSpec,
    WeightSpec,
)
from .errors import InvalidConfig, NonFiniteData, SchemaMismatch

SNAPSHOT_VERSION = 1

_SEG_FIELDS = ("xtx", "xty", "xtz", "ztz", "zty", "xtw", "ztw", "wtw", "wty")


def save_state(state: AccumulatorState, path) -> None:
    """Write a versioned snapshot of the accumulator to ``path`` (.npz)."""
    meta = {
        "version": SNAPSHOT_VERSION,
        "phase": state.phase.value,
        "convention": state.convention,
        "case_label": state.case_label,
        "refine_maps": state.refine_maps,
        "b_forced": state._b_forced,
        "cd_forced": state._cd_forced,
        "k_index": state.k_index,
        "m_index": state.m_index,
        "batch_count": state.batch_count,
        "schema": {
            "p": state.schema.p,
            "q": state.schema.q,
            "r": state.schema.r,
            "names": list(state.schema.names),
        },
        "segments": [
            {"n": seg.n, "phase_tag": seg.phase_tag} for seg in state._segments
        ],
        "weights": None,
        "weights2": None,
        "homog": None,
    }
    arrays: dict[str, np.ndarray] = {
        "scalars": np.array([state._sse, state._q_prev], dtype=np.float64),
        "seg_yty": np.array([seg.yty for seg in state._segments], dtype=np.float64),
    }
    for i, seg in enumerate(state._segments):
        for name in _SEG_FIELDS:
            block = getattr(seg, name)
            if block is not None:
                arrays[f"seg{i}_{name}"] = np.asarray(block, dtype=np.float64)
    if state.weights is not None:
        meta["weights"] = {"provenance": state.weights.provenance}
        arrays["w_sigma0_sq"] = np.array([state.weights.sigma0_sq])
        arrays["w_theta0"] = state.weights.theta0
        arrays["w_e0_zz"] = state.weights.e0_zz
    if state.weights2 is not None:
        meta["weights2"] = {"provenance": state.weights2.provenance}
        arrays["w2_sigma0_sq"] = np.array([state.weights2.sigma0_sq])
        arrays["w2_gamma0"] = state.weights2.gamma0
        arrays["w2_theta0"] = state.weights2.theta0
        arrays["w2_e0_ww"] = state.weights2.e0_ww
        arrays["w2_e0_zz"] = state.weights2.e0_zz
    if state.homog is not None:
        meta["homog"] = {"estimated_on": state.homog.estimated_on}
        arrays["h_b"] = state.homog.b_hat
        if state.homog.c_hat is not None:
            arrays["h_c"] = state.homog.c_hat
            arrays["h_d"] = state.homog.d_hat
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_state(path) -> AccumulatorState:
    """Rebuild an accumulator from a snapshot written by save_state."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]))
        if meta["version"] != SNAPSHOT_VERSION:
            raise InvalidConfig(f"unsupported snapshot version {meta['version']}")
        sch = meta["schema"]
        schema = StreamSchema(sch["p"], sch["q"], sch["r"], tuple(sch["names"]))
        state = AccumulatorState(
            schema,
            weight_convention=meta["convention"],
            refine_maps=meta["refine_maps"],
        )
        state.phase = Phase(meta["phase"])
        state.case_label = meta["case_label"]
        state._b_forced = meta["b_forced"]
        state._cd_forced = meta["cd_forced"]
        state.k_index = meta["k_index"]
        state.m_index = meta["m_index"]
        state.batch_count = meta["batch_count"]
        state._sse, state._q_prev = (float(v) for v in data["scalars"])
        segments = []
        for i, seg_meta in enumerate(meta["segments"]):
            blocks = {
                name: data[f"seg{i}_{name}"]
                for name in _SEG_FIELDS
                if f"seg{i}_{name}" in data
            }
            segments.append(
                BatchStats(
                    n=seg_meta["n"],
                    phase_tag=seg_meta["phase_tag"],
                    yty=float(data["seg_yty"][i]),
                    **blocks,
                )
            )
        state._segments = segments
        if meta["weights"] is not None:
            state.weights = WeightSpec(
                sigma0_sq=float(data["w_sigma0_sq"][0]),
                theta0=data["w_theta0"],
                e0_zz=data["w_e0_zz"],
                convention=meta["convention"],
                provenance=meta["weights"]["provenance"],
            )
        if meta["weights2"] is not None:
            state.weights2 = SecondWeightSpec(
                sigma0_sq=float(data["w2_sigma0_sq"][0]),
                gamma0=data["w2_gamma0"],
                theta0=data["w2_theta0"],
                e0_ww=data["w2_e0_ww"],
                e0_zz=data["w2_e0_zz"],
                provenance=meta["weights2"]["provenance"],
            )
        if meta["homog"] is not None:
            state.homog = HomogenizationMap(
                b_hat=data["h_b"],
                c_hat=data["h_c"] if "h_c" in data else None,
                d_hat=data["h_d"] if "h_d" in data else None,
                estimated_on=meta["homog"]["estimated_on"],
            )
    return state


# ----------------------------------------------------------------------
# batch CSV format
# ----------------------------------------------------------------------

_COL_RE = re.compile(r"^([xzw])(\d+)$")


def _parse_header(fields: list[str]) -> tuple[int, int, int]:
    if not fields or fields[-1] != "y":
        raise SchemaMismatch("batch CSV header must end with the response column 'y'")
    counts = {"x": 0, "z": 0, "w": 0}
    order = "xzw"
    seen_group = 0
    for name in fields[:-1]:
        m = _COL_RE.match(name)
        if not m:
            raise SchemaMismatch(f"unexpected column name {name!r}")
        group, idx = m.group(1), int(m.group(2))
        g = order.index(group)
        if g < seen_group:
            raise SchemaMismatch("columns must appear in x, z, w order")
        seen_group = g
        counts[group] += 1
        if idx != counts[group]:
            raise SchemaMismatch(f"column {name!r} out of sequence")
    if counts["x"] == 0:
        raise SchemaMismatch("batch CSV needs at least one x column")
    if counts["w"] and not counts["z"]:
        raise SchemaMismatch("w columns require z columns")
    return counts["x"], counts["z"], counts["w"]


def read_batch_csv(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None, np.ndarray]:
    """Read one batch; returns (x, z, w, y) with z/w None when absent.

    Schema violations abort with the offending 1-based line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: line 1: empty file") from None
        p, q, r = _parse_header([h.strip() for h in header])
        width = p + q + r + 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise SchemaMismatch(
                    f"{path}: line {lineno}: expected {width} cells, got {len(row)}"
                )
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise SchemaMismatch(
                    f"{path}: line {lineno}: non-numeric or missing cell"
                ) from None
    if not rows:
        raise SchemaMismatch(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0][0]) + 2
        raise NonFiniteData(f"{path}: line {bad}: non-finite value")
    x = data[:, :p]
    z = data[:, p : p + q] if q else None
    w = data[:, p + q : p + q + r] if r else None
    y = data[:, -1]
    return x, z, w, y


def write_batch_csv(path, x, y, z=None, w=None) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    cols = [x]
    names = [f"x{i + 1}" for i in range(x.shape[1])]
    if z is not None:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        cols.append(z)
        names += [f"z{i + 1}" for i in range(z.shape[1])]
    if w is not None:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        cols.append(w)
        names += [f"w{i + 1}" for i in range(w.shape[1])]
    names.append("y")
    data = np.hstack(cols + [y.reshape(-1, 1)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ----------------------------------------------------------------------
# flat key = value config files
# ----------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` text; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}: line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise InvalidConfig(f"{path}: line {lineno}: empty key")
            values[key] = value.strip()
    return values


def _vector(text: str) -> tuple[float, ...]:
    parts = [piece for piece in text.replace(" ", "").split(",") if piece]
    return tuple(float(piece) for piece in parts)


def config_to_simconfig(values: dict[str, str], seed_override: int | None = None):
    """Build a SimConfig from config-file values; names missing keys."""
    from .simlab import SimConfig

    required = ["p", "q", "beta", "theta", "sigma_sq", "n", "k", "j_max"]
    for key in required:
        if key not in values:
            raise InvalidConfig(f"missing config key {key!r}")
    try:
        kwargs = dict(
            p=int(values["p"]),
            q=int(values["q"]),
            beta=_vector(values["beta"]),
            theta=_vector(values["theta"]),
            sigma_sq=float(values["sigma_sq"]),
            n=int(values["n"]),
            k=int(values["k"]),
            j_max=int(values["j_max"]),
        )
        if "r" in values:
            kwargs["r"] = int(values["r"])
        if "gamma" in values:
            kwargs["gamma"] = _vector(values["gamma"])
        if "m" in values:
            kwargs["m"] = int(values["m"])
        if "corr_case" in values:
            kwargs["corr_case"] = values["corr_case"]
        if "rho_base" in values:
            kwargs["rho_base"] = float(values["rho_base"])
        if "replications" in values:
            kwargs["replications"] = int(values["replications"])
        if "seed" in values:
            kwargs["seed"] = int(values["seed"])
        if "a" in values:
            kwargs["a"] = float(values["a"])
        if "oracle_weights" in values:
            kwargs["oracle_weights"] = values["oracle_weights"].lower() in ("1", "true", "yes")
        if "weight_convention" in values:
            kwargs["weight_convention"] = values["weight_convention"]
    except ValueError as exc:
        raise InvalidConfig(f"malformed config value: {exc}") from exc
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return SimConfig(**kwargs)
