"""File formats: long-format panels, holdout plans, market data, configs, reports.

Every float is written with ``repr`` so a write/read round trip is lossless.
"""
from __future__ import annotations

import configparser
import csv
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .cp import SolverConfig
from .errors import ConfigError, ParseError, StructuralError
from .masking import REGIMES, HoldoutPlan
from .pipeline import ActConfig
from .pricing import MarketData
from .smoothing import SmootherSpec
from .synth import rank_normalize
from .tensor import MaskedTensor

PANEL_HEADER = ("month", "firm_id", "characteristic", "value")
PLAN_HEADER = ("t_index", "firm_id", "characteristic", "true_value")
_MONTH = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")


def _fmt(v: float) -> str:
    return repr(float(v))


def _float(text, path, line, col, what="value") -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, col, f"{what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise ParseError(path, line, col, f"{what} must be finite, got {text!r}")
    return v


def _check_header(path, row, expected):
    if row is None:
        raise ParseError(path, 1, 1, "file is empty")
    got = tuple(c.strip() for c in row)
    if got[: len(expected)] != expected or len(got) != len(expected):
        raise ParseError(path, 1, 1, f"expected header {','.join(expected)}, got {','.join(got)}")


# ---------------------------------------------------------------- panels

def read_panel(path, normalize: bool = False) -> MaskedTensor:
    """Parse a long-format panel CSV into a MaskedTensor.

    An empty value declares the labels without observing the cell.

    Months sort chronologically (``YYYY-MM`` sorts that way as text), firms
    and characteristics lexicographically. With `normalize`, each (t, l)
    cross-section is rank-transformed to [-0.5, 0.5].
    """
    path = Path(path)
    rows = []
    seen = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), PANEL_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, min(len(row), 4) + 1, f"expected 4 fields, got {len(row)}")
            month, firm, char, value = (c.strip() for c in row)
            if not _MONTH.match(month):
                raise ParseError(path, lineno, 1, f"month {month!r} is not YYYY-MM")
            if not firm:
                raise ParseError(path, lineno, 2, "empty firm_id")
            if not char:
                raise ParseError(path, lineno, 3, "empty characteristic")
            v = np.nan if value == "" else _float(value, path, lineno, 4)
            key = (month, firm, char)
            if key in seen:
                raise ParseError(path, lineno, 1, f"duplicate cell {month},{firm},{char} (first on line {seen[key]})")
            seen[key] = lineno
            rows.append((month, firm, char, v))
    months = sorted({r[0] for r in rows})
    firms = sorted({r[1] for r in rows})
    chars = sorted({r[2] for r in rows})
    mi = {m: i for i, m in enumerate(months)}
    fi = {f: i for i, f in enumerate(firms)}
    ci = {c: i for i, c in enumerate(chars)}
    values = np.full((len(months), len(firms), len(chars)), np.nan)
    mask = np.zeros(values.shape, dtype=bool)
    for month, firm, char, v in rows:
        t, n, l = mi[month], fi[firm], ci[char]
        values[t, n, l] = v
        mask[t, n, l] = not np.isnan(v)
    if normalize:
        values = rank_normalize(values, mask)
    return MaskedTensor(values, mask, tuple(months), tuple(firms), tuple(chars))


def write_panel(path, x: MaskedTensor, values=None):
    """Write the observed cells of `x` (or all cells of a dense `values` array).

    Axis labels without any observed cell get one row with an empty value.

    A dense array is written in full, which is how imputed panels are saved.
    """
    path = Path(path)
    if values is None:
        arr, mask = x.values, x.mask
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape != x.shape:
            raise StructuralError(f"values {arr.shape} do not match panel {x.shape}")
        mask = np.isfinite(arr)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for t, n, l in zip(*np.nonzero(mask)):
            w.writerow((x.months[t], x.firms[n], x.characteristics[l], _fmt(arr[t, n, l])))
        # labels with no observed cell keep one empty-valued row so they survive a round trip
        bare = [(t, 0, 0) for t in np.flatnonzero(~mask.any(axis=(1, 2)))]
        bare += [(0, n, 0) for n in np.flatnonzero(~mask.any(axis=(0, 2)))]
        bare += [(0, 0, l) for l in np.flatnonzero(~mask.any(axis=(0, 1)))]
        for t, n, l in sorted(set(bare)):
            w.writerow((x.months[t], x.firms[n], x.characteristics[l], ""))


def align_panel(x: MaskedTensor, like: MaskedTensor, path="panel") -> MaskedTensor:
    """Re-index `x` onto the axis labels of `like`; labels missing from `x` stay unobserved."""
    T, N, L = like.shape
    values = np.full((T, N, L), np.nan)
    mask = np.zeros((T, N, L), dtype=bool)
    for axis, (mine, theirs) in enumerate(
        [(x.months, like.months), (x.firms, like.firms), (x.characteristics, like.characteristics)]
    ):
        extra = set(mine) - set(theirs)
        if extra:
            name = ("month", "firm", "characteristic")[axis]
            raise StructuralError(f"{path}: {name} {sorted(extra)[0]} is not in the reference panel")
    ti = np.array([like.months.index(m) for m in x.months], dtype=int)
    ni = np.array([like.firms.index(f) for f in x.firms], dtype=int)
    li = np.array([like.characteristics.index(c) for c in x.characteristics], dtype=int)
    ix = np.ix_(ti, ni, li)
    values[ix] = x.values
    mask[ix] = x.mask
    return MaskedTensor(values, mask, like.months, like.firms, like.characteristics)


# ---------------------------------------------------------------- plans

def write_plan(path, plan: HoldoutPlan, x: MaskedTensor):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# regime={plan.regime}\n# fraction={_fmt(plan.fraction)}\n# seed={plan.seed}\n")
        fh.write(f"# months={x.shape[0]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_HEADER)
        for t, n, l, v in zip(plan.t, plan.n, plan.l, plan.values):
            w.writerow((int(t), x.firms[n], x.characteristics[l], _fmt(v)))


def read_plan(path, x: MaskedTensor) -> HoldoutPlan:
    """Parse a plan file against the panel whose labels it refers to."""
    path = Path(path)
    meta = {}
    fi = {f: i for i, f in enumerate(x.firms)}
    ci = {c: i for i, c in enumerate(x.characteristics)}
    rows = []
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise ParseError(path, i + 1, 2, "expected '# key=value'")
        meta[key.strip()] = value.strip()
    else:
        body_start = len(lines)
    for key in ("regime", "fraction", "seed"):
        if key not in meta:
            raise ParseError(path, 1, 1, f"missing '# {key}=' header line")
    if meta["regime"] not in REGIMES:
        raise ParseError(path, 1, 1, f"unknown regime {meta['regime']!r}")
    if "months" in meta and int(meta["months"]) != x.shape[0]:
        raise StructuralError(f"{path}: plan indexes {meta['months']} months, panel has {x.shape[0]} (month axis differs)")
    reader = csv.reader(lines[body_start:])
    _check_header_at(path, next(reader, None), PLAN_HEADER, body_start + 1)
    for offset, row in enumerate(reader):
        lineno = body_start + 2 + offset
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(path, lineno, 1, f"expected 4 fields, got {len(row)}")
        t_text, firm, char, value = (c.strip() for c in row)
        try:
            t = int(t_text)
        except ValueError:
            raise ParseError(path, lineno, 1, f"t_index {t_text!r} is not an integer") from None
        if not 0 <= t < x.shape[0]:
            raise ParseError(path, lineno, 1, f"t_index {t} outside 0..{x.shape[0] - 1}")
        if firm not in fi:
            raise ParseError(path, lineno, 2, f"unknown firm {firm!r}")
        if char not in ci:
            raise ParseError(path, lineno, 3, f"unknown characteristic {char!r}")
        rows.append((t, fi[firm], ci[char], _float(value, path, lineno, 4, "true_value")))
    rows.sort()
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return HoldoutPlan(
        t=arr[:, 0].astype(int), n=arr[:, 1].astype(int), l=arr[:, 2].astype(int),
        values=arr[:, 3].copy(),
        regime=meta["regime"],
        fraction=_float(meta["fraction"], path, 2, 1, "fraction"),
        seed=int(meta["seed"]),
    )


def _check_header_at(path, row, expected, lineno):
    got = tuple(c.strip() for c in (row or ()))
    if got != expected:
        raise ParseError(path, lineno, 1, f"expected header {','.join(expected)}, got {','.join(got) or 'nothing'}")


# ---------------------------------------------------------------- market data

def _write_long(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_long(path, header):
    """Rows of a long market file as (month, key, value); key is None for two-column files."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), header)
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, 1, f"expected {len(header)} fields, got {len(row)}")
            row = [c.strip() for c in row]
            if not _MONTH.match(row[0]):
                raise ParseError(path, lineno, 1, f"month {row[0]!r} is not YYYY-MM")
            key = row[1] if len(header) == 3 else None
            if (row[0], key) in seen:
                raise ParseError(path, lineno, 1, f"duplicate entry for {row[0]}" + (f", {key}" if key else ""))
            seen.add((row[0], key))
            out.append((row[0], key, _float(row[-1], path, lineno, len(header), header[-1])))
    return out


def write_market(directory, market: MarketData):
    """returns.csv and mcap.csv as (month, firm_id, value) rows; riskfree.csv as (month, rf)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, matrix in (("return", market.returns), ("mcap", market.mcap)):
        rows = ((market.months[t], market.firms[n], _fmt(matrix[t, n]))
                for t, n in zip(*np.nonzero(np.isfinite(matrix))))
        _write_long(d / f"{'returns' if name == 'return' else name}.csv", ("month", "firm_id", name), rows)
    _write_long(d / "riskfree.csv", ("month", "rf"), ((m, _fmt(v)) for m, v in zip(market.months, market.risk_free)))


def read_market(directory, panel: MaskedTensor | None = None) -> MarketData:
    """Read the three market files; absent (month, firm) pairs become NaN.

    With `panel`, the result is laid out on the panel's months and firms,
    and every panel month must have a risk-free rate.
    """
    d = Path(directory)
    ret = _read_long(d / "returns.csv", ("month", "firm_id", "return"))
    cap = _read_long(d / "mcap.csv", ("month", "firm_id", "mcap"))
    rf = {m: v for m, _, v in _read_long(d / "riskfree.csv", ("month", "rf"))}
    if panel is not None:
        months, firms = tuple(panel.months), tuple(panel.firms)
    else:
        months = tuple(sorted({m for m, _, _ in ret} | set(rf)))
        firms = tuple(sorted({f for _, f, _ in ret} | {f for _, f, _ in cap}))
    missing = [m for m in months if m not in rf]
    if missing:
        raise StructuralError(f"month {missing[0]} has no risk-free rate")
    mi = {m: i for i, m in enumerate(months)}
    fi = {f: i for i, f in enumerate(firms)}
    mats = []
    for rows in (ret, cap):
        mat = np.full((len(months), len(firms)), np.nan)
        for m, f, v in rows:
            if m in mi and f in fi:
                mat[mi[m], fi[f]] = v
        mats.append(mat)
    if panel is not None:
        listed = {f for _, f, _ in ret}
        absent = [f for f in firms if f not in listed]
        if absent:
            raise StructuralError(f"firm {absent[0]} has no returns")
    return MarketData(returns=mats[0], mcap=mats[1], risk_free=np.array([rf[m] for m in months]),
                      months=months, firms=firms)


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of an experiment. Defaults are the standard experiment settings."""

    # completion
    rank: int = 40
    k: int = 10
    tau: float = 0.40
    lam: float = 0.0
    max_iters: int = 200
    rel_tol: float = 1e-6
    kmeans_iters: int = 100
    keep_observed: bool = False
    # smoothing
    smoother: str = "cma"
    delta: int = 5
    theta: float = 0.5
    kalman_h: float = 1e-2
    kalman_r: float = 1e-1
    # masking
    regime: str = "mar"
    fraction: float = 0.10
    # pricing
    n_factors: int = 6
    p_buckets: int = 20
    q_buckets: int = 20
    mode_ranks: tuple = (5, 5, 5)
    size_char: str = "size"
    # io
    normalize: bool = False
    method: str = "act"
    seed: int = 0
    # synthetic data
    synth_t: int = 60
    synth_n: int = 300
    synth_l: int = 12
    synth_rank: int = 3
    synth_noise: float = 0.05
    synth_density: float = 1.0
    synth_smooth: float = 6.0
    market_noise: float = 0.01
    # sweep
    sweep_param: str = "lam"
    sweep_values: tuple = (1e-5, 1e-3, 1e-1, 0.5)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if len(self.mode_ranks) != 3:
            raise ConfigError("mode_ranks needs three entries")
        self.smoother_spec()  # validates the smoother fields
        self.solver()

    def solver(self) -> SolverConfig:
        return SolverConfig(rank=self.rank, lam=self.lam, max_iters=self.max_iters, rel_tol=self.rel_tol, seed=self.seed)

    def smoother_spec(self) -> SmootherSpec:
        return SmootherSpec(kind=self.smoother, delta=self.delta, theta=self.theta, h=self.kalman_h, r=self.kalman_r)

    def act(self) -> ActConfig:
        return ActConfig(
            solver=self.solver(), k=self.k, tau=self.tau, smoother=self.smoother_spec(),
            seed=self.seed, keep_observed=self.keep_observed, kmeans_iters=self.kmeans_iters,
        )

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"config.{key}={_render(value)}")
        return "\n".join(lines) + "\n"


METHODS = ("act", "cp", "median")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    return str(value)


def _convert(name, kind, text, path, line):
    text = text.strip()
    try:
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int or kind == "int":
            return int(text)
        if kind is float or kind == "float":
            return float(text)
        if kind is tuple or kind == "tuple":
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(int(p) if name == "mode_ranks" else float(p) for p in parts)
        return text
    except ValueError:
        raise ParseError(path, line, len(name) + 2, f"bad value {text!r} for {name}") from None


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read flat ``key = value`` lines (``#`` comments allowed) over the defaults."""
    cfg = ExperimentConfig()
    values = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[experiment]\n" + text, source=str(path))
        except configparser.Error as exc:
            line = getattr(exc, "lineno", 2) or 2
            raise ParseError(path, line - 1, 1, str(exc).splitlines()[0]) from None
        known = {f.name: f.type for f in fields(ExperimentConfig)}
        line_of = _line_numbers(text)
        for key, raw in parser.items("experiment"):
            line = line_of.get(key, 1)
            if key not in known:
                raise ParseError(path, line, 1, f"unknown key {key!r}")
            default = getattr(cfg, key)
            values[key] = _convert(key, type(default), raw, path, line)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, **values)


def _line_numbers(text) -> dict:
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        key, sep, _ = line.partition("=")
        if sep and not line.lstrip().startswith(("#", ";")):
            out.setdefault(key.strip(), i)
    return out


# ---------------------------------------------------------------- reports

def write_report(path, sections: dict, cfg: ExperimentConfig | None = None):
    """Write ``key=value`` lines, the resolved config first.

    `sections` maps a prefix to a dict (or to a preformatted text block).
    None values are written as ``none``.
    """
    parts = []
    if cfg is not None:
        parts.append(cfg.to_text())
    for prefix, body in sections.items():
        if isinstance(body, str):
            parts.append(body if body.endswith("\n") else body + "\n")
            continue
        lines = []
        for key, value in body.items():
            lines.append(f"{prefix}.{key}={'none' if value is None else _render(value)}")
        parts.append("\n".join(lines) + "\n")
    Path(path).write_text("".join(parts))


def read_report(path) -> dict:
    """Parse a report back into a flat dict of strings."""
    path = Path(path)
    out = {}
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(path, i, 1, "expected key=value")
        out[key] = value
    return out
