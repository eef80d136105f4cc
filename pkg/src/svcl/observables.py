"""Norm trajectories, balance residuals, contraction distances and structure
functions, plus the delimited on-disk form every run emits.

The CSV layout is fixed: a `# config: ...` echo comment, then the header

    t,l2_sq,h1_sq,h2_sq,lp{p}_p...,l1_dist,energy_residual,guard_margin

one row per retained step, floats rendered with %.17g so files round-trip
bitwise for identical (config, seed).  lp{p}_p columns hold the p-th powers
||u||_p^p, the quantities the moment identities integrate.  Columns that do
not apply to a run (l1_dist outside coupled runs, the residual before its
window fills) hold nan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import trace_h2
from .spectral import SpectralField, synthesize

FLOAT_FMT = "%.17g"
DEFAULT_FINE_FACTOR = 8  # quadrature grid for L1/Lp rendering, per m_max


@dataclass
class ObservableRecord:
    """One row of the observable stream."""

    t: float
    l2_sq: float
    h1_sq: float
    h2_sq: float
    lp: dict
    l1_dist: float = np.nan
    energy_residual: float = np.nan
    guard_margin: float = np.nan


class RecordBuffer:
    """Columnar store for the observable stream of one run.

    Preallocated and grown geometrically; hot run loops append plain floats
    and the CSV/record views are materialized on demand.
    """

    def __init__(self, lp_orders=(), capacity: int = 1024):
        self.lp_orders = tuple(int(p) for p in lp_orders)
        self.n = 0
        self._cap = max(int(capacity), 16)
        self._cols = {name: np.empty(self._cap) for name in self.column_names()}

    def column_names(self):
        names = ["t", "l2_sq", "h1_sq", "h2_sq"]
        names += [f"lp{p}_p" for p in self.lp_orders]
        names += ["l1_dist", "energy_residual", "guard_margin"]
        return names

    def _grow(self):
        self._cap *= 2
        for k, v in self._cols.items():
            new = np.empty(self._cap)
            new[: self.n] = v[: self.n]
            self._cols[k] = new

    def append(self, t, l2_sq, h1_sq, h2_sq, lp_powers=(),
               l1_dist=np.nan, energy_residual=np.nan, guard_margin=np.nan):
        if self.n == self._cap:
            self._grow()
        i = self.n
        c = self._cols
        c["t"][i] = t
        c["l2_sq"][i] = l2_sq
        c["h1_sq"][i] = h1_sq
        c["h2_sq"][i] = h2_sq
        for p, v in zip(self.lp_orders, lp_powers):
            c[f"lp{p}_p"][i] = v
        c["l1_dist"][i] = l1_dist
        c["energy_residual"][i] = energy_residual
        c["guard_margin"][i] = guard_margin
        self.n = i + 1

    def __len__(self):
        return self.n

    def __getattr__(self, name):
        cols = self.__dict__.get("_cols")
        if cols is not None and name in cols:
            return cols[name][: self.n]
        raise AttributeError(name)

    def column(self, name) -> np.ndarray:
        return self._cols[name][: self.n]

    def set_column(self, name, values):
        self._cols[name][: self.n] = values

    def record(self, i: int) -> ObservableRecord:
        c = self._cols
        return ObservableRecord(
            t=c["t"][i],
            l2_sq=c["l2_sq"][i],
            h1_sq=c["h1_sq"][i],
            h2_sq=c["h2_sq"][i],
            lp={p: c[f"lp{p}_p"][i] for p in self.lp_orders},
            l1_dist=c["l1_dist"][i],
            energy_residual=c["energy_residual"][i],
            guard_margin=c["guard_margin"][i],
        )

    def write_csv(self, fp, config_echo: str | None = None):
        """Stream the buffer as delimited text; fp is a writable text file."""
        if config_echo is not None:
            lines = config_echo.splitlines() or [""]
            fp.write("# config: " + lines[0] + "\n")
            for ln in lines[1:]:
                fp.write("# " + ln + "\n")
        names = self.column_names()
        fp.write(",".join(names) + "\n")
        cols = [self._cols[k][: self.n] for k in names]
        for row in zip(*cols):
            fp.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_csv_columns(path):
    """Read a run CSV back into {column: array}; tolerant of the echo comment."""
    with open(path) as fp:
        skip = 0
        for line in fp:
            if not line.startswith("#"):
                break
            skip += 1
    data = np.genfromtxt(path, delimiter=",", names=True, skip_header=skip)
    if data.ndim == 0:
        data = data.reshape(1)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


def _window_arrays(window):
    """Accept a RecordBuffer, a (t, l2, h1) triple, or a record list."""
    if hasattr(window, "column"):
        return window.column("t"), window.column("l2_sq"), window.column("h1_sq")
    if isinstance(window, tuple) and len(window) == 3:
        return tuple(np.asarray(w, dtype=float) for w in window)
    t = np.array([r.t for r in window])
    l2 = np.array([r.l2_sq for r in window])
    h1 = np.array([r.h1_sq for r in window])
    return t, l2, h1


def energy_balance_residual(window, model, basis) -> float:
    """(d/dt mean ||u||_L2^2) + 2 nu mean ||u||_H1^2 - sum_k sigma_k^2.

    The derivative is the endpoint difference quotient over the window and
    the H1 mean is the trapezoid time average, so in a distributional steady
    state the residual fluctuates around zero and any systematic forcing or
    dissipation mismatch shows up as a bias.  The basis fixes the retained
    band the noise trace is summed over.
    """
    t, l2, h1 = _window_arrays(window)
    if len(t) < 2:
        return np.nan
    span = t[-1] - t[0]
    if span <= 0:
        return np.nan
    dl2 = (l2[-1] - l2[0]) / span
    h1_mean = np.trapezoid(h1, t) / span
    return float(dl2 + 2.0 * model.nu * h1_mean - trace_h2(model.noise, basis).l2)


def l1_distance(a: SpectralField, b: SpectralField, n: int | None = None) -> float:
    """L1 quadrature distance between two fields on a dealiased fine grid."""
    if a.basis.m_max != b.basis.m_max:
        raise ValueError("fields live on different bands")
    if n is None:
        n = DEFAULT_FINE_FACTOR * a.basis.m_max
    return float(np.mean(np.abs(synthesize(a.coeffs - b.coeffs, n))))


@dataclass
class MomentReport:
    """Time-integral diagnostics of ||u||_p^p along one run."""

    p: int
    integral: float  # int_0^T ||u||_p^p dt
    average: float  # integral / T
    times: np.ndarray
    running_avg: np.ndarray
    tail_slope: float  # d(running avg)/dt fitted over the last half
    stabilized: bool


def moment_bound_check(records, p: int, rel_tol: float = 0.05) -> MomentReport:
    """Running time-average of ||u||_p^p and whether it has flattened.

    The moment identity makes E int_0^T ||u||_p^p dt grow at most linearly,
    so the running average must approach a constant; `stabilized` compares
    the average over the full horizon with the average at half horizon.
    """
    t = np.asarray(records.column("t") if hasattr(records, "column") else records[0],
                   dtype=float)
    if hasattr(records, "column"):
        vals = records.column(f"lp{p}_p")
    else:
        vals = np.asarray(records[1], dtype=float)
    if len(t) < 4:
        raise ValueError("need at least four records")
    dt = np.diff(t)
    seg = 0.5 * (vals[1:] + vals[:-1]) * dt
    cumint = np.concatenate([[0.0], np.cumsum(seg)])
    span = t - t[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        running = np.where(span > 0, cumint / np.where(span > 0, span, 1.0), vals[0])
    half = len(t) // 2
    coeffs = np.polyfit(t[half:], running[half:], 1)
    full, mid = running[-1], running[half]
    stabilized = abs(full - mid) <= rel_tol * max(abs(full), 1e-300)
    return MomentReport(
        p=int(p),
        integral=float(cumint[-1]),
        average=float(running[-1]),
        times=t,
        running_avg=running,
        tail_slope=float(coeffs[0]),
        stabilized=bool(stabilized),
    )


@dataclass
class StructureTable:
    """S_q(l) = mean_j |u(x_j + l) - u(x_j)|^q over the periodic grid."""

    separations: np.ndarray
    orders: np.ndarray
    values: np.ndarray  # shape (len(separations), len(orders))


def increment_moments(u: SpectralField, separations, orders,
                      n: int | None = None) -> StructureTable:
    """Structure functions of u at grid-aligned separations."""
    if n is None:
        n = DEFAULT_FINE_FACTOR * u.basis.m_max
    separations = np.atleast_1d(np.asarray(separations, dtype=float))
    orders = np.atleast_1d(np.asarray(orders, dtype=float))
    samples = synthesize(u.coeffs, n)
    values = np.empty((len(separations), len(orders)))
    for i, sep in enumerate(separations):
        shift = sep * n
        if abs(shift - round(shift)) > 1e-9:
            raise ValueError(
                f"separation {sep} is not a multiple of the grid spacing 1/{n}"
            )
        diff = np.abs(np.roll(samples, -int(round(shift))) - samples)
        for j, q in enumerate(orders):
            values[i, j] = np.mean(diff**q)
    return StructureTable(separations, orders, values)
