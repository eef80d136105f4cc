"""Long-run statistics: ergodic averages with batch-means errors, tightness
and dissipation-entry diagnostics, and the same-noise coupling experiment.

Expectations under the invariant law are approximated by time averages over a
single long trajectory (uniqueness of the limit justifies this; it is echoed
as an assumption in experiment metadata).  Standard errors come from batch
means: the post-burn-in stretch is cut into equal contiguous batches and the
spread of batch averages estimates the error of the grand average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import CoupledRunResult, ModelSpec, SolverConfig, run_coupled
from .noise import trace_h2
from .spectral import ModeBasis, SpectralField

MIN_BATCHES = 8
DEFAULT_BATCHES = 16


def default_burn_in(nu: float) -> float:
    """Ten relaxation times of the slowest linear mode, 10/(nu (2 pi)^2)."""
    return 10.0 / (nu * (2.0 * math.pi) ** 2)


@dataclass
class ErgodicEstimate:
    observable: str
    value: float  # time average after burn-in
    stderr: float  # batch-means standard error
    horizon: float  # averaged span (after burn-in)
    burn_in: float
    n_batches: int


def _records_of(run):
    return run.records if hasattr(run, "records") else run


def ergodic_average(run, observable, burn_in: float,
                    n_batches: int = DEFAULT_BATCHES) -> ErgodicEstimate:
    """Time average of an observable with a batch-means standard error.

    `observable` is a record column name or a callable mapping the record
    buffer to a series.  Records are assumed equally spaced in time, so the
    time average is the plain mean over retained rows.
    """
    if n_batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches for the error bar")
    buf = _records_of(run)
    t = buf.column("t")
    if callable(observable):
        series = np.asarray(observable(buf), dtype=float)
        name = getattr(observable, "__name__", "custom")
    else:
        series = buf.column(observable)
        name = observable
    keep = t >= t[0] + burn_in
    if np.count_nonzero(keep) < 2 * n_batches:
        raise ValueError(
            f"insufficient samples: {np.count_nonzero(keep)} rows after burn-in, "
            f"need at least {2 * n_batches}")
    series = series[keep]
    tk = t[keep]
    n_use = len(series) - len(series) % n_batches
    series = series[-n_use:]
    batches = series.reshape(n_batches, -1).mean(axis=1)
    value = float(series.mean())
    stderr = float(batches.std(ddof=1) / math.sqrt(n_batches))
    return ErgodicEstimate(
        observable=name,
        value=value,
        stderr=stderr,
        horizon=float(tk[-1] - tk[0]),
        burn_in=float(burn_in),
        n_batches=n_batches,
    )


def estimates_agree(a: ErgodicEstimate, b: ErgodicEstimate,
                    n_sigma: float = 3.0) -> bool:
    """Whether two averages agree within n_sigma combined standard errors."""
    return abs(a.value - b.value) <= n_sigma * math.hypot(a.stderr, b.stderr)


@dataclass
class TightnessRow:
    epsilon: float
    threshold: float  # 1/epsilon
    fraction: float  # fraction of records with h1_sq > threshold
    bound: float  # (eps/2nu)(||u0||^2/T + L2 trace)
    satisfied: bool  # fraction <= bound (vacuously when bound >= 1)


def tightness_diagnostic(run, model: ModelSpec, epsilons,
                         u0: SpectralField) -> list[TightnessRow]:
    """Occupation fractions of {||u||_H1^2 > 1/eps} against the Markov bound.

    The bound uses the L2 noise trace: integrating the p=2 balance gives
    E int_0^T ||u||_H1^2 <= (||u0||^2 + trace * T)/(2 nu), and Markov turns
    that into a time-fraction bound.  Rows with bound >= 1 are vacuous and
    reported as such, never failed.
    """
    buf = _records_of(run)
    t = buf.column("t")
    h1 = buf.column("h1_sq")
    if len(t) < 2:
        raise ValueError("need at least two records")
    span = float(t[-1] - t[0])
    basis = u0.basis
    tr = trace_h2(model.noise, basis).l2
    u0_sq = float(np.dot(u0.coeffs, u0.coeffs))
    rows = []
    for eps in np.atleast_1d(np.asarray(epsilons, dtype=float)):
        threshold = 1.0 / eps
        fraction = float(np.mean(h1 > threshold))
        bound = (eps / (2.0 * model.nu)) * (u0_sq / span + tr)
        rows.append(TightnessRow(
            epsilon=float(eps),
            threshold=threshold,
            fraction=fraction,
            bound=float(bound),
            satisfied=bool(fraction <= bound),
        ))
    return rows


@dataclass
class CouplingReport:
    seed: int
    u0_descriptor: str
    v0_descriptor: str
    times: np.ndarray = field(repr=False)
    l1_series: np.ndarray = field(repr=False)
    first_passage: dict  # epsilon -> first time l1 < epsilon (nan if never)
    guard_radius: float | None
    initial_distance: float
    final_distance: float
    horizon: float
    reached_target: bool  # went below min(epsilons) inside the horizon
    monotone: bool  # non-increasing within 1e-8 of the current value
    trip_time: float  # nan unless a guard/overflow trip ended the run


def _descriptor(u: SpectralField) -> str:
    l2 = float(np.dot(u.coeffs, u.coeffs))
    lead = int(np.argmax(np.abs(u.coeffs)))
    return f"m_max={u.basis.m_max} l2_sq={l2:.6g} lead_coeff[{lead}]={u.coeffs[lead]:.6g}"


def confluence_experiment(u0: SpectralField, v0: SpectralField, model: ModelSpec,
                          cfg: SolverConfig, seed: int, epsilons,
                          horizon: float) -> CouplingReport:
    """Drive the same-noise pair until the L1 distance falls below every
    epsilon or the horizon is exhausted; report first-passage times."""
    eps = np.sort(np.atleast_1d(np.asarray(epsilons, dtype=float)))[::-1]
    if eps.size == 0 or eps[-1] <= 0:
        raise ValueError("epsilons must be positive")
    n_steps = max(1, int(round(horizon / cfg.dt)))
    res = run_coupled(model, cfg, u0, v0, seed, n_steps,
                      record_every=max(1, n_steps),  # full records not needed
                      stop_l1_below=float(eps[-1]))
    l1 = res.l1_series
    times = res.times
    first = {}
    for e in eps:
        hit = np.nonzero(l1 < e)[0]
        first[float(e)] = float(times[hit[0]]) if hit.size else float("nan")
    inc = np.diff(l1)
    monotone = bool(np.all(inc <= 1e-8 * l1[:-1]))
    return CouplingReport(
        seed=seed,
        u0_descriptor=_descriptor(u0),
        v0_descriptor=_descriptor(v0),
        times=times,
        l1_series=l1,
        first_passage=first,
        guard_radius=cfg.guard_radius,
        initial_distance=float(l1[0]),
        final_distance=float(l1[-1]),
        horizon=float(n_steps) * cfg.dt,
        reached_target=bool(l1[-1] < eps[-1]),
        monotone=monotone,
        trip_time=res.trip.t if res.trip is not None else float("nan"),
    )


def dissipation_entry_time(run: CoupledRunResult, R: float) -> float:
    """First time ||u||_H1^2 + ||v||_H1^2 <= R along a coupled run (nan if
    the run never enters the dissipation region)."""
    if R <= 0:
        raise ValueError("entry radius must be positive")
    total = run.h1_sq_a + run.h1_sq_b
    hit = np.nonzero(total <= R)[0]
    return float(run.times[hit[0]]) if hit.size else float("nan")


def entry_time_bound(u0: SpectralField, v0: SpectralField, model: ModelSpec,
                     basis: ModeBasis, R: float) -> float:
    """E[tau_R] <= (||u0||^2 + ||v0||^2) / (2 (nu R - L2 trace)).

    Valid once nu R exceeds the L2 noise trace; below that the expected-entry
    argument has no margin and the bound is undefined.
    """
    tr = trace_h2(model.noise, basis).l2
    margin = model.nu * R - tr
    if margin <= 0:
        raise ValueError("need nu * R above the L2 noise trace for a finite bound")
    num = float(np.dot(u0.coeffs, u0.coeffs) + np.dot(v0.coeffs, v0.coeffs))
    return num / (2.0 * margin)
