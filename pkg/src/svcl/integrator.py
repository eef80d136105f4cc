"""Time integration: exponential schemes, the mild-form Picard solver,
same-noise coupling, blow-up guards and bitwise-resumable snapshots.

Both schemes treat the heat part by its exact semigroup factor and add the
exact Gaussian increment of the stochastic convolution, so with the flux
switched off a trajectory is exact in distribution (and exact pathwise in
the noiseless case).  The flux enters explicitly:

    exp_euler          u' = E (u + dt N(u)) + xi
    exp_midpoint_flux  u* = H (u + dt/2 N(u));  u' = E u + dt H N(u*) + xi

with E = exp(nu lam dt), H = exp(nu lam dt/2) acting mode-wise and
xi ~ N(0, sigma_m^2 (1 - E_m^2) / (-2 nu lam_m)) drawn once per step from
the counter-keyed path, so coupled trajectories can share realizations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import observables
from .flux import FluxOverflowError, FluxSpec, dealias_points, flux_value
from .noise import NoisePath, NoiseSpec, trace_h2
from .spectral import ModeBasis, SpectralField, analyze, synthesize

SCHEMES = ("exp_euler", "exp_midpoint_flux")


@dataclass
class ModelSpec:
    """The equation du = -dx A(u) dt + nu uxx dt + dW."""

    nu: float
    flux: FluxSpec
    noise: NoiseSpec

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("viscosity nu must be positive")


@dataclass
class SolverConfig:
    dt: float
    scheme: str = "exp_euler"
    guard_radius: float | None = None  # halt when ||u||_H1^2 reaches this
    picard_tol: float = 1e-10
    picard_max_iter: int = 64

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.guard_radius is not None and self.guard_radius <= 0:
            raise ValueError("guard radius must be positive")


@dataclass
class State:
    u: SpectralField
    t: float = 0.0
    step: int = 0


@dataclass
class GuardTrip:
    t: float
    h1_sq: float
    reason: str = "guard"


class BlowupError(RuntimeError):
    """Integration halted: guard radius reached or the flux overflowed."""

    def __init__(self, t, h1_sq, reason):
        super().__init__(f"blow-up ({reason}) at t = {t:.6g}, ||u||_H1^2 = {h1_sq:.6g}")
        self.t = t
        self.h1_sq = h1_sq
        self.reason = reason


def guard_check(state: State, radius: float) -> GuardTrip | None:
    """Trip report if ||u||_H1^2 has reached the radius, else None."""
    h1_sq = float(np.sum(-state.u.basis.eigenvalues * state.u.coeffs**2))
    if h1_sq >= radius:
        return GuardTrip(t=state.t, h1_sq=h1_sq)
    return None


class Stepper:
    """Precomputed per-(model, cfg, basis) plan for the hot step loop."""

    def __init__(self, model: ModelSpec, cfg: SolverConfig, basis: ModeBasis):
        self.model = model
        self.cfg = cfg
        self.basis = basis
        lam = basis.eigenvalues
        self.neg_lam = -lam
        self.decay = np.exp(model.nu * lam * cfg.dt)
        self.half_decay = np.exp(model.nu * lam * 0.5 * cfg.dt)
        self.dt = cfg.dt
        self._zero_flux = model.flux.kind == "zero"
        self._n_pad = dealias_points(model.flux, basis)
        self._k = basis.n_pairs
        self._w = basis.wavenumbers
        self._midpoint = cfg.scheme == "exp_midpoint_flux"

    def nonlin(self, c: np.ndarray) -> np.ndarray:
        """-dx A(u) on raw coefficients (see flux.nonlinear_term)."""
        if self._zero_flux:
            return np.zeros_like(c)
        vals = synthesize(c, self._n_pad)
        a, _ = analyze(flux_value(self.model.flux, vals), self.basis.m_max)
        out = np.empty_like(a)
        out[0::2] = self._w[0::2] * a[1::2]
        out[1::2] = -self._w[1::2] * a[0::2]
        return out

    def advance(self, c: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self._zero_flux:
            return self.decay * c + xi
        if not self._midpoint:
            return self.decay * (c + self.dt * self.nonlin(c)) + xi
        pred = self.half_decay * (c + 0.5 * self.dt * self.nonlin(c))
        return self.decay * c + self.dt * self.half_decay * self.nonlin(pred) + xi

    def h1_sq(self, c: np.ndarray) -> float:
        return float(np.dot(self.neg_lam, c * c))


def _advance_checked(stepper: Stepper, c, xi, t_next):
    """One scheme update with the blow-up contract applied."""
    try:
        out = stepper.advance(c, xi)
    except FluxOverflowError as err:
        raise BlowupError(t_next - stepper.dt, stepper.h1_sq(c), "flux_overflow") from err
    r = stepper.cfg.guard_radius
    if r is not None:
        h1 = stepper.h1_sq(out)
        if h1 >= r:
            raise BlowupError(t_next, h1, "guard")
    return out


def step(state: State, model: ModelSpec, cfg: SolverConfig, path: NoisePath) -> State:
    """Advance one step, consuming exactly one draw index from the path."""
    stepper = Stepper(model, cfg, state.u.basis)
    xi = path.ou_increment(model.nu, cfg.dt)
    c = _advance_checked(stepper, state.u.coeffs, xi, state.t + cfg.dt)
    return State(SpectralField(c, state.u.basis), state.t + cfg.dt, state.step + 1)


def coupled_step(
    state_a: State, state_b: State, model: ModelSpec, cfg: SolverConfig, path: NoisePath
) -> tuple[State, State]:
    """Advance two trajectories with the identical noise increment."""
    if state_a.t != state_b.t or state_a.step != state_b.step:
        raise ValueError("coupled states must share the same time and step")
    stepper = Stepper(model, cfg, state_a.u.basis)
    xi = path.ou_increment(model.nu, cfg.dt)
    t_next = state_a.t + cfg.dt
    ca = _advance_checked(stepper, state_a.u.coeffs, xi, t_next)
    cb = _advance_checked(stepper, state_b.u.coeffs, xi, t_next)
    basis = state_a.u.basis
    return (
        State(SpectralField(ca, basis), t_next, state_a.step + 1),
        State(SpectralField(cb, basis), t_next, state_b.step + 1),
    )


# --- run drivers ----------------------------------------------------------


@dataclass
class RunResult:
    records: observables.RecordBuffer
    state: State
    seed: int
    trip: GuardTrip | None = None
    coeff_history: np.ndarray | None = field(default=None, repr=False)

    @property
    def tripped(self) -> bool:
        return self.trip is not None


def _lp_powers(c, n_fine, orders):
    if not orders:
        return ()
    vals = np.abs(synthesize(c, n_fine))
    return tuple(np.mean(vals**p) for p in orders)


def _fill_residual_column(buf, model, basis, window, history=None):
    """Windowed balance residual over the trailing `window` records.

    The window is aligned to the absolute record stream: `history` carries
    (t, l2_sq, h1_sq) rows that precede this buffer (a resumed segment seeds
    it from the tail of the existing CSV), and each window sum runs over the
    same rows in the same order an uninterrupted run would use, so resumed
    rows come out bitwise identical.
    """
    n = len(buf)
    if n == 0:
        return
    bt = buf.column("t")
    bl2 = buf.column("l2_sq")
    bh1 = buf.column("h1_sq")
    if history is not None:
        ht, hl2, hh1 = (np.asarray(a, dtype=float) for a in history)
        off = len(ht)
        t = np.concatenate([ht, bt])
        l2 = np.concatenate([hl2, bl2])
        h1 = np.concatenate([hh1, bh1])
    else:
        off = 0
        t, l2, h1 = bt, bl2, bh1
    tr = trace_h2(model.noise, basis).l2
    seg = 0.5 * (h1[1:] + h1[:-1]) * np.diff(t)  # per-interval trapezoid areas
    res = np.full(n, np.nan)
    nu2 = 2.0 * model.nu
    full_start = max(0, window - off)  # first buffer row with a full window
    for i in range(min(full_start, n)):  # truncated windows at the run start
        ia = off + i
        if ia == 0:
            continue
        span = t[ia] - t[0]
        if span > 0:
            res[i] = (l2[ia] - l2[0]) / span + nu2 * np.sum(seg[:ia]) / span - tr
    if n > full_start and len(seg) >= window:
        sw = np.lib.stride_tricks.sliding_window_view(seg, window)
        for s0 in range(full_start, n, 65536):
            s1 = min(n, s0 + 65536)
            ia = off + np.arange(s0, s1)
            k = ia - window
            span = t[ia] - t[k]
            res[s0:s1] = (l2[ia] - l2[k]) / span + nu2 * sw[k].sum(axis=1) / span - tr
    buf.set_column("energy_residual", res)


def run_single(
    model: ModelSpec,
    cfg: SolverConfig,
    u0: SpectralField,
    seed: int,
    n_steps: int,
    record_every: int = 1,
    lp_orders=(),
    residual_window: int = 64,
    residual_history=None,
    t0: float = 0.0,
    step0: int = 0,
    keep_coeffs: bool = False,
    snapshot_every: int = 0,
    snapshot_writer=None,
) -> RunResult:
    """Drive one trajectory for n_steps, recording at the given cadence.

    Resuming: pass the snapshot's (u0, t0, step0); draw indices are keyed by
    the global step counter, so the continuation is bitwise identical to the
    uninterrupted run.  The initial record row is only written for a fresh
    start, which keeps resumed CSV output concatenable; residual_history
    carries the (t, l2_sq, h1_sq) tail of the rows already on disk so the
    windowed residual column also continues bitwise.
    """
    basis = u0.basis
    stepper = Stepper(model, cfg, basis)
    path = NoisePath(model.noise, basis, seed)
    path.draw_index = step0
    lam = basis.eigenvalues
    lam2 = lam * lam
    n_fine = observables.DEFAULT_FINE_FACTOR * basis.m_max
    buf = observables.RecordBuffer(lp_orders, capacity=n_steps // max(record_every, 1) + 4)
    c = u0.coeffs.copy()
    t = t0
    hist = np.empty((n_steps + 1, basis.m_max)) if keep_coeffs else None
    if keep_coeffs:
        hist[0] = c
    nu, dt = model.nu, cfg.dt
    r = cfg.guard_radius

    def add_row(tt, cc):
        l2s = float(np.dot(cc, cc))
        h1s = float(np.dot(-lam, cc * cc))
        h2s = float(np.dot(lam2, cc * cc))
        margin = np.nan if r is None else r - h1s
        buf.append(tt, l2s, h1s, h2s, _lp_powers(cc, n_fine, buf.lp_orders),
                   guard_margin=margin)

    if step0 == 0:
        add_row(t, c)
    trip = None
    final_step = step0
    for n in range(step0, step0 + n_steps):
        xi = path.ou_increment(nu, dt)
        try:
            c = _advance_checked(stepper, c, xi, t + dt)
        except BlowupError as err:
            trip = GuardTrip(err.t, err.h1_sq, err.reason)
            break
        t += dt
        final_step = n + 1
        if keep_coeffs:
            hist[final_step - step0] = c
        if final_step % record_every == 0:
            add_row(t, c)
        if snapshot_every and snapshot_writer and final_step % snapshot_every == 0:
            snapshot_writer(State(SpectralField(c, basis), t, final_step))
    _fill_residual_column(buf, model, basis, residual_window, residual_history)
    state = State(SpectralField(c, basis), t, final_step)
    if keep_coeffs and trip is not None:
        hist = hist[: final_step - step0 + 1]
    return RunResult(records=buf, state=state, seed=seed, trip=trip,
                     coeff_history=hist)


@dataclass
class CoupledRunResult:
    records_a: observables.RecordBuffer
    records_b: observables.RecordBuffer
    state_a: State
    state_b: State
    seed: int
    times: np.ndarray
    l1_series: np.ndarray  # per step, not per record
    h1_sq_a: np.ndarray
    h1_sq_b: np.ndarray
    trip: GuardTrip | None = None

    @property
    def tripped(self) -> bool:
        return self.trip is not None


def run_coupled(
    model: ModelSpec,
    cfg: SolverConfig,
    u0: SpectralField,
    v0: SpectralField,
    seed: int,
    n_steps: int,
    record_every: int = 1,
    lp_orders=(),
    residual_window: int = 64,
    stop_l1_below: float | None = None,
) -> CoupledRunResult:
    """Drive two trajectories under one realization of the forcing.

    The L1 distance and both H1 masses are tracked at every step (the
    contraction property is a per-step statement), while full records keep
    the configured cadence.  Stops early once the distance drops below
    stop_l1_below, if given.
    """
    basis = u0.basis
    stepper = Stepper(model, cfg, basis)
    path = NoisePath(model.noise, basis, seed)
    lam = basis.eigenvalues
    lam2 = lam * lam
    n_fine = observables.DEFAULT_FINE_FACTOR * basis.m_max
    cap = n_steps // max(record_every, 1) + 4
    buf_a = observables.RecordBuffer(lp_orders, capacity=cap)
    buf_b = observables.RecordBuffer(lp_orders, capacity=cap)
    ca = u0.coeffs.copy()
    cb = v0.coeffs.copy()
    t = 0.0
    nu, dt = model.nu, cfg.dt
    r = cfg.guard_radius
    times = np.empty(n_steps + 1)
    l1 = np.empty(n_steps + 1)
    h1a = np.empty(n_steps + 1)
    h1b = np.empty(n_steps + 1)

    def l1_now(d):
        return float(np.mean(np.abs(synthesize(d, n_fine))))

    def add_rows(tt, xa, xb, dist_now):
        for buf, cc in ((buf_a, xa), (buf_b, xb)):
            l2s = float(np.dot(cc, cc))
            h1s = float(np.dot(-lam, cc * cc))
            h2s = float(np.dot(lam2, cc * cc))
            margin = np.nan if r is None else r - h1s
            buf.append(tt, l2s, h1s, h2s, _lp_powers(cc, n_fine, buf.lp_orders),
                       l1_dist=dist_now, guard_margin=margin)

    times[0] = 0.0
    l1[0] = l1_now(ca - cb)
    h1a[0] = np.dot(-lam, ca * ca)
    h1b[0] = np.dot(-lam, cb * cb)
    add_rows(0.0, ca, cb, l1[0])
    trip = None
    k = 0
    for n in range(n_steps):
        xi = path.ou_increment(nu, dt)
        try:
            ca = _advance_checked(stepper, ca, xi, t + dt)
            cb = _advance_checked(stepper, cb, xi, t + dt)
        except BlowupError as err:
            trip = GuardTrip(err.t, err.h1_sq, err.reason)
            break
        t += dt
        k = n + 1
        times[k] = t
        l1[k] = l1_now(ca - cb)
        h1a[k] = np.dot(-lam, ca * ca)
        h1b[k] = np.dot(-lam, cb * cb)
        if k % record_every == 0:
            add_rows(t, ca, cb, l1[k])
        if stop_l1_below is not None and l1[k] < stop_l1_below:
            break
    for buf in (buf_a, buf_b):
        _fill_residual_column(buf, model, basis, residual_window)
    return CoupledRunResult(
        records_a=buf_a,
        records_b=buf_b,
        state_a=State(SpectralField(ca, basis), t, k),
        state_b=State(SpectralField(cb, basis), t, k),
        seed=seed,
        times=times[: k + 1],
        l1_series=l1[: k + 1],
        h1_sq_a=h1a[: k + 1],
        h1_sq_b=h1b[: k + 1],
        trip=trip,
    )


# --- fixed-realization refinement helpers ---------------------------------


def convolution_grid(path: NoisePath, nu: float, dt: float, n: int) -> np.ndarray:
    """w(t_i) on the step grid, i = 0..n, from a fork of the path."""
    p = path.fork()
    m = p.basis.m_max
    w = np.empty((n + 1, m))
    w[0] = p.conv_state
    for i in range(n):
        p.ou_increment(nu, dt)
        w[i + 1] = p.conv_state
    return w


def increments_from_grid(w: np.ndarray, nu: float, basis: ModeBasis,
                         dt_coarse: float, stride: int) -> np.ndarray:
    """Coarse-step noise increments xi_i = w[(i+1)s] - E w[is] from a fine grid.

    This is how two discretizations share one Brownian path: the fine grid
    is generated once and every coarser level consumes exact functionals of
    it, so refinement studies measure pure time-discretization error.
    """
    decay = np.exp(nu * basis.eigenvalues * dt_coarse)
    n_coarse = (len(w) - 1) // stride
    out = np.empty((n_coarse, w.shape[1]))
    for i in range(n_coarse):
        out[i] = w[(i + 1) * stride] - decay * w[i * stride]
    return out


def run_on_increments(model: ModelSpec, cfg: SolverConfig, u0: SpectralField,
                      xis: np.ndarray) -> np.ndarray:
    """Trajectory driven by precomputed noise increments; returns (n+1, M)."""
    stepper = Stepper(model, cfg, u0.basis)
    c = u0.coeffs.copy()
    out = np.empty((len(xis) + 1, u0.basis.m_max))
    out[0] = c
    t = 0.0
    for i, xi in enumerate(xis):
        c = _advance_checked(stepper, c, xi, t + cfg.dt)
        t += cfg.dt
        out[i + 1] = c
    return out


# --- mild-form fixed point -------------------------------------------------


@dataclass
class PicardResult:
    times: np.ndarray
    coeffs: np.ndarray  # (n+1, m_max) trajectory of the fixed point
    converged: bool
    iterations: int
    gap: float  # last sup-t H1 update distance
    gaps: np.ndarray  # sup-t H1 update distance per iteration
    horizon: float  # horizon actually used after halving
    halvings: int

    def field_at(self, i: int, basis: ModeBasis) -> SpectralField:
        return SpectralField(self.coeffs[i].copy(), basis)


def picard_solve(
    u0: SpectralField,
    model: ModelSpec,
    cfg: SolverConfig,
    horizon: float,
    path: NoisePath,
    w_grid: np.ndarray | None = None,
) -> PicardResult:
    """Fixed point of v -> S u0 - int S dx A(v) + w on the step grid.

    The convolution grid is taken from a fork of `path`, so the fixed point
    and an exponential-Euler run from the same seed see the same
    realization.  The time integral uses the integrating-factor trapezoid
    rule; when the map fails to contract the horizon is halved (up to 8
    times) and the attempt repeated, with failure reported in `converged`
    rather than raised.
    """
    basis = u0.basis
    dt = cfg.dt
    n = max(2, int(round(horizon / dt)))
    if w_grid is None:
        w_grid = convolution_grid(path, model.nu, dt, n)
    stepper = Stepper(model, cfg, basis)
    neg_lam = -basis.eigenvalues
    decay = np.exp(model.nu * basis.eigenvalues * dt)

    def attempt(n_grid):
        w = w_grid[: n_grid + 1]
        # S_{t_i} u0 by repeated exact decay
        su0 = np.empty((n_grid + 1, basis.m_max))
        su0[0] = u0.coeffs
        for i in range(n_grid):
            su0[i + 1] = decay * su0[i]
        v = su0 + w
        v[0] = u0.coeffs
        gaps = []
        for it in range(1, cfg.picard_max_iter + 1):
            # F_i = dx A(v_i) = -N(v_i); recursion I_i = E I_{i-1} + dt/2 (E F_{i-1} + F_i)
            f_prev = -stepper.nonlin(v[0])
            integral = np.zeros(basis.m_max)
            new = np.empty_like(v)
            new[0] = u0.coeffs
            for i in range(1, n_grid + 1):
                f_i = -stepper.nonlin(v[i])
                integral = decay * integral + 0.5 * dt * (decay * f_prev + f_i)
                new[i] = su0[i] - integral + w[i]
                f_prev = f_i
            gap = float(
                np.sqrt(np.max(np.sum(neg_lam * (new - v) ** 2, axis=1)))
            )
            gaps.append(gap)
            v = new
            if gap < cfg.picard_tol:
                return v, True, it, gaps
            if it > 2 and gap > 4.0 * gaps[-2]:
                return v, False, it, gaps  # clearly expanding: horizon too long
        return v, False, cfg.picard_max_iter, gaps

    halvings = 0
    while True:
        try:
            v, ok, iters, gaps = attempt(n)
        except FluxOverflowError:
            ok, v, iters, gaps = False, None, 0, [np.inf]
        if ok or halvings >= 8 or n // 2 < 2:
            break
        n //= 2
        halvings += 1
    times = dt * np.arange(n + 1)
    if v is None:
        v = np.tile(u0.coeffs, (n + 1, 1))
    return PicardResult(
        times=times,
        coeffs=v,
        converged=ok,
        iterations=iters,
        gap=gaps[-1],
        gaps=np.asarray(gaps),
        horizon=n * dt,
        halvings=halvings,
    )


# --- snapshots --------------------------------------------------------------

SNAPSHOT_MAGIC = b"SVC1"
SNAPSHOT_VERSION = 1
_HEADER_FMT = "<4sIIddIQQ"  # magic, version, m_max, t, nu, scheme, seed, step


@dataclass
class Snapshot:
    m_max: int
    t: float
    nu: float
    scheme: str
    seed: int
    step: int
    coeffs: np.ndarray


def write_snapshot(fp, state: State, model: ModelSpec, cfg: SolverConfig, seed: int):
    """Binary state dump: pinned header plus little-endian float64 coefficients."""
    fp.write(
        struct.pack(
            _HEADER_FMT,
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            state.u.basis.m_max,
            state.t,
            model.nu,
            SCHEMES.index(cfg.scheme),
            int(seed) & (2**64 - 1),
            state.step,
        )
    )
    fp.write(state.u.coeffs.astype("<f8").tobytes())


def read_snapshot(fp) -> Snapshot:
    raw = fp.read(struct.calcsize(_HEADER_FMT))
    magic, version, m_max, t, nu, scheme_code, seed, step_n = struct.unpack(
        _HEADER_FMT, raw
    )
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a snapshot file (bad magic)")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    if scheme_code >= len(SCHEMES):
        raise ValueError(f"unknown scheme code {scheme_code}")
    coeffs = np.frombuffer(fp.read(8 * m_max), dtype="<f8").astype(float)
    if len(coeffs) != m_max:
        raise ValueError("snapshot truncated: coefficient block incomplete")
    return Snapshot(
        m_max=m_max,
        t=t,
        nu=nu,
        scheme=SCHEMES[scheme_code],
        seed=seed,
        step=step_n,
        coeffs=coeffs,
    )
