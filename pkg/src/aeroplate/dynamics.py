"""
Time integration of the delayed von Karman plate

    u_tt + Lap^2 u + (1 + k) u_t + f(u) + L u = p0 + q(u^t, t),

where ``q = -(delay potential)`` is the flow load and ``L u = U u_x``.

The stiff linear part is advanced by the implicit midpoint rule with one
sparse LU per run; ``f`` and ``q`` are evaluated at the midpoint through a
short fixed-point predictor-corrector.  ``q`` at the new time level is taken
from the history with the provisional new field appended, and averaged with
``q`` at the old level.

The midpoint rule barely damps modes with ``omega dt >> 1``.  Setting
``stiff_damping = a > 0`` moves the linear part to ``theta = 1/2 + a dt``,
which keeps second order and damps those modes at a rate close to ``4a``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

from collections import deque

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid, vonkarman
from .delay import DelaySpec, History, delay_operator
from .errors import InsufficientData, RangeError, SolverDivergence
from .grid import Domain, Field
from .vonkarman import AiryConfig, LoadSpec


@dataclass(frozen=True)
class ModelParams:
    U: float
    k: float
    loads: LoadSpec
    delay: DelaySpec
    dt: float
    T_final: float
    include_L_term: bool = True
    include_delay: bool = True
    flow_damping: float = 1.0
    airy: AiryConfig = AiryConfig()
    n_corrector: int = 2
    corrector_tol: float = 0.5
    stiff_damping: float = 0.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("damping k must be non-negative")
        if self.dt <= 0 or self.T_final <= 0:
            raise ValueError("dt and T_final must be positive")
        if abs(self.delay.U - self.U) > 1e-12:
            raise ValueError("delay spec built for a different flow speed")
        if self.n_corrector < 1:
            raise ValueError("need at least one corrector pass")
        if self.stiff_damping < 0 or self.theta > 1:
            raise ValueError("stiff_damping must be non-negative with 1/2 + stiff_damping*dt <= 1")

    @property
    def domain(self) -> Domain:
        return self.loads.p0.domain

    @property
    def damping(self) -> float:
        return self.flow_damping + self.k

    @property
    def theta(self) -> float:
        """Implicitness of the linear part; 1/2 is the implicit midpoint rule."""
        return 0.5 + self.stiff_damping * self.dt

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T_final / self.dt + 1e-9))


@dataclass(frozen=True)
class PlateState:
    t: float
    u: Field
    v: Field


@dataclass(frozen=True)
class LyapunovParams:
    nu: float
    mu: float
    beta_fit: float = 0.0

    def __post_init__(self):
        if self.nu < 0 or self.mu < 0 or self.beta_fit < 0:
            raise ValueError("nu, mu and beta_fit must be non-negative")


LEDGER_COLUMNS = ("t", "kin", "pistar", "fullE", "V", "diss", "qwork", "loadwork")


@dataclass
class EnergyLedger:
    """Per-step energy record; integrals are cumulative trapezoid sums from the first row.

    ``damping`` is the total coefficient of ``u_t`` (flow part plus ``k``);
    ``None`` means the standard ``1 + k``.
    """
    k: float = 0.0
    nu: float = float("nan")
    mu: float = float("nan")
    rows: list = field(default_factory=list)
    damping: float | None = None

    def __post_init__(self):
        if self.damping is None:
            self.damping = 1.0 + self.k

    def append(self, row):
        if self.rows and not row[0] > self.rows[-1][0]:
            raise ValueError("ledger times must increase")
        self.rows.append(tuple(float(x) for x in row))

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = LEDGER_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# k={self.k!r} nu={self.nu!r} mu={self.mu!r} damping={self.damping!r}\n")
            w = csv.writer(fh)
            w.writerow(LEDGER_COLUMNS)
            for r in self.rows:
                w.writerow([f"{x:.17g}" for x in r])

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        with open(path) as fh:
            first = fh.readline()
            meta = dict(tok.split("=", 1) for tok in first.lstrip("#").split())
            led = cls(k=float(meta["k"]), nu=float(meta["nu"]), mu=float(meta["mu"]),
                      damping=float(meta["damping"]) if "damping" in meta else None)
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != LEDGER_COLUMNS:
                raise ValueError(f"unexpected ledger header {header}")
            for r in reader:
                led.rows.append(tuple(float(x) for x in r))
        return led


@dataclass
class Trajectory:
    """States kept every ``keep_every`` steps; the last step is always kept."""
    domain: Domain
    keep_every: int
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def add(self, t, u, v):
        self.times.append(float(t))
        self.u.append(np.array(u))
        self.v.append(np.array(v))

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> PlateState:
        return PlateState(self.times[i], Field(self.domain, self.u[i]), Field(self.domain, self.v[i]))

    @property
    def final(self) -> PlateState:
        return self.state(-1)


class Integrator:
    """Step machinery for one parameter set (factorizations and kernels built once)."""

    def __init__(self, p: ModelParams):
        self.p = p
        d = p.domain
        self.domain = d
        self.hx, self.hy = d.hx, d.hy
        self.tol = p.airy.solver_tol
        self.p0 = p.loads.p0.values
        self.F0 = p.loads.F0.values
        self.has_F0 = bool(np.any(self.F0))
        B = grid.biharmonic_matrix(d)
        self.B = B
        self.Lmat = self._advection_matrix() if p.include_L_term else sp.csr_matrix(B.shape)
        self.K = (B + self.Lmat).tocsr()
        self.absK = abs(self.K)
        n = d.size
        th = p.theta
        M = (1.0 + th * p.dt * p.damping) * sp.identity(n) + (th * p.dt) ** 2 * self.K
        self.lu = spla.splu(M.tocsc())
        self.dop = delay_operator(d, p.delay) if p.include_delay else None

    def _advection_matrix(self):
        d = self.domain
        n = d.nx
        Dx = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * d.hx)
        return (self.p.U * sp.kron(Dx, sp.identity(d.ny))).tocsr()

    # -- pieces ------------------------------------------------------------
    def airy(self, u):
        return vonkarman.airy_array(u, u, self.domain, self.tol)

    def f(self, u, v=None):
        if v is None:
            v = self.airy(u)
        return vonkarman.nonlinearity_array(u, self.F0, self.domain, self.tol, v=v)

    def flow_load(self, hist: History, t, extra=None):
        """``q`` in the plate equation: minus the delay potential."""
        if self.dop is None:
            return np.zeros(self.domain.shape)
        return -self.dop.potential_array(hist, t, extra)

    def Lu(self, u):
        return (self.Lmat @ u.ravel()).reshape(u.shape)

    def pistar(self, u, v_airy):
        return vonkarman.pistar_array(u, v_airy, self.domain)

    def full_energy(self, u, ut, pistar):
        area = self.domain.cell_area
        e = 0.5 * np.sum(ut * ut) * area + pistar
        if self.has_F0:
            e -= 0.5 * np.sum(vonkarman.bracket_array(u, self.F0, self.hx, self.hy) * u) * area
        return e

    # -- one step -----------------------------------------------------------
    def advance(self, t, u, ut, hist: History, q_now=None):
        """Advance arrays ``(u, ut)`` from ``t`` to ``t + dt``; returns ``(u1, ut1, q1)``.

        ``hist`` must end at ``t`` with ``u``; it is pushed with the new field.
        """
        p = self.p
        dt = p.dt
        if q_now is None:
            q_now = self.flow_load(hist, t)
        th = p.theta
        base = ut - th * dt * (self.K @ u.ravel()).reshape(u.shape)
        u1 = u + dt * ut
        prev = u1
        if self.dop is not None:
            q_next = self.dop.next_level(hist, t + dt)
        for _ in range(p.n_corrector):
            um = 0.5 * (u + u1)
            q1 = -q_next(u1) if self.dop is not None else 0.0
            force = self.p0 + 0.5 * (q_now + q1) - self.f(um)
            vm = self.lu.solve((base + th * dt * force).ravel()).reshape(u.shape)
            prev, u1 = u1, u + dt * vm
        if not np.all(np.isfinite(u1)):
            raise SolverDivergence(f"non-finite state at t={t + dt}")
        change = np.linalg.norm(u1 - prev)
        scale = max(np.linalg.norm(u1 - u), 1e-300)
        # rounding in K u carried into u1; near rest the step itself is at this level
        noise = 1e3 * np.finfo(float).eps * dt * th * dt * np.linalg.norm(self.absK @ np.abs(u1).ravel())
        if change > p.corrector_tol * scale and change > max(noise, 1e-13 * max(np.linalg.norm(u1), 1.0)):
            raise SolverDivergence(f"corrector not contracting at t={t + dt} "
                                   f"(relative change {change / scale:.2e})")
        ut1 = ut + (vm - ut) / th
        q1 = -q_next(u1) if self.dop is not None else np.zeros_like(u1)
        hist.push(t + dt, u1)
        return u1, ut1, q1


def step(state: PlateState, hist: History, p: ModelParams, integrator: Integrator | None = None):
    """One implicit-midpoint step; returns ``(new_state, hist)`` with ``hist`` pushed."""
    integ = integrator or Integrator(p)
    u1, ut1, _ = integ.advance(state.t, state.u.values, state.v.values, hist)
    d = p.domain
    return PlateState(state.t + p.dt, Field(d, u1), Field(d, ut1)), hist


# ---------------------------------------------------------------------------
# Lyapunov functional
# ---------------------------------------------------------------------------

def _window_integrals(times, vals, t, t_star):
    """``(int_{t-t*}^t P ds, int_{t-t*}^t (s - t + t*) P ds)`` by trapezoid.

    The second is the double integral ``int_0^{t*} ds int_{t-s}^t P``.
    """
    a = t - t_star
    i0 = np.searchsorted(times, a, side="right") - 1
    i0 = max(i0, 0)
    ts = times[i0:].copy()
    vs = vals[i0:].copy()
    if ts[0] < a:
        w = (a - ts[0]) / (ts[1] - ts[0])
        vs[0] = (1 - w) * vs[0] + w * vs[1]
        ts[0] = a
    return float(np.trapezoid(vs, ts)), float(np.trapezoid(vs * (ts - a), ts))


class _PistarTrack:
    """Pi_* at history nodes, computed once per entry and kept in step with the history."""

    def __init__(self, integ: Integrator):
        self.integ = integ
        self.ts: deque = deque()
        self.vs: deque = deque()

    def values(self, hist: History):
        times = hist.times()
        while self.ts and self.ts[0] < times[0] - 1e-12:
            self.ts.popleft()
            self.vs.popleft()
        if self.ts and abs(self.ts[0] - times[0]) > 1e-9 * max(1.0, abs(times[0])):
            self.ts.clear()
            self.vs.clear()
        for k in range(len(self.ts), len(hist)):
            _, arr, cache = hist.entry(k)
            val = cache.get("pistar")
            if val is None:
                val = self.integ.pistar(arr, self.integ.airy(arr))
                cache["pistar"] = val
            self.ts.append(times[k])
            self.vs.append(val)
        return np.fromiter(self.vs, float, len(self.vs))


def _lyap(integ, lp, u, ut, q, fullE, hist, pistar_track, t):
    area = integ.domain.cell_area
    k = integ.p.k
    v = fullE - np.sum(q * u) * area
    v += lp.nu * (np.sum(ut * u) * area + 0.5 * (1 + k) * np.sum(u * u) * area)
    i1, i2 = _window_integrals(hist.times(), pistar_track.values(hist), t, integ.p.delay.t_star)
    return v + lp.mu * (i1 + i2)


def lyapunov_value(state: PlateState, hist: History, lp: LyapunovParams, p: ModelParams) -> float:
    """Lyapunov-type functional of the delayed system at ``state``.

    ``V = E - <q, u> + nu (<u_t, u> + (1+k)/2 ||u||^2)
         + mu (int_{t-t*}^t Pi_* + int_0^{t*} ds int_{t-s}^t Pi_*)``
    with ``q`` the flow load acting on the plate at time ``t``.
    """
    integ = Integrator(p)
    u, ut = state.u.values, state.v.values
    q = integ.flow_load(hist, state.t)
    fullE = integ.full_energy(u, ut, integ.pistar(u, integ.airy(u)))
    return float(_lyap(integ, lp, u, ut, q, fullE, hist, _PistarTrack(integ), state.t))


def choose_lyapunov_params(state: PlateState, hist: History, p: ModelParams, jmax: int = 30) -> LyapunovParams:
    """Largest ``nu = mu = 2^-j`` (j >= 1) whose cross term stays below half the energy.

    The check ``nu (|<u_t, u>| + (1+k)/2 ||u||^2) <= E(u, u_t) / 2`` is the
    empirical form of the lower sandwich bound ``c0 E - c <= V`` on the data.
    """
    integ = Integrator(p)
    u, ut = state.u.values, state.v.values
    area = p.domain.cell_area
    E = 0.5 * np.sum(ut * ut) * area + integ.pistar(u, integ.airy(u))
    cross = abs(np.sum(ut * u)) * area + 0.5 * (1 + p.k) * np.sum(u * u) * area
    for j in range(1, jmax + 1):
        nu = 2.0**-j
        if nu * cross <= 0.5 * E or E == 0:
            return LyapunovParams(nu, nu)
    return LyapunovParams(2.0**-jmax, 2.0**-jmax)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def make_history(domain: Domain, eta, p: ModelParams, t0: float = 0.0) -> History:
    return History.from_prehistory(domain, eta, p.dt, p.delay.t_star, t0)


def run(initial: PlateState, eta, p: ModelParams, lyapunov: LyapunovParams | None = None,
        keep_every: int = 1, snapshot_every: int | None = None, snapshot_dir=None,
        history: History | None = None, progress=None):
    """Integrate from ``initial`` to ``T_final``.

    ``eta(t)`` gives the prehistory on ``[-t*, 0]`` (it must agree with
    ``initial.u`` at ``t = 0``; the stored value at 0 is ``initial.u``).
    Returns ``(Trajectory, EnergyLedger)`` with one ledger row per step.
    """
    d = p.domain
    integ = Integrator(p)
    t0 = initial.t
    if history is None:
        hist = History.from_prehistory(d, lambda t: initial.u if abs(t - t0) < 1e-12 else eta(t),
                                       p.dt, p.delay.t_star, t0)
    else:
        hist = history
    lp = lyapunov or choose_lyapunov_params(initial, hist, p)
    led = EnergyLedger(k=p.k, nu=lp.nu, mu=lp.mu, damping=p.damping)
    traj = Trajectory(d, keep_every)
    track = _PistarTrack(integ)

    u = np.array(initial.u.values)
    ut = np.array(initial.v.values)
    t = t0
    q = integ.flow_load(hist, t)
    area = d.cell_area

    def record(t, u, ut, q):
        va = integ.airy(u)
        ps = integ.pistar(u, va)
        hist._cache[-1]["pistar"] = ps
        fe = integ.full_energy(u, ut, ps)
        V = _lyap(integ, lp, u, ut, q, fe, hist, track, t)
        powers = (np.sum(ut * ut) * area, np.sum(q * ut) * area,
                  np.sum((integ.p0 - integ.Lu(u)) * ut) * area)
        return ps, fe, V, powers

    ps, fe, V, pw = record(t, u, ut, q)
    cum = np.zeros(3)
    led.append((t, 0.5 * np.sum(ut * ut) * area, ps, fe, V, *cum))
    traj.add(t, u, ut)
    if snapshot_every and snapshot_dir:
        os.makedirs(snapshot_dir, exist_ok=True)
        grid.write_field(os.path.join(snapshot_dir, "u_000000.txt"), Field(d, u))

    for n in range(1, p.n_steps + 1):
        u, ut, q = integ.advance(t, u, ut, hist, q_now=q)
        t = t0 + n * p.dt
        ps, fe, V, pw_new = record(t, u, ut, q)
        cum += 0.5 * p.dt * (np.array(pw) + np.array(pw_new))
        pw = pw_new
        led.append((t, 0.5 * np.sum(ut * ut) * area, ps, fe, V, *cum))
        if n % keep_every == 0 or n == p.n_steps:
            traj.add(t, u, ut)
        if snapshot_every and snapshot_dir and n % snapshot_every == 0:
            grid.write_field(os.path.join(snapshot_dir, f"u_{n:06d}.txt"), Field(d, u))
        if progress is not None:
            progress(n, t)
    traj.history = hist
    return traj, led


def energy_identity_residual(ledger: EnergyLedger, t0: float, t1: float) -> float:
    """``|E(t1) + c int ||u_t||^2 - E(t0) - int <q, u_t> - int <p0 - Lu, u_t>|`` over ``[t0, t1]``.

    ``c`` is the ledger's damping coefficient, ``1 + k`` unless the flow part was switched off.
    """
    ts = ledger.column("t")
    if not t0 < t1:
        raise RangeError("need t0 < t1")
    tol = 1e-9 * max(1.0, abs(ts[-1]))
    if t0 < ts[0] - tol or t1 > ts[-1] + tol:
        raise RangeError(f"[{t0}, {t1}] outside ledger range [{ts[0]}, {ts[-1]}]")
    i0 = int(np.argmin(np.abs(ts - t0)))
    i1 = int(np.argmin(np.abs(ts - t1)))
    E = ledger.column("fullE")
    diss = ledger.column("diss")
    qw = ledger.column("qwork")
    lw = ledger.column("loadwork")
    lhs = E[i1] + ledger.damping * (diss[i1] - diss[i0])
    rhs = E[i0] + (qw[i1] - qw[i0]) + (lw[i1] - lw[i0])
    return float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# dissipativity
# ---------------------------------------------------------------------------

@dataclass
class DissipativityReport:
    beta: float
    C: float
    absorbing_level: float
    terminal_level: float
    envelope_holds: bool
    non_dissipative: bool
    extrapolated: bool


def dissipativity_report(ledger: EnergyLedger, lp: LyapunovParams | None = None,
                         tail_fraction: float = 0.1) -> DissipativityReport:
    """Fit ``V(t) <= V(0) e^{-beta t} + C/beta (1 - e^{-beta t})`` to the run.

    The upper envelope ``max_{s >= t} V(s)`` is non-increasing; its terminal
    value sets ``C/beta`` and ``beta`` is the least-squares decay rate of the
    envelope excess.  ``C`` is then raised just enough for the bound to hold
    on every ledger row.
    """
    if len(ledger) < 5:
        raise InsufficientData("need at least 5 ledger rows")
    t = ledger.column("t")
    V = ledger.column("V")
    t = t - t[0]
    env = np.maximum.accumulate(V[::-1])[::-1]
    level = float(env[-1])
    excess = env - level
    scale = max(abs(V[0]), abs(level), 1e-300)
    tail = V[int(len(V) * (1 - tail_fraction)):]
    terminal = float(np.mean(tail))
    extrapolated = ledger.k > 0
    if excess[0] <= 1e-9 * scale:
        return DissipativityReport(0.0, 0.0, level, terminal, bool(np.all(V <= V[0] + 1e-9 * scale)),
                                   True, extrapolated)
    use = excess > 1e-6 * excess[0]
    if use.sum() < 3:
        use[:3] = True
    A = np.vstack([np.ones(use.sum()), -t[use]]).T
    coef, *_ = np.linalg.lstsq(A, np.log(np.maximum(excess[use], 1e-300)), rcond=None)
    beta = float(max(coef[1], 0.0))
    if beta <= 0:
        return DissipativityReport(0.0, 0.0, level, terminal, False, True, extrapolated)
    decay = np.exp(-beta * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(t > 0, (V - V[0] * decay) / (1 - decay), -np.inf)
    A_bar = max(level, float(np.max(need)))
    bound = V[0] * decay + A_bar * (1 - decay)
    holds = bool(np.all(V <= bound + 1e-6 * scale))
    return DissipativityReport(beta, beta * A_bar, level, terminal, holds, False, extrapolated)
