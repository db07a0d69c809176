"""
Equilibria of the reduced plate system and trajectory diagnostics.

An equilibrium solves

    Lap^2 u + f(u) + U u_x + Q_s[u] = p0,

where ``Q_s`` is the delay potential of a history frozen at ``u``.  This is
exactly the fixed point of the time stepper, so long runs can be compared
with Newton solutions on the same discrete norms.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import grid, vonkarman
from .delay import DelaySpec, delay_operator
from .dynamics import Integrator, ModelParams, PlateState, Trajectory
from .errors import (EmptySet, InsufficientData, JacobianSingular, NewtonDivergence,
                     SpectralUnavailable)
from .grid import Domain, Field


def static_delay_operator(u: Field, spec: DelaySpec) -> Field:
    """Delay potential of the constant-in-time history ``u``."""
    spec.check_domain(u.domain)
    return Field(u.domain, delay_operator(u.domain, spec).static_array(u.values))


@dataclass(frozen=True)
class StationaryProblem:
    params: ModelParams
    newton_tol: float = 1e-9
    max_iter: int = 30
    continuation_steps: int = 1

    def __post_init__(self):
        if not 0 < self.newton_tol <= 1e-6:
            raise ValueError("newton_tol must lie in (0, 1e-6]")
        if self.max_iter < 1 or self.continuation_steps < 1:
            raise ValueError("max_iter and continuation_steps must be >= 1")


@dataclass
class NewtonReport:
    residuals: list
    iterations: int
    converged: bool
    floor: float = 0.0

    def order(self, last: int = 3) -> float:
        """Observed order ``log r_{k+1}/r_k / log r_k/r_{k-1}`` averaged over the tail.

        Residuals within 10x of the rounding floor of the residual evaluation
        are excluded; they measure arithmetic, not convergence.
        """
        r = [x for x in self.residuals if x > 10.0 * self.floor]
        orders = []
        for k in range(max(2, len(r) - last), len(r)):
            a, b, c = np.log(r[k - 2]), np.log(r[k - 1]), np.log(r[k])
            if b != a:
                orders.append((c - b) / (b - a))
        return float(np.mean(orders)) if orders else float("nan")


class _StationaryOperator:
    """Residual and exact Jacobian of the equilibrium equation."""

    def __init__(self, sp: StationaryProblem, load_scale: float = 1.0):
        p = sp.params
        self.p = p
        self.d = p.domain
        self.integ = Integrator(replace(p, dt=1.0, T_final=1.0))
        self.p0 = load_scale * p.loads.p0.values
        self.F0 = p.loads.F0.values
        self.tol = min(p.airy.solver_tol, 1e-12)
        self.dop = delay_operator(self.d, p.delay) if p.include_delay else None
        self.precond = _linear_preconditioner(self.integ, self.dop)

    def linear(self, u):
        out = self.integ.K @ u.ravel()
        if self.dop is not None:
            out = out + self.dop.static_array(u).ravel()
        return out.reshape(u.shape)

    def rounding_floor(self, u) -> float:
        """Size of the rounding error in evaluating the residual at ``u``."""
        absK = abs(self.integ.K)
        return _norm0(np.finfo(float).eps * (absK @ np.abs(u).ravel() + np.abs(self.p0).ravel()), self.d)

    def residual(self, u, v=None):
        if v is None:
            v = vonkarman.airy_array(u, u, self.d, self.tol)
        return self.linear(u) + vonkarman.nonlinearity_array(u, self.F0, self.d, self.tol, v=v) - self.p0

    def jacobian(self, u, v):
        d, hx, hy = self.d, self.d.hx, self.d.hy
        w = v + self.F0
        shape = u.shape

        def mv(x):
            h = x.reshape(shape)
            vh = vonkarman.airy_array(u, h, d, self.tol)
            df = -vonkarman.bracket_array(h, w, hx, hy) - vonkarman.bracket_array(u, 2.0 * vh, hx, hy)
            return (self.linear(h) + df).ravel()

        n = d.size
        A = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        M = spla.LinearOperator((n, n), matvec=self.precond, dtype=float)
        return A, M


DENSE_PRECONDITIONER_CAP = 64 * 64


def _linear_preconditioner(integ: Integrator, dop):
    """Inverse of the linear part ``Lap^2 + U d_x + Q_s``.

    On desk-scale grids the linear part is assembled densely (``Q_s`` is a
    convolution and has no sparse structure) and LU-factored; beyond
    ``DENSE_PRECONDITIONER_CAP`` nodes only the biharmonic factor is used.
    """
    d = integ.domain
    if d.size > DENSE_PRECONDITIONER_CAP:
        return grid._biharmonic_factor(d).solve
    A = integ.K.toarray()
    if dop is not None:
        A += dop.static_matrix()
    lu = sla.lu_factor(A, check_finite=False)
    return lambda x: sla.lu_solve(lu, x, check_finite=False)


def _norm0(a, d: Domain) -> float:
    return float(np.sqrt(np.sum(a * a) * d.cell_area))


def _newton(op: _StationaryOperator, u, tol_abs, max_iter, report: NewtonReport):
    d = op.d
    v = vonkarman.airy_array(u, u, d, op.tol)
    r = op.residual(u, v)
    rn = _norm0(r, d)
    report.residuals.append(rn)
    for _ in range(max_iter):
        if rn <= tol_abs:
            report.converged = True
            return u
        if not np.isfinite(rn):
            break
        A, M = op.jacobian(u, v)
        step, info = spla.gmres(A, -r.ravel(), M=M, rtol=1e-12, atol=0.0, restart=80, maxiter=3)
        if info != 0 or not np.all(np.isfinite(step)):
            res = np.linalg.norm(A @ step + r.ravel()) / max(np.linalg.norm(r), 1e-300)
            if not res < 1e-6:
                raise JacobianSingular(f"Krylov solve stalled (relative residual {res:.3e})")
        step = step.reshape(u.shape)
        lam = 1.0
        while True:
            un = u + lam * step
            vn = vonkarman.airy_array(un, un, d, op.tol)
            rnew = op.residual(un, vn)
            nn = _norm0(rnew, d)
            if nn < (1 - 1e-4 * lam) * rn or lam < 1e-3:
                break
            lam *= 0.5
        u, v, r, rn = un, vn, rnew, nn
        report.floor = op.rounding_floor(u)
        report.iterations += 1
        report.residuals.append(rn)
    if rn <= tol_abs:
        report.converged = True
        return u
    raise NewtonDivergence(report.residuals)


def solve_stationary(sp: StationaryProblem, guess: Field, return_report: bool = False):
    """Newton-Krylov solve of the equilibrium equation from ``guess``.

    Loads are ramped over ``continuation_steps`` stages; the stopping rule is
    ``||R(u)||_0 <= newton_tol (1 + ||p0||_0)``.
    """
    d = sp.params.domain
    grid.same_domain(guess, sp.params.loads.p0)
    u = np.array(guess.values, dtype=float)
    tol_abs = sp.newton_tol * (1.0 + _norm0(sp.params.loads.p0.values, d))
    report = NewtonReport([], 0, False)
    for stage in range(1, sp.continuation_steps + 1):
        op = _StationaryOperator(sp, stage / sp.continuation_steps)
        report.residuals = [] if stage < sp.continuation_steps else report.residuals
        u = _newton(op, u, tol_abs, sp.max_iter, report)
    out = Field(d, u)
    return (out, report) if return_report else out


def stationary_residual(sp: StationaryProblem, u: Field) -> float:
    op = _StationaryOperator(sp)
    return _norm0(op.residual(u.values), u.domain)


# ---------------------------------------------------------------------------
# equilibrium sets
# ---------------------------------------------------------------------------

@dataclass
class EquilibriumSet:
    members: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def __len__(self):
        return len(self.members)

    def add(self, u: Field, residual: float, merge_tol: float = 1e-6) -> bool:
        """Add ``u`` unless it coincides with a member (``||Lap(u - w)||`` below ``merge_tol``)."""
        for w in self.members:
            if np.sqrt(grid.laplacian_sq_norm(u - w)) <= merge_tol * (1 + np.sqrt(grid.laplacian_sq_norm(w))):
                return False
        self.members.append(u)
        self.residuals.append(float(residual))
        return True

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        entries = []
        for i, (u, r) in enumerate(zip(self.members, self.residuals)):
            name = f"eq_{i:03d}.txt"
            grid.write_field(os.path.join(directory, name), u)
            entries.append({"file": name, "residual": r})
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump({"format": "AEROPLATE-EQSET v1", "members": entries}, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "EquilibriumSet":
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        out = cls()
        for e in man["members"]:
            out.members.append(grid.read_field(os.path.join(directory, e["file"])))
            out.residuals.append(float(e["residual"]))
        return out


def find_equilibria(sp: StationaryProblem, n_restarts: int = 0, seed: int = 0,
                    amplitude: float = 1.0, modes: int = 3) -> EquilibriumSet:
    """Newton from the zero guess plus random low-mode restarts; failures are skipped."""
    d = sp.params.domain
    rng = np.random.default_rng(seed)
    X, Y = d.mesh()
    basis = [np.sin(np.pi * i * X / d.x_extent) * np.sin(np.pi * j * Y / d.y_extent)
             * np.sin(np.pi * X / d.x_extent) * np.sin(np.pi * Y / d.y_extent)
             for i in range(1, modes + 1) for j in range(1, modes + 1)]
    guesses = [d.zeros()]
    for _ in range(n_restarts):
        c = rng.standard_normal(len(basis))
        guesses.append(d.field(amplitude * sum(ci * b for ci, b in zip(c, basis))))
    eqs = EquilibriumSet()
    for g in guesses:
        try:
            u, rep = solve_stationary(sp, g, return_report=True)
        except (NewtonDivergence, JacobianSingular):
            continue
        eqs.add(u, rep.residuals[-1])
    return eqs


def distance_to_equilibria(state: PlateState, eqs: EquilibriumSet) -> float:
    """``min ||Lap(u - w)||^2 + ||u_t||^2`` over members ``w``."""
    if len(eqs) == 0:
        raise EmptySet("equilibrium set is empty")
    kin = float(np.sum(state.v.values ** 2) * state.v.domain.cell_area)
    return min(grid.laplacian_sq_norm(state.u - w) for w in eqs.members) + kin


# ---------------------------------------------------------------------------
# quasistability
# ---------------------------------------------------------------------------

@dataclass
class QuasistabilityFit:
    """Fit of ``|y(t)|^2 <= C |y(0)|^2 e^{-sigma t} + lot sup_{s<=t} ||z(s)||_{2-eta}^2``."""
    C: float
    sigma: float
    lot: float
    goodness: float
    holds: bool
    status: str = "ok"

    def __iter__(self):
        return iter((self.C, self.sigma, self.lot))


def _difference_series(traj1: Trajectory, traj2: Trajectory, eta: float):
    if traj1.domain != traj2.domain:
        raise ValueError("trajectories live on different grids")
    if len(traj1) != len(traj2) or not np.allclose(traj1.times, traj2.times):
        raise ValueError("trajectories must share their sample times")
    d = traj1.domain
    t = np.asarray(traj1.times) - traj1.times[0]
    Y = np.empty(len(t))
    lo = np.empty(len(t))
    for i in range(len(t)):
        z = d.field(traj1.u[i] - traj2.u[i])
        zt = traj1.v[i] - traj2.v[i]
        Y[i] = grid.laplacian_sq_norm(z) + np.sum(zt * zt) * d.cell_area
        lo[i] = grid.sobolev_norm(z, 2.0 - eta) ** 2
    return t, Y, np.maximum.accumulate(lo)


def quasistability_fit(traj1: Trajectory, traj2: Trajectory, eta: float) -> QuasistabilityFit:
    """Fit the quasistability envelope to the difference of two trajectories.

    ``y = (z, z_t)`` with ``z = u1 - u2``; ``|y|^2 = ||Lap z||^2 + ||z_t||^2``.
    The lower-order constant ``lot`` is the largest ratio ``|y|^2 / S`` over
    the last quarter of the run (``S`` the running supremum of the
    ``2 - eta`` norm); ``sigma`` is the least-squares decay rate of the upper
    envelope of ``|y|^2 - lot S`` and ``C`` the smallest constant making that
    envelope hold where it exceeds ``1e-12 |y(0)|^2``.  ``holds`` checks the
    inequality on every sample, up to that floor.
    """
    if not 0 < eta <= 2:
        raise ValueError("eta must lie in (0, 2]")
    if len(traj1) < 5:
        raise InsufficientData("need at least 5 samples per trajectory")
    t, Y, S = _difference_series(traj1, traj2, eta)
    if Y[0] == 0 and not np.any(Y):
        return QuasistabilityFit(0.0, 0.0, 0.0, 0.0, True, "ZeroDifference")
    if Y[0] == 0:
        raise InsufficientData("initial difference is zero but trajectories diverge")
    tail = slice(int(0.75 * len(t)), None)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(S[tail] > 0, Y[tail] / S[tail], 0.0)
    lot = float(np.max(ratios))
    excess = np.maximum(Y - lot * S, 0.0)
    env = np.maximum.accumulate(excess[::-1])[::-1]
    use = env > 1e-12 * Y[0]
    if use.sum() < 3:
        return QuasistabilityFit(1.0, float("inf"), lot, 1.0, bool(np.all(Y <= Y[0] * (t == 0) + lot * S * (1 + 1e-9))), "ok")
    A = np.vstack([np.ones(use.sum()), -t[use]]).T
    logs = np.log(env[use] / Y[0])
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    sigma = float(coef[1])
    fitted = A @ coef
    ss = np.sum((logs - logs.mean()) ** 2)
    goodness = float(1 - np.sum((logs - fitted) ** 2) / ss) if ss > 0 else 1.0
    # samples below the resolution floor carry no decay information
    floor = 1e-12 * Y[0]
    C = float(np.max(env[use] * np.exp(sigma * t[use])) / Y[0])
    bound = C * Y[0] * np.exp(-sigma * t) + lot * S
    holds = bool(np.all(Y <= bound * (1 + 1e-9) + floor))
    return QuasistabilityFit(C, sigma, lot, goodness, holds)
