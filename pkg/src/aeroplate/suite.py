"""
Quick invariant checks and the Possio check, each reported as a
machine-readable pass/fail record.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import analysis, delay, dynamics, grid, possio, vonkarman
from .grid import Domain


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0

    def as_dict(self):
        return asdict(self)


def _clamped_bump(d: Domain, rng, modes=3):
    X, Y = d.mesh()
    lx, ly = d.x_extent, d.y_extent
    base = (np.sin(np.pi * X / lx) * np.sin(np.pi * Y / ly)) ** 2
    out = np.zeros(d.shape)
    for i in range(1, modes + 1):
        for j in range(1, modes + 1):
            out += rng.standard_normal() / (i * j) * np.sin(i * np.pi * X / lx) * np.sin(j * np.pi * Y / ly)
    return d.field(base * out)


def ray_march_tstar(domain: Domain, U: float, n_theta: int = 16384, n_pts: int = 9,
                    n_bisect: int = 48) -> float:
    """Brute-force delay horizon over a grid of start points and ray angles.

    The domain is convex, so each ray leaves it once; the exit time of every
    (point, angle) pair is located by bisection on the inside test.
    """
    lx, ly = domain.x_extent, domain.y_extent
    X, Y = np.meshgrid(np.linspace(0, lx, n_pts), np.linspace(0, ly, n_pts), indexing="ij")
    th = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    vx = -(U + np.sin(th))[None, :]
    vy = -np.cos(th)[None, :]
    x0 = X.ravel()[:, None]
    y0 = Y.ravel()[:, None]

    def inside(s):
        x = x0 + vx * s
        y = y0 + vy * s
        return (x >= 0) & (x <= lx) & (y >= 0) & (y <= ly)

    speed = np.hypot(vx, vy)
    hi = np.broadcast_to(np.hypot(lx, ly) / np.maximum(speed, 1e-12), inside(0.0).shape).copy()
    lo = np.zeros_like(hi)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        ins = inside(mid)
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    return float(hi.max())


def _timed(name, threshold, fn, passes):
    t0 = time.perf_counter()
    value = float(fn())
    return CheckResult(name, bool(passes(value, threshold)), value, threshold, time.perf_counter() - t0)


def invariant_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    d = Domain(1.0, 1.0, 24, 24)
    u, w, z = (_clamped_bump(d, rng) for _ in range(3))
    a, b = rng.standard_normal(2)
    cfg = vonkarman.AiryConfig()
    br = vonkarman.bracket
    le = lambda v, t: v <= t  # noqa: E731
    out = []

    def rel(x, y):
        return np.linalg.norm(x.values - y.values) / max(np.linalg.norm(y.values), 1e-300)

    out.append(_timed("bracket_symmetry", 1e-12, lambda: rel(br(u, w), br(w, u)), le))
    out.append(_timed("bracket_bilinearity", 1e-12,
                      lambda: rel(br(u * a + w * b, z), br(u, z) * a + br(w, z) * b), le))
    out.append(_timed("trilinear_symmetry", 1e-10, lambda: abs(
        grid.inner(br(u, w), z) - grid.inner(br(u, z), w)) / abs(grid.inner(br(u, w), z)), le))

    def airy_identity():
        v = vonkarman.airy(u, u, cfg)
        lhs = grid.laplacian_sq_norm(v)
        return abs(lhs + grid.inner(br(u, u), v)) / lhs
    out.append(_timed("airy_energy_identity", 1e-6, airy_identity, le))

    def homogeneity():
        loads = vonkarman.LoadSpec.zero(d)
        f1 = vonkarman.nonlinearity(u * 2.0, loads, cfg)
        return rel(f1, vonkarman.nonlinearity(u, loads, cfg) * 8.0)
    out.append(_timed("nonlinearity_cubic_homogeneity", 1e-8, homogeneity, le))

    spec = delay.DelaySpec.for_domain(d, 0.5, 16, 16)
    dt = spec.t_star / 20

    def delay_linearity():
        h1 = delay.History.from_prehistory(d, lambda t: u * (1 + t), dt, spec.t_star)
        h2 = delay.History.from_prehistory(d, lambda t: w * np.cos(t), dt, spec.t_star)
        h3 = delay.History.from_prehistory(d, lambda t: u * (1 + t) + w * np.cos(t), dt, spec.t_star)
        q = [delay.delay_potential(h, spec, 0.0) for h in (h1, h2, h3)]
        return rel(q[2], q[0] + q[1])
    out.append(_timed("delay_potential_linearity", 1e-12, delay_linearity, le))

    def history_linear():
        h = delay.History.from_prehistory(d, lambda t: u * t, dt, spec.t_star)
        ts = rng.uniform(-spec.t_star, 0.0, 5)
        return max(rel(delay.history_sample(h, t), u * t) for t in ts if t != 0)
    out.append(_timed("history_linear_exactness", 1e-12, history_linear, le))

    def static_consistency():
        h = delay.History.from_prehistory(d, lambda t: u, dt, spec.t_star)
        return rel(delay.delay_potential(h, spec, 0.0), analysis.static_delay_operator(u, spec))
    out.append(_timed("static_delay_consistency", 1e-12, static_consistency, le))

    out.append(_timed("tstar_vs_ray_marching", 1e-3, lambda: abs(
        delay.compute_tstar(Domain(1, 1, 8, 8), 0.5) - ray_march_tstar(Domain(1, 1, 8, 8), 0.5)),
        le))

    def zero_stays_zero():
        p = dynamics.ModelParams(U=0.5, k=0.0, loads=vonkarman.LoadSpec.zero(d), delay=spec,
                                 dt=dt, T_final=5 * dt)
        st = dynamics.PlateState(0.0, d.zeros(), d.zeros())
        traj, led = dynamics.run(st, lambda t: d.zeros(), p)
        return float(np.max(np.abs(traj.final.u.values)) + np.max(np.abs(led.column("fullE"))))
    out.append(_timed("zero_state_invariant", 0.0, zero_stays_zero, le))

    def possio_roundtrip():
        gr = possio.IntervalGrid(128)
        f = possio.PossioField.from_function(gr, lambda x: np.sqrt(1 - x * x) * np.exp(x), weight="sqrt")
        back = possio.invert_finite_hilbert(possio.finite_hilbert(f), 1.5)
        return possio.lp_norm(possio.PossioField(gr, back.values - f.values), 1.5) / possio.lp_norm(f, 1.5)
    out.append(_timed("possio_roundtrip", 1e-4, possio_roundtrip, le))

    def hilbert_parity():
        gr = possio.IntervalGrid(128)
        h = possio.finite_hilbert(possio.PossioField.from_function(gr, lambda x: np.cos(3 * x))).values
        return float(np.max(np.abs(h + h[::-1])))
    out.append(_timed("finite_hilbert_odd_parity", 1e-10, hilbert_parity, le))
    return out


def possio_check(n: int = 256) -> tuple[list[CheckResult], possio.PossioField]:
    """The analytic pair, the inversion roundtrip and the symbol cross-check."""
    gr = possio.IntervalGrid(n)
    x = gr.nodes
    inner = np.abs(x) <= 0.9
    one = possio.PossioField(gr, np.ones(n))
    out = []
    out.append(_timed("analytic_pair_H1", 1e-6, lambda: np.max(np.abs(
        possio.finite_hilbert(one).values - np.log((1 - x) / (1 + x)) / np.pi)[inner]), lambda v, t: v <= t))

    def roundtrip():
        f = possio.PossioField.from_function(gr, lambda t: np.sqrt(1 - t * t) * np.exp(t), weight="sqrt")
        back = possio.invert_finite_hilbert(possio.finite_hilbert(f), 1.5)
        return possio.lp_norm(possio.PossioField(gr, back.values - f.values), 1.5) / possio.lp_norm(f, 1.5)
    out.append(_timed("inversion_roundtrip_L1.5", 1e-4, roundtrip, lambda v, t: v <= t))

    def symbol_cross():
        L, dx = 200.0, 0.005
        X = np.arange(-L, L, dx)

        def bump(t):
            t = np.asarray(t, dtype=float)
            return np.where(np.abs(t) < 1, np.exp(-1.0 / np.maximum(1 - t * t, 1e-300)), 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error", possio.AliasWarning)
            hs = possio.hilbert_symbol_apply(bump(X), dx=dx)
        xi = np.linspace(-0.9, 0.9, 37)
        fh = possio.finite_hilbert(possio.PossioField.from_function(gr, bump), at=xi)
        # the symbol -i sign(eta) is the cos -> sin transform, the negative of H_f
        return np.max(np.abs(fh + np.interp(xi, X, hs)))
    out.append(_timed("symbol_cross_check", 1e-4, symbol_cross, lambda v, t: v <= t))
    return out, possio.PossioField.from_function(gr, lambda t: np.sqrt(1 - t * t) * np.exp(t), weight="sqrt")
