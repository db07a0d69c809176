"""
Acceptance experiments, one test per criterion.

Each test prints (and records for the terminal summary) a single line

    [ACCEPT] <n> PASS|FAIL <what>: <measured> (<tolerance>)

and then asserts.  Tolerances are the stated ones; the experiment settings
are documented next to each test.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from aeroplate import analysis, delay, dynamics, grid, possio, vonkarman as vk
from aeroplate.delay import DelaySpec, History
from aeroplate.dynamics import LyapunovParams, ModelParams, PlateState
from aeroplate.grid import Domain
from fields import clamped_modes, poly_bump, random_clamped

slow = pytest.mark.slow


def report(n, ok, text, t0):
    line = f"[ACCEPT] {n} {'PASS' if ok else 'FAIL'} {text} [{time.perf_counter() - t0:.0f} s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def gaussian(d, x0, y0, s2):
    X, Y = d.mesh()
    return d.field(np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / s2))


def two_mode_data(d):
    """Generic clamped initial data with nonzero velocity."""
    X, Y = d.mesh()
    m1 = np.sin(np.pi * X) ** 2 * np.sin(np.pi * Y) ** 2
    m2 = m1 * np.sin(2 * np.pi * X)
    return d.field(0.8 * m1 + 0.3 * m2), d.field(5 * m2 - 3 * m1), d.field(m2)


def absorbing_params(d, U, T_over_tstar, dt=0.02):
    spec = DelaySpec.for_domain(d, U, 32, 32)
    loads = vk.LoadSpec(gaussian(d, 0.4, 0.5, 0.05) * 500.0, d.zeros())
    return ModelParams(U=U, k=0.0, loads=loads, delay=spec, dt=dt,
                       T_final=T_over_tstar * spec.t_star, stiff_damping=0.5)


# ---------------------------------------------------------------------------
# 1. von Karman identities
# ---------------------------------------------------------------------------

def test_criterion_1_von_karman_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    d = Domain(1, 1, 32, 32)
    a, b, c = (random_clamped(d, rng, modes=4) for _ in range(3))
    symmetric = np.array_equal(vk.bracket(a, b).values, vk.bracket(b, a).values)
    lhs = vk.bracket(a * 1.7 + c * -0.4, b).values
    rhs = 1.7 * vk.bracket(a, b).values - 0.4 * vk.bracket(c, b).values
    bilin = np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))

    errs = []
    for n in (24, 48, 96):
        dn = Domain(1, 1, n, n)
        X, Y = dn.mesh()
        u = poly_bump(dn, 0.45, 0.5, 0.4)
        w = poly_bump(dn, 0.55, 0.45, 0.35)
        z = dn.field(poly_bump(dn, 0.5, 0.55, 0.45).values * (1 + X * Y))
        errs.append(abs(grid.inner(vk.bracket_pointwise(u, w), z) - grid.inner(vk.bracket_pointwise(u, z), w)))
    orders = [math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:])]

    d64 = Domain(1, 1, 64, 64)
    u = clamped_modes(d64, [1.0, 0.5, -0.3, 0.2])
    v = vk.airy(u, u, vk.AiryConfig(solver_tol=1e-12))
    lhs = grid.laplacian_sq_norm(v)
    rhs = -grid.inner(vk.bracket(u, u), v)
    airy_rel = abs(lhs - rhs) / abs(lhs)

    ok = symmetric and bilin <= 1e-12 and min(orders) >= 1.5 and airy_rel <= 1e-6
    report(1, ok, f"bracket symmetric={symmetric}, bilinearity={bilin:.1e} (1e-12), "
                  f"trilinear orders={orders[0]:.2f},{orders[1]:.2f} (>=1.5), "
                  f"Airy identity rel={airy_rel:.1e} (1e-6)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 2. delay horizon
# ---------------------------------------------------------------------------

def test_criterion_2_tstar_vs_ray_marching():
    t0 = time.perf_counter()
    unit = Domain(1, 1, 8, 8)
    rows = []
    for U in (0.0, 0.5, 2.0):
        rows.append((f"square U={U}", delay.compute_tstar(unit, U), oracles.square_tstar_oracle(1.0, U)))
    pts = oracles.rasterized_disk(41)
    rows.append(("disk U=0", delay.compute_tstar_region(pts, 0.0),
                 oracles.region_tstar_oracle(pts, 0.0, n_theta=4096)))
    diffs = [abs(a - b) for _, a, b in rows]
    ok = max(diffs) <= 1e-3
    detail = ", ".join(f"{name}: {a:.4f} vs {b:.4f}" for name, a, b in rows)
    report(2, ok, f"t* vs ray marching: {detail}; max |diff|={max(diffs):.1e} (1e-3)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 3. energy identity order
# ---------------------------------------------------------------------------

@slow
def test_criterion_3_energy_identity_order():
    """32x32, U = 0.5, T = 10, clamped modes of amplitude 1 (energy ~150)."""
    t0 = time.perf_counter()
    d = Domain(1, 1, 32, 32)
    spec = DelaySpec.for_domain(d, 0.5, 32, 32)
    u0 = clamped_modes(d, [1.0, 0.3, -0.2])
    T = 10.0
    res = []
    for dt in (0.002, 0.001):
        p = ModelParams(U=0.5, k=0.0, loads=vk.LoadSpec.zero(d), delay=spec, dt=dt, T_final=T)
        _, led = dynamics.run(PlateState(0.0, u0, d.zeros()), lambda t: u0, p, lyapunov=LyapunovParams(0, 0))
        res.append(dynamics.energy_identity_residual(led, 0.0, T) / T)
    ratio = res[0] / res[1]
    ok = 3.4 <= ratio <= 4.6
    report(3, ok, f"energy identity residual/T: dt=0.002 {res[0]:.3e}, dt=0.001 {res[1]:.3e}, "
                  f"ratio={ratio:.2f} ([3.4, 4.6])", t0)
    assert ok


# ---------------------------------------------------------------------------
# 4. delay estimates
# ---------------------------------------------------------------------------

def band_limited_history(d, spec, seed):
    """Random clamped modes (i, j <= 4) with three temporal frequencies in [0, 3] each."""
    rng = np.random.default_rng(seed)
    X, Y = d.mesh()
    env = np.sin(np.pi * X) * np.sin(np.pi * Y)
    modes = [(i, j) for i in range(1, 5) for j in range(1, 5)]
    amps = rng.standard_normal((len(modes), 3)) / np.array([i * i + j * j for i, j in modes])[:, None]
    om = rng.uniform(0, 3, size=(len(modes), 3))
    ph = rng.uniform(0, 2 * np.pi, size=(len(modes), 3))
    shapes = [env * np.sin(i * np.pi * X) * np.sin(j * np.pi * Y) for i, j in modes]

    def eta(t):
        c = (amps * np.cos(om * t + ph)).sum(axis=1)
        return d.field(sum(ci * s for ci, s in zip(c, shapes)))
    return History.from_prehistory(d, eta, spec.t_star / 16, 2.5 * spec.t_star, retain=2.5 * spec.t_star)


@slow
def test_criterion_4_delay_estimates_bounded():
    t0 = time.perf_counter()
    maxima = {}
    finite = True
    for n in (32, 48):
        d = Domain(1, 1, n, n)
        spec = DelaySpec.for_domain(d, 0.5, 32, 32)
        vals = np.array([delay.delay_estimates_probe(band_limited_history(d, spec, s), spec).as_tuple()
                         for s in range(100)])
        finite &= bool(np.all(np.isfinite(vals)))
        maxima[n] = vals.max(axis=0)
    change = np.maximum(maxima[48] / maxima[32], maxima[32] / maxima[48])
    ok = finite and bool(np.all(change < 2.0))
    report(4, ok, f"delay estimate maxima 32x32 {np.array2string(maxima[32], precision=3)}, "
                  f"48x48 {np.array2string(maxima[48], precision=3)}; finite={finite}, "
                  f"max change={change.max():.2f}x (<2x)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 5. absorbing set
# ---------------------------------------------------------------------------

def window_maxima(t, E, width, start):
    edges = np.arange(start, t[-1] + 1e-9, width)
    return np.array([E[(t >= a) & (t < a + width)].max() for a in edges[:-1]])


@slow
@pytest.mark.parametrize("U", [0.5, 2.0])
def test_criterion_5_absorbing_set(U):
    """Energies 10x apart, shared (nu, mu) so the Lyapunov values are comparable."""
    t0 = time.perf_counter()
    d = Domain(1, 1, 32, 32)
    p = absorbing_params(d, U, 200.0)
    u0, v0, _ = two_mode_data(d)
    r = math.sqrt(10.0)
    lp = LyapunovParams(0.5, 0.5)
    runs = {}
    for tag, st in (("low", PlateState(0.0, u0, v0)), ("high", PlateState(0.0, u0 * r, v0 * r))):
        _, led = dynamics.run(st, lambda t, st=st: st.u, p, lyapunov=lp, keep_every=10**6)
        runs[tag] = led
    E_ratio = runs["high"].column("fullE")[0] / runs["low"].column("fullE")[0]
    V_lo = dynamics.dissipativity_report(runs["low"], lp).terminal_level
    V_hi = dynamics.dissipativity_report(runs["high"], lp).terminal_level
    gap = abs(V_lo - V_hi) / max(abs(V_lo), abs(V_hi))

    # crossover: first time the high run's energy is within 10% of the low run's
    t = runs["high"].column("t")
    E_hi, E_lo = runs["high"].column("fullE"), runs["low"].column("fullE")
    close = np.nonzero(np.abs(E_hi - E_lo) <= 0.1 * np.abs(E_lo))[0]
    t_cross = t[close[0]] if len(close) else t[-1]
    ts = p.delay.t_star
    env_ok = True
    sup = 0.0
    for E in (E_lo, E_hi):
        sup = max(sup, float(E.max()))
        w = window_maxima(t, E, ts, t_cross)
        env_ok &= bool(len(w) >= 2 and np.all(np.diff(w) <= 1e-9 * np.abs(w[:-1]).max()))
    ok = gap <= 0.1 and env_ok and np.isfinite(sup)
    report(5, ok, f"U={U}: initial energy ratio {E_ratio:.1f}, terminal V low={V_lo:.4e} high={V_hi:.4e}, "
                  f"gap={gap:.1e} (<=0.1); sup E={sup:.3e}, crossover t={t_cross:.1f}, "
                  f"per-t* envelope non-increasing after crossover={env_ok}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 6. convergence to equilibria
# ---------------------------------------------------------------------------

@slow
def test_criterion_6_convergence_to_equilibria():
    """U = 0.4, k = 1, 32x32, Gaussian load 1e3, two-mode data with velocity."""
    t0 = time.perf_counter()
    d = Domain(1, 1, 32, 32)
    spec = DelaySpec.for_domain(d, 0.4, 32, 32)
    loads = vk.LoadSpec(gaussian(d, 0.4, 0.5, 0.05) * 1e3, d.zeros())
    p = ModelParams(U=0.4, k=1.0, loads=loads, delay=spec, dt=0.01, T_final=20.0, stiff_damping=0.5)
    eqs = analysis.find_equilibria(analysis.StationaryProblem(p, 1e-9, 30, 1), n_restarts=4, seed=1,
                                   amplitude=0.5)
    u0, v0, _ = two_mode_data(d)
    traj, led = dynamics.run(PlateState(0.0, u0, v0), lambda t: u0, p, keep_every=100)
    vel = grid.sobolev_norm(traj.final.v, 0) / grid.sobolev_norm(v0, 0)
    dist = analysis.distance_to_equilibria(traj.final, eqs)
    diss = led.column("diss")
    tail = (diss[-1] - diss[int(0.9 * (len(diss) - 1))]) / diss[-1]
    ok = vel < 1e-4 and dist < 1e-3 and tail < 1e-6
    report(6, ok, f"{len(eqs)} equilibria; ||u_t(T)||/||u_t(0)||={vel:.1e} (<1e-4), "
                  f"distance={dist:.1e} (<1e-3), dissipation tail={tail:.1e} (<1e-6)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 7. flutter persistence
# ---------------------------------------------------------------------------

@slow
def test_criterion_7_supersonic_flutter_persists():
    """U = 1.2, k = 0.1 on an 8x8 plate (16x16 grid), T = 800."""
    t0 = time.perf_counter()
    L = 8.0
    d = Domain(L, L, 16, 16)
    X, Y = d.mesh()
    u0 = d.field(0.1 * np.sin(np.pi * X / L) ** 2 * np.sin(np.pi * Y / L) ** 2)
    spec = DelaySpec.for_domain(d, 1.2, 16, 16)
    p = ModelParams(U=1.2, k=0.1, loads=vk.LoadSpec.zero(d), delay=spec, dt=0.1, T_final=800.0)
    _, led = dynamics.run(PlateState(0.0, u0, d.zeros()), lambda t: u0, p, keep_every=10**6)
    kin = led.column("kin")
    half = len(kin) // 2
    first, second = kin[:half].mean(), kin[half:].mean()
    bounded = bool(np.all(np.isfinite(kin)) and kin[half:].max() <= 10 * kin[:half].max())
    ok = bounded and second >= 0.1 * first
    report(7, ok, f"kinetic energy mean first half={first:.3e}, second half={second:.3e} "
                  f"(ratio {second / first:.2f}, >=0.1); second-half max={kin[half:].max():.3e}, "
                  f"bounded={bounded}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 8. finite Hilbert transform
# ---------------------------------------------------------------------------

def test_criterion_8_possio_suite():
    t0 = time.perf_counter()
    g = possio.IntervalGrid(256)
    x = g.nodes
    sel = np.abs(x) <= 0.9
    h1 = possio.finite_hilbert(possio.PossioField(g, np.ones(256))).values
    pair = float(np.max(np.abs(h1 - np.log((1 - x) / (1 + x)) / np.pi)[sel]))

    f = possio.PossioField(g, possio.weight_function("kutta", x) * np.exp(0.5 * x) * np.cos(2 * x),
                           weight="kutta")
    back = possio.invert_finite_hilbert(possio.finite_hilbert(f), 1.5)
    rt = possio.lp_norm(possio.PossioField(g, back.values - f.values), 1.5) / possio.lp_norm(f, 1.5)

    def bump(t, a=0.8):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        m = np.abs(t) < a
        out[m] = np.exp(-1.0 / (1.0 - (t[m] / a) ** 2))
        return out
    xs = np.linspace(-2048.0, 2048.0, 2**21, endpoint=False)
    full = possio.hilbert_symbol_apply(bump(xs), dx=xs[1] - xs[0])
    fin = possio.finite_hilbert(possio.PossioField.from_function(g, bump)).values
    cross = float(np.max(np.abs(fin + np.interp(x, xs, full))[sel]))

    ok = pair <= 1e-6 and rt <= 1e-4 and cross <= 1e-4
    report(8, ok, f"H[1] vs log pair={pair:.1e} (1e-6), L1.5 roundtrip={rt:.1e} (1e-4), "
                  f"symbol cross-check={cross:.1e} (1e-4)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 9. quasistability
# ---------------------------------------------------------------------------

@slow
def test_criterion_9_quasistability():
    """Base run 20 t* from the absorbing-set data at U = 0.5, then two runs 1e-3 apart over 50 t*."""
    t0 = time.perf_counter()
    d = Domain(1, 1, 32, 32)
    p = absorbing_params(d, 0.5, 20.0)
    u0, v0, m2 = two_mode_data(d)
    lp = LyapunovParams(0.5, 0.5)
    tr, _ = dynamics.run(PlateState(0.0, u0, v0), lambda t: u0, p, lyapunov=lp, keep_every=10**6)
    hist, base = tr.history, tr.final
    pert = m2 * (1e-3 / math.sqrt(grid.laplacian_sq_norm(m2)))
    p2 = replace(p, T_final=50.0 * p.delay.t_star)
    keep = int(round(p.delay.t_star / p.dt / 4))
    trajs = []
    for du in (d.zeros(), pert):
        st = PlateState(base.t, base.u + du, base.v)
        traj, _ = dynamics.run(st, lambda t: delay.history_sample(hist, t), p2, lyapunov=lp, keep_every=keep)
        trajs.append(traj)
    fit = analysis.quasistability_fit(trajs[0], trajs[1], 0.5)
    ok = fit.sigma > 0 and math.isfinite(fit.C) and fit.holds
    report(9, ok, f"fit over {trajs[0].times[-1] - trajs[0].times[0]:.0f} time units: C={fit.C:.3f}, "
                  f"sigma={fit.sigma:.3f} (>0), lot={fit.lot:.2e}, goodness={fit.goodness:.3f}, "
                  f"envelope holds={fit.holds}", t0)
    assert ok
