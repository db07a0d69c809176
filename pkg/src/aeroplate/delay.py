"""
Delay horizon, solution history and the delay potential of the reduced
flow-plate system.

The delay potential at a node ``x`` is

    q(x, t) = 1/(2 pi) int_0^{t*} ds int_0^{2 pi} dtheta
              [M_theta^2 u^](x - (U + sin th) s, y - s cos th, t - s),

with ``M_theta = sin th d_x + cos th d_y`` and ``u^`` the zero extension of
``u``.  Second derivatives are taken on the grid, extended by zero and sampled
bilinearly.  Because every node is shifted by the same vector for a given
``(s, theta)``, the bilinear sampling is a discrete convolution, and the whole
quadrature collapses to one precomputed kernel per ``s`` node, applied by FFT.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull

from . import grid
from .errors import DomainMismatch, NonUniformTime, OutOfWindow, TransonicInput
from .grid import Domain, Field

TRANSONIC_GAP = 1e-9


def _check_speed(U):
    if U < 0:
        raise ValueError("flow speed U must be non-negative")
    if abs(U - 1.0) < TRANSONIC_GAP:
        raise TransonicInput(f"U={U} is transonic; t* is unbounded")


# ---------------------------------------------------------------------------
# delay horizon
# ---------------------------------------------------------------------------

def _ray_velocity(U, theta):
    return U + np.sin(theta), np.cos(theta)


def _rect_exit_time(theta, U, lx, ly):
    """Longest time a ray with velocity -(U + sin th, cos th) stays in the rectangle."""
    vx, vy = _ray_velocity(U, theta)
    with np.errstate(divide="ignore"):
        tx = np.where(np.abs(vx) > 0, lx / np.abs(vx), np.inf)
        ty = np.where(np.abs(vy) > 0, ly / np.abs(vy), np.inf)
    return np.minimum(tx, ty)


@functools.lru_cache(maxsize=64)
def _tstar_rect(lx, ly, U, n_theta_scan):
    theta = np.linspace(0.0, 2 * np.pi, n_theta_scan, endpoint=False)
    vals = _rect_exit_time(theta, U, lx, ly)
    dth = 2 * np.pi / n_theta_scan
    best = float(np.max(vals))
    # polish the few best scan points; the profile is piecewise smooth with kinks
    for i in np.argsort(vals)[-4:]:
        res = minimize_scalar(lambda th: -float(_rect_exit_time(th, U, lx, ly)),
                              bounds=(theta[i] - dth, theta[i] + dth), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -res.fun)
    return best


def compute_tstar(domain: Domain, U: float, n_theta_scan: int = 4096) -> float:
    """Delay horizon ``t*`` of the rectangle ``[0, Lx] x [0, Ly]`` for flow speed ``U``.

    For a fixed direction the slowest exit from a rectangle starts at a corner
    and takes ``min(Lx/|vx|, Ly/|vy|)``; ``t*`` is the supremum over directions.
    """
    _check_speed(U)
    return _tstar_rect(domain.x_extent, domain.y_extent, float(U), int(n_theta_scan))


def compute_tstar_region(points, U: float, n_theta_scan: int = 4096) -> float:
    """Delay horizon of the convex hull of a point cloud (e.g. a rasterized region).

    The longest chord of a convex polygon in a given direction has an endpoint
    at a vertex, so scanning vertex-anchored chords in both orientations is exact
    for the polygon at each scanned direction.
    """
    _check_speed(U)
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    verts = pts[hull.vertices]
    normals = hull.equations[:, :2]
    offsets = -hull.equations[:, 2]

    def chord(theta):
        vx, vy = _ray_velocity(U, theta)
        speed = math.hypot(vx, vy)
        best = 0.0
        for sgn in (1.0, -1.0):
            d = sgn * np.array([vx, vy]) / speed
            nd = normals @ d
            slack = offsets[None, :] - verts @ normals.T
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(nd[None, :] > 1e-15, slack / nd[None, :], np.inf)
            best = max(best, float(np.max(np.min(t, axis=1))))
        return best / speed

    theta = np.linspace(0.0, 2 * np.pi, n_theta_scan, endpoint=False)
    vals = np.array([chord(th) for th in theta])
    dth = 2 * np.pi / n_theta_scan
    best = float(vals.max())
    for i in np.argsort(vals)[-3:]:
        res = minimize_scalar(lambda th: -chord(th), bounds=(theta[i] - dth, theta[i] + dth),
                              method="bounded", options={"xatol": 1e-10})
        best = max(best, -res.fun)
    return best


@dataclass(frozen=True)
class DelaySpec:
    U: float
    t_star: float
    n_theta: int = 32
    n_s: int = 32

    def __post_init__(self):
        _check_speed(self.U)
        if self.t_star <= 0:
            raise ValueError("t_star must be positive")
        for name in ("n_theta", "n_s"):
            n = getattr(self, name)
            if n < 16 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 16")

    @classmethod
    def for_domain(cls, domain: Domain, U: float, n_theta: int = 32, n_s: int = 32) -> "DelaySpec":
        return cls(float(U), compute_tstar(domain, U), n_theta, n_s)

    def check_domain(self, domain: Domain):
        ts = compute_tstar(domain, self.U)
        if abs(ts - self.t_star) > 1e-6:
            raise DomainMismatch(f"t_star={self.t_star} does not match the domain (expected {ts})")

    def s_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Composite-trapezoid nodes and weights on ``[0, t*]`` (``n_s`` panels)."""
        s = np.linspace(0.0, self.t_star, self.n_s + 1)
        w = np.full(self.n_s + 1, self.t_star / self.n_s)
        w[[0, -1]] *= 0.5
        return s, w

    def theta_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        th = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        return th, np.full(self.n_theta, 2 * np.pi / self.n_theta)


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------

class History:
    """Uniformly spaced record of past plate fields covering the delay window.

    One writer, many readers between pushes.  Entries older than
    ``t - retain - 2*dt`` are dropped on push (``retain`` defaults to ``t_star``).
    """

    def __init__(self, domain: Domain, dt: float, t_star: float, retain: float | None = None):
        if dt <= 0:
            raise ValueError("history spacing must be positive")
        self.domain = domain
        self.dt = float(dt)
        self.t_star = float(t_star)
        self.retain = max(float(retain), self.t_star) if retain is not None else self.t_star
        self._times: deque[float] = deque()
        self._fields: deque[np.ndarray] = deque()
        # per-entry derived data (FFT of derivatives, potential energies), same order
        self._cache: deque[dict] = deque()

    @classmethod
    def from_prehistory(cls, domain: Domain, eta, dt: float, t_star: float, t0: float = 0.0,
                        retain: float | None = None) -> "History":
        """Sample ``eta(t)`` at uniform nodes ending at ``t0`` and covering ``[t0 - retain, t0]``."""
        h = cls(domain, dt, t_star, retain)
        n = int(math.ceil(h.retain / dt - 1e-9))
        for k in range(-n, 1):
            t = t0 + k * dt
            val = eta(t)
            h._append(t, val.values if isinstance(val, Field) else np.asarray(val, dtype=float))
        return h

    def _append(self, t, arr):
        arr = np.array(arr, dtype=float).reshape(self.domain.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("history fields must be finite")
        self._times.append(float(t))
        self._fields.append(arr)
        self._cache.append({})

    def __len__(self):
        return len(self._times)

    @property
    def t_last(self) -> float:
        return self._times[-1]

    @property
    def t_first(self) -> float:
        return self._times[0]

    @property
    def capacity_bound(self) -> int:
        return int(math.ceil(self.retain / self.dt)) + 3

    def times(self) -> np.ndarray:
        return np.array(self._times)

    def push(self, t: float, u) -> "History":
        arr = u.values if isinstance(u, Field) else u
        if isinstance(u, Field) and u.domain != self.domain:
            raise DomainMismatch("field domain differs from history domain")
        if self._times:
            expected = self._times[-1] + self.dt
            if abs(t - expected) > 1e-9 * max(1.0, abs(expected)):
                raise NonUniformTime(f"pushed t={t}, expected {expected}")
        self._append(t, arr)
        cutoff = t - self.retain - 2 * self.dt
        while self._times and self._times[0] < cutoff - 1e-12:
            self._times.popleft()
            self._fields.popleft()
            self._cache.popleft()
        return self

    def copy(self) -> "History":
        h = History(self.domain, self.dt, self.t_star, self.retain)
        h._times = deque(self._times)
        h._fields = deque(self._fields)
        h._cache = deque(dict(c) for c in self._cache)
        return h

    def _locate(self, t_query: float) -> tuple[int, float]:
        t0 = self._times[0]
        tl = self._times[-1]
        eps = 1e-9 * max(1.0, abs(tl))
        if t_query < t0 - eps or t_query > tl + eps:
            raise OutOfWindow(f"t={t_query} outside stored window [{t0}, {tl}]")
        x = (t_query - t0) / self.dt
        k = int(math.floor(x + 1e-9))
        k = min(max(k, 0), len(self._times) - 1)
        a = x - k
        if k == len(self._times) - 1 or abs(a) < 1e-9:
            return k, 0.0
        return k, a

    def sample_array(self, t_query: float) -> np.ndarray:
        k, a = self._locate(t_query)
        if a == 0.0:
            return self._fields[k]
        return (1.0 - a) * self._fields[k] + a * self._fields[k + 1]

    def sample(self, t_query: float) -> Field:
        return Field(self.domain, self.sample_array(t_query))

    def entry(self, k: int) -> tuple[float, np.ndarray, dict]:
        return self._times[k], self._fields[k], self._cache[k]


def history_push(h: History, t: float, u: Field) -> History:
    return h.push(t, u)


def history_sample(h: History, t_query: float) -> Field:
    return h.sample(t_query)


def write_history(path, h: History) -> None:
    """Checkpoint: manifest line followed by one AEROPLATE-FIELD block per entry."""
    with open(path, "w") as fh:
        fh.write(f"AEROPLATE-HIST v1 n={len(h)} dt={h.dt!r} tstar={h.t_star!r}\n")
        for k in range(len(h)):
            t, arr, _ = h.entry(k)
            fh.write(f"t={t!r}\n")
            fh.write(grid.format_field(Field(h.domain, arr)))


def read_history(path) -> History:
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[:2] != ["AEROPLATE-HIST", "v1"]:
        raise ValueError("not an AEROPLATE-HIST checkpoint")
    kv = dict(tok.split("=", 1) for tok in head[2:])
    n, dt, tstar = int(kv["n"]), float(kv["dt"]), float(kv["tstar"])
    h = None
    pos = 1
    for _ in range(n):
        t = float(lines[pos].split("=", 1)[1])
        hdr = lines[pos + 1]
        nx = int(hdr.split("nx=")[1].split()[0])
        f = grid.parse_field("\n".join(lines[pos + 1:pos + 2 + nx]))
        if h is None:
            h = History(f.domain, dt, tstar, retain=max(tstar, (n - 3) * dt))
        h._append(t, f.values)
        pos += 2 + nx
    return h


# ---------------------------------------------------------------------------
# delay potential
# ---------------------------------------------------------------------------

def second_derivatives(a: np.ndarray, domain: Domain) -> np.ndarray:
    """Stack ``(u_xx, u_xy, u_yy)`` computed on the grid with zero boundary values."""
    return np.stack([grid.dxx(a, domain.hx), grid.dxy(a, domain.hx, domain.hy), grid.dyy(a, domain.hy)])


class DelayOperator:
    """Precomputed FFT kernels for the delay potential on one domain.

    ``kernels[j, c]`` is the spectrum of the convolution kernel that maps the
    c-th second derivative (xx, xy, yy) sampled at time ``t - s_j`` to its
    contribution to ``q(t)``; trapezoid weights and the ``1/(2 pi)`` are folded in.
    """

    def __init__(self, domain: Domain, spec: DelaySpec):
        self.domain = domain
        self.spec = spec
        nx, ny = domain.shape
        self.pad = (scipy.fft.next_fast_len(2 * nx), scipy.fft.next_fast_len(2 * ny))
        s, ws = spec.s_nodes()
        th, wt = spec.theta_nodes()
        self.s = s
        px, py = self.pad
        coef = np.stack([np.sin(th) ** 2, 2 * np.sin(th) * np.cos(th), np.cos(th) ** 2])  # (3, nth)
        kern = np.zeros((len(s), 3, px, py))
        for j, sj in enumerate(s):
            sx = sj * (spec.U + np.sin(th)) / domain.hx
            sy = sj * np.cos(th) / domain.hy
            ix = np.floor(sx).astype(int)
            iy = np.floor(sy).astype(int)
            fx = sx - ix
            fy = sy - iy
            w = ws[j] * wt / (2 * np.pi)
            for ox, wx in ((ix, 1 - fx), (ix + 1, fx)):
                for oy, wy in ((iy, 1 - fy), (iy + 1, fy)):
                    keep = (np.abs(ox) < nx) & (np.abs(oy) < ny) & (wx * wy != 0)
                    if not np.any(keep):
                        continue
                    for c in range(3):
                        np.add.at(kern[j, c], (ox[keep] % px, oy[keep] % py),
                                  (w * coef[c] * wx * wy)[keep])
        self.kernels = scipy.fft.rfft2(kern, s=self.pad)
        self.static_kernel = self.kernels.sum(axis=0)

    def transform(self, a: np.ndarray) -> np.ndarray:
        return scipy.fft.rfft2(second_derivatives(a, self.domain), s=self.pad)

    def _back(self, spec_sum: np.ndarray) -> np.ndarray:
        nx, ny = self.domain.shape
        return scipy.fft.irfft2(spec_sum, s=self.pad)[:nx, :ny]

    def _entry_transform(self, h: History, k: int) -> np.ndarray:
        cache = h._cache[k]
        key = ("dft", id(self))
        g = cache.get(key)
        if g is None:
            g = self.transform(h._fields[k])
            cache[key] = g
        return g

    def _weights(self, h: History, t: float, n: int):
        """Per-entry time-interpolation weights: ``{entry index: [(j, w), ...]}``."""
        t0 = h.t_first
        out = {}
        for j, sj in enumerate(self.s):
            x = (t - sj - t0) / h.dt
            k = int(math.floor(x + 1e-9))
            k = min(max(k, 0), n - 1)
            a = x - k
            if k >= n - 1 or abs(a) < 1e-9:
                out.setdefault(k, []).append((j, 1.0))
            else:
                out.setdefault(k, []).append((j, 1.0 - a))
                out.setdefault(k + 1, []).append((j, a))
        return out

    def _check_window(self, h: History, t: float, t_end: float):
        if h.domain != self.domain:
            raise DomainMismatch("history domain differs from operator domain")
        eps = 1e-9 * max(1.0, abs(t))
        if t > t_end + eps or t - self.spec.t_star < h.t_first - eps:
            raise OutOfWindow(f"q({t}) needs history on [{t - self.spec.t_star}, {t}], "
                              f"have [{h.t_first}, {t_end}]")

    def _accumulate(self, h: History, weights: dict, skip: int | None = None):
        acc = np.zeros(self.kernels.shape[1:], dtype=complex)
        for k, jw in weights.items():
            if k == skip:
                continue
            if len(jw) == 1:
                j, w = jw[0]
                kern = self.kernels[j] if w == 1.0 else w * self.kernels[j]
            else:
                kern = sum(w * self.kernels[j] for j, w in jw)
            acc += kern * self._entry_transform(h, k)
        return acc

    def _new_entry_kernel(self, weights: dict, k_new: int):
        jw = weights.get(k_new, [])
        return sum((w * self.kernels[j] for j, w in jw), np.zeros(self.kernels.shape[1:], dtype=complex))

    def potential_array(self, h: History, t: float, extra: tuple[float, np.ndarray] | None = None) -> np.ndarray:
        """Delay potential at time ``t`` from the history.

        ``extra = (t_new, u_new)`` appends one provisional entry one history
        step past the end without mutating ``h``.
        """
        if extra is not None:
            t_new, u_new = extra
            return self.next_level(h, t_new)(u_new)
        self._check_window(h, t, h.t_last)
        acc = self._accumulate(h, self._weights(h, t, len(h)))
        return self._back(acc.sum(axis=0))

    def next_level(self, h: History, t_new: float):
        """Return ``u_new -> q(t_new)`` for a provisional entry appended at ``t_new``.

        The history part is summed once; each call only transforms ``u_new``.
        """
        if abs(t_new - (h.t_last + h.dt)) > 1e-9 * max(1.0, abs(t_new)):
            raise NonUniformTime("provisional entry must follow the last history time")
        self._check_window(h, t_new, t_new)
        n = len(h) + 1
        weights = self._weights(h, t_new, n)
        rest = self._accumulate(h, weights, skip=n - 1)
        k_new = self._new_entry_kernel(weights, n - 1)

        def q_of(u_new):
            return self._back((rest + k_new * self.transform(u_new)).sum(axis=0))

        return q_of

    def potential(self, h: History, t: float) -> Field:
        return Field(self.domain, self.potential_array(h, t))

    def static_array(self, a: np.ndarray) -> np.ndarray:
        """Delay potential of the constant-in-time history ``u(t) = a``."""
        return self._back((self.static_kernel * self.transform(a)).sum(axis=0))

    def static_matrix(self) -> np.ndarray:
        """Dense matrix of :meth:`static_array` on flattened fields (built once)."""
        if getattr(self, "_static_matrix", None) is None:
            n = self.domain.size
            cols = np.empty((n, n))
            e = np.zeros(n)
            for i in range(n):
                e[i] = 1.0
                cols[:, i] = self.static_array(e.reshape(self.domain.shape)).ravel()
                e[i] = 0.0
            self._static_matrix = cols
        return self._static_matrix


@functools.lru_cache(maxsize=16)
def delay_operator(domain: Domain, spec: DelaySpec) -> DelayOperator:
    return DelayOperator(domain, spec)


def delay_potential(h: History, spec: DelaySpec, t: float) -> Field:
    return delay_operator(h.domain, spec).potential(h, t)


def quadrature_error_estimate(h: History, spec: DelaySpec, t: float) -> float:
    """Richardson estimate of the L2 quadrature error of ``q(t)`` at ``spec``.

    Compares with the rule on half as many theta nodes and s panels; for a
    second-order rule the error at ``spec`` is about a third of that change.
    """
    if spec.n_theta < 32 or spec.n_s < 32 or spec.n_theta % 4 or spec.n_s % 4:
        raise ValueError("need n_theta, n_s >= 32 and divisible by 4 for the half-resolution rule")
    coarse = DelaySpec(spec.U, spec.t_star, spec.n_theta // 2, spec.n_s // 2)
    q = delay_operator(h.domain, spec).potential(h, t)
    qc = delay_operator(h.domain, coarse).potential(h, t)
    return grid.sobolev_norm(q - qc, 0) / 3.0


# ---------------------------------------------------------------------------
# estimate probe
# ---------------------------------------------------------------------------

@dataclass
class DelayEstimates:
    """``LHS / RHS`` of the four delay-potential bounds, with the constant dropped."""
    qneg: float      # ||q||_{-1}^2 / (t* int ||u||_1^2)
    ql2: float       # ||q||^2 / (t* int ||u||_2^2)
    qint: float      # int ||q||^2 / (t*^2 int ||u||_2^2)
    qdot: float      # ||q_t||_{-1} / (||u(t)||_1 + ||u(t-t*)||_1 + int ||u||_2)

    def as_tuple(self):
        return (self.qneg, self.ql2, self.qint, self.qdot)


def _ratio(num, den):
    return 0.0 if num == 0 else num / den


def _trapz_history(h: History, a: float, b: float, func) -> float:
    """Trapezoid integral of ``func(u_array)`` over ``[a, b]`` on history nodes."""
    times = h.times()
    inner_t = times[(times > a + 1e-12) & (times < b - 1e-12)]
    ts = np.concatenate([[a], inner_t, [b]])
    vals = np.array([func(h.sample_array(t)) for t in ts])
    return float(np.trapezoid(vals, ts))


def delay_estimates_probe(h: History, spec: DelaySpec, t: float | None = None) -> DelayEstimates:
    """Evaluate the four delay-potential estimate ratios at time ``t``.

    The time-integrated bound uses every ``tau`` in the stored span at which
    ``q`` is computable, i.e. ``[t_first + t*, t]``.  ``q_t`` is the centered
    difference over one history step either side of ``t - dt``.
    """
    op = delay_operator(h.domain, spec)
    d = h.domain
    t = h.t_last if t is None else t
    ts = spec.t_star

    def norm(a, s):
        return grid.sobolev_norm(Field(d, a), s)

    q = op.potential_array(h, t)
    int_u1 = _trapz_history(h, t - ts, t, lambda a: norm(a, 1) ** 2)
    int_u2 = _trapz_history(h, t - ts, t, lambda a: norm(a, 2) ** 2)
    qneg = _ratio(norm(q, -1) ** 2, ts * int_u1)
    ql2 = _ratio(norm(q, 0) ** 2, ts * int_u2)

    start = h.t_first + ts
    taus = np.arange(t, start - 1e-9, -h.dt)[::-1]
    if len(taus) >= 2:
        qq = np.array([norm(op.potential_array(h, tau), 0) ** 2 for tau in taus])
        int_q = float(np.trapezoid(qq, taus))
        int_u = _trapz_history(h, taus[0] - ts, t, lambda a: norm(a, 2) ** 2)
        qint = _ratio(int_q, ts**2 * int_u)
    else:
        qint = ql2

    tc = t - h.dt
    if tc - h.dt - ts >= h.t_first - 1e-9:
        qt = (q - op.potential_array(h, tc - h.dt)) / (2 * h.dt)
        rhs = (norm(h.sample_array(tc), 1) + norm(h.sample_array(tc - ts), 1)
               + _trapz_history(h, tc - ts, tc, lambda a: norm(a, 2)))
        qdot = _ratio(norm(qt, -1), rhs)
    else:
        qdot = float("nan")
    return DelayEstimates(qneg, ql2, qint, qdot)
