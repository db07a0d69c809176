"""
Finite Hilbert transform on (-1, 1), its airfoil-equation inversion and the
full-line Hilbert symbol.

Convention: ``H f(x) = (1/pi) PV int_{-1}^{1} f(t) / (t - x) dt``.

Fields live on Chebyshev first-kind nodes ``x_k = -cos((k + 1/2) pi / n)``
and carry a weight class describing their endpoint behavior:

    none     f regular                        (Chebyshev T expansion)
    sqrt     f = sqrt(1 - x^2) g               (U expansion of g)
    kutta    f = sqrt((1 - x)/(1 + x)) g       (fourth-kind W expansion of g)
    inverse  f = g / sqrt(1 - x^2)             (T expansion of g)

with ``g`` regular.  Each class has a closed-form transform:

    H[f]                    = (1/pi)(f(x) ln((1-x)/(1+x)) + sum c_n J_n(x))   (none)
    H[sqrt(1-t^2) U_{n-1}]  = -T_n
    H[sqrt((1-t)/(1+t)) W_n] = -V_n
    H[T_n / sqrt(1-t^2)]    = U_{n-1},   H[1/sqrt(1-t^2)] = 0

where ``J_n(x) = int (T_n(t) - T_n(x))/(t - x) dt`` obeys
``J_{n+1} = 2x J_n + 2 int T_n - J_{n-1}``, ``J_0 = 0``, ``J_1 = 2``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import RangeDeficient

WEIGHTS = ("none", "sqrt", "kutta", "inverse")
ROLES = ("downwash", "potential")


class AliasWarning(UserWarning):
    """Samples do not decay at the ends of a periodic grid."""


@dataclass(frozen=True)
class IntervalGrid:
    n: int

    def __post_init__(self):
        if self.n < 32:
            raise ValueError("IntervalGrid needs n >= 32")

    @property
    def theta(self) -> np.ndarray:
        """Angles in (0, pi), decreasing so that the nodes increase."""
        return (self.n - np.arange(self.n) - 0.5) * np.pi / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.cos(self.theta)

    @property
    def weights(self) -> np.ndarray:
        """Fejer first-rule weights: ``int_{-1}^1 f ~ sum w_k f(x_k)``."""
        n = self.n
        th = self.theta
        m = np.arange(1, n // 2 + 1)
        s = np.sum(np.cos(2 * np.outer(th, m)) / (4 * m**2 - 1), axis=1)
        return 2.0 / n * (1 - 2 * s)

    def sample(self, func) -> np.ndarray:
        return np.asarray(func(self.nodes), dtype=float)


def weight_function(kind: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if kind == "none":
        return np.ones_like(x)
    if kind == "sqrt":
        return np.sqrt(1 - x * x)
    if kind == "kutta":
        return np.sqrt((1 - x) / (1 + x))
    if kind == "inverse":
        return 1.0 / np.sqrt(1 - x * x)
    raise ValueError(f"unknown weight class {kind!r}")


@dataclass(frozen=True)
class PossioField:
    grid: IntervalGrid
    values: np.ndarray
    role: str = "downwash"
    weight: str = "none"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.weight not in WEIGHTS:
            raise ValueError(f"weight must be one of {WEIGHTS}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: IntervalGrid, func, role="downwash", weight="none"):
        return cls(grid, grid.sample(func), role, weight)

    @property
    def regular_part(self) -> np.ndarray:
        return self.values / weight_function(self.weight, self.grid.nodes)


# ---------------------------------------------------------------------------
# expansions on first-kind nodes
# ---------------------------------------------------------------------------
# With theta_k = (k + 1/2) pi / n in increasing order the transforms below are
# the standard DCT/DST types; our nodes run in the opposite order, hence the
# [::-1] flips.

def _cheb_T(g):
    """Coefficients of ``g = sum c_n T_n`` interpolating at the nodes."""
    n = len(g)
    c = scipy.fft.dct(g[::-1], type=2) / n
    c[0] /= 2
    return c


def _cheb_U(g, theta):
    """``g = sum d_n U_n``: ``g sin(theta) = sum d_n sin((n+1) theta)``."""
    n = len(g)
    d = scipy.fft.dst((g * np.sin(theta))[::-1], type=2) / n
    d[-1] /= 2
    return d


def _cheb_V(g, theta):
    """``g = sum a_n V_n``: ``g cos(theta/2) = sum a_n cos((n+1/2) theta)``."""
    n = len(g)
    return scipy.fft.dct((g * np.cos(theta / 2))[::-1], type=4) / n


def _cheb_W(g, theta):
    """``g = sum b_n W_n``: ``g sin(theta/2) = sum b_n sin((n+1/2) theta)``."""
    n = len(g)
    return scipy.fft.dst((g * np.sin(theta / 2))[::-1], type=4) / n


def _eval_T(c, x):
    return np.polynomial.chebyshev.chebval(x, c)


def _eval_U(d, x):
    th = np.arccos(np.clip(x, -1, 1))
    n = np.arange(len(d))
    return np.sin(np.outer(th, n + 1)) @ d / np.sin(th)


def _eval_V(a, x):
    th = np.arccos(np.clip(x, -1, 1))
    n = np.arange(len(a))
    return np.cos(np.outer(th, n + 0.5)) @ a / np.cos(th / 2)


def _eval_W(b, x):
    th = np.arccos(np.clip(x, -1, 1))
    n = np.arange(len(b))
    return np.sin(np.outer(th, n + 0.5)) @ b / np.sin(th / 2)


def _int_T(n):
    """``int_{-1}^1 T_n``."""
    if n % 2 == 1:
        return 0.0
    return 2.0 / (1.0 - n * n)


def _hilbert_regular(c, x, fx):
    J_prev = np.zeros_like(x)
    J = np.full_like(x, 2.0)
    acc = np.zeros_like(x)
    if len(c) > 1:
        acc += c[1] * J
    for n in range(1, len(c) - 1):
        J_prev, J = J, 2 * x * J + 2 * _int_T(n) - J_prev
        acc += c[n + 1] * J
    return (fx * np.log((1 - x) / (1 + x)) + acc) / np.pi


def finite_hilbert(f: PossioField, at=None) -> PossioField | np.ndarray:
    """``(1/pi) PV int f(t)/(t - x) dt`` at the nodes (or at points ``at``).

    Returns a regular-class field on the same grid, or an array when ``at``
    is given.
    """
    gr = f.grid
    th = gr.theta
    g = f.regular_part
    x = gr.nodes if at is None else np.asarray(at, dtype=float)
    if f.weight == "none":
        c = _cheb_T(g)
        fx = g if at is None else _eval_T(c, x)
        out = _hilbert_regular(c, x, fx)
    elif f.weight == "sqrt":
        out = -_eval_T(np.concatenate([[0.0], _cheb_U(g, th)]), x)
    elif f.weight == "kutta":
        out = -_eval_V(_cheb_W(g, th), x)
    else:
        c = _cheb_T(g)
        out = _eval_U(c[1:], x) if len(c) > 1 else np.zeros_like(x)
    if at is not None:
        return out
    role = "potential" if f.role == "downwash" else "downwash"
    return PossioField(gr, out, role, "none")


def invert_finite_hilbert(g: PossioField, p: float = 1.5, tol: float = 1e-6) -> PossioField:
    """Solve ``H f = g`` for regular ``g`` in ``L_p(-1, 1)``.

    For ``1 < p < 2`` the solution bounded at the trailing edge ``x = 1`` is
    returned: ``g = sum a_n V_n`` gives ``f = -sqrt((1-x)/(1+x)) sum a_n W_n``.
    For ``p >= 2`` only solutions bounded at both ends qualify,
    ``f = sqrt(1 - x^2) sum d_n U_n``; their images miss ``T_0``, so a ``g``
    with a ``T_0`` component is outside the range and raises
    :class:`RangeDeficient` when the roundtrip residual exceeds ``tol``
    (relative, max norm).
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if g.weight != "none":
        raise ValueError("right-hand side must be a regular-class field")
    gr = g.grid
    th = gr.theta
    role = "potential" if g.role == "downwash" else "downwash"
    if p < 2:
        b = _cheb_V(g.values, th)
        f = PossioField(gr, -weight_function("kutta", gr.nodes) * _eval_W(b, gr.nodes), role, "kutta")
    else:
        c = _cheb_T(g.values)
        d = -c[1:]
        f = PossioField(gr, weight_function("sqrt", gr.nodes) * _eval_U(d, gr.nodes), role, "sqrt")
    back = finite_hilbert(f).values
    scale = max(np.max(np.abs(g.values)), 1e-300)
    res = float(np.max(np.abs(back - g.values)) / scale)
    if np.any(g.values) and res > tol:
        raise RangeDeficient(res)
    return f


def lp_norm(f: PossioField, p: float) -> float:
    """``(int |f|^p)^{1/p}`` by Gauss-Chebyshev quadrature of ``|f|^p sqrt(1-x^2)``."""
    gr = f.grid
    w = np.pi / gr.n * np.sqrt(1 - gr.nodes**2)
    return float(np.sum(w * np.abs(f.values) ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# full-line symbol
# ---------------------------------------------------------------------------

def hilbert_symbol_apply(f, cutoff: float | None = None, dx: float = 1.0,
                         edge_tol: float = 1e-8) -> np.ndarray:
    """Multiply the DFT of uniform samples by ``-i sign(eta)`` and transform back.

    This is the full-line Hilbert transform with ``cos -> sin``.  Frequencies
    above ``cutoff`` (angular, in units of ``1/dx``) are discarded.  Samples
    that do not decay at the grid ends trigger :class:`AliasWarning`.
    """
    f = np.asarray(f, dtype=float)
    peak = np.max(np.abs(f)) if f.size else 0.0
    if peak > 0 and max(abs(f[0]), abs(f[-1])) > edge_tol * peak:
        warnings.warn("samples do not vanish at the grid ends; periodic aliasing", AliasWarning,
                      stacklevel=2)
    F = np.fft.rfft(f)
    eta = 2 * np.pi * np.fft.rfftfreq(f.size, d=dx)
    F = -1j * np.sign(eta) * F
    if cutoff is not None:
        F[eta > cutoff] = 0.0
    return np.fft.irfft(F, n=f.size)


def write_possio_csv(path, f: PossioField) -> None:
    """Write ``x, f, Hf`` triples at the grid nodes."""
    hf = finite_hilbert(f).values
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "f", "Hf"])
        for x, a, b in zip(f.grid.nodes, f.values, hf):
            w.writerow([f"{x:.17g}", f"{a:.17g}", f"{b:.17g}"])
