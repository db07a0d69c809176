"""
Uniform-grid discretization of a rectangular clamped plate.

Fields live on the interior nodes ``x_i = i*hx, i = 1..nx`` and
``y_j = j*hy, j = 1..ny``.  Boundary nodes carry the value 0 and the ghost
layer outside the boundary mirrors the first interior layer, which encodes
``u = du/dn = 0``.  Arrays are indexed ``[i, j]`` (x first) and flattened in
C order.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainMismatch, NonConvergence, SpectralUnavailable

# fractional norms go through the Dirichlet eigenbasis; kept to diagnostic grid sizes
SPECTRAL_NODE_CAP = 96 * 96
# direct factorization of the clamped biharmonic below this many unknowns
DIRECT_SOLVE_LIMIT = 40_000


@dataclass(frozen=True)
class Domain:
    x_extent: float
    y_extent: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_extent > 0 and self.y_extent > 0):
            raise ValueError("domain extents must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("need at least 8 interior nodes per direction")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "x_extent", float(self.x_extent))
        object.__setattr__(self, "y_extent", float(self.y_extent))

    @property
    def hx(self) -> float:
        return self.x_extent / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.y_extent / (self.ny + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """1D coordinate arrays of the interior nodes."""
        x = self.hx * np.arange(1, self.nx + 1)
        y = self.hy * np.arange(1, self.ny + 1)
        return x, y

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.coords()
        return np.meshgrid(x, y, indexing="ij")

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def sample(self, func) -> "Field":
        """Field from a callable ``func(X, Y)`` evaluated at interior nodes."""
        X, Y = self.mesh()
        return Field(self, np.asarray(func(X, Y), dtype=float) * np.ones(self.shape))

    def refined(self, factor: int = 2) -> "Domain":
        """Same rectangle with the mesh width divided by ``factor``."""
        return Domain(self.x_extent, self.y_extent,
                      factor * (self.nx + 1) - 1, factor * (self.ny + 1) - 1)


class Field:
    """Immutable scalar field on the interior nodes of a domain."""

    __slots__ = ("domain", "values")

    def __init__(self, domain: Domain, values):
        arr = np.array(values, dtype=float, copy=True)
        if arr.shape != domain.shape:
            arr = arr.reshape(domain.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def _check(self, other: "Field"):
        if other.domain != self.domain:
            raise DomainMismatch(f"{self.domain} vs {other.domain}")

    def __add__(self, other):
        self._check(other)
        return Field(self.domain, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Field(self.domain, self.values - other.values)

    def __neg__(self):
        return Field(self.domain, -self.values)

    def __mul__(self, scalar):
        return Field(self.domain, float(scalar) * self.values)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field(nx={self.domain.nx}, ny={self.domain.ny}, max|u|={np.abs(self.values).max():.3e})"

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


def same_domain(*fields: Field) -> Domain:
    dom = fields[0].domain
    for f in fields[1:]:
        if f.domain != dom:
            raise DomainMismatch(f"{dom} vs {f.domain}")
    return dom


def inner(f: Field, g: Field) -> float:
    dom = same_domain(f, g)
    return float(np.sum(f.values * g.values) * dom.cell_area)


# ---------------------------------------------------------------------------
# array-level stencils (hot paths use these directly)
# ---------------------------------------------------------------------------

def pad_zero(a: np.ndarray) -> np.ndarray:
    """Interior array -> array including the zero boundary layer."""
    p = np.zeros((a.shape[0] + 2, a.shape[1] + 2))
    p[1:-1, 1:-1] = a
    return p


def lap_interior(a, hx, hy):
    p = pad_zero(a)
    return ((p[2:, 1:-1] - 2.0 * a + p[:-2, 1:-1]) / hx**2
            + (p[1:-1, 2:] - 2.0 * a + p[1:-1, :-2]) / hy**2)


def lap_extended(a, hx, hy):
    """Laplacian at interior and boundary nodes, ghosts mirrored (clamped).

    On an edge node only the normal second difference survives:
    ``(u_ghost - 2*0 + u_1)/h^2 = 2*u_1/h^2``.  Corners vanish.
    """
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2))
    out[1:-1, 1:-1] = lap_interior(a, hx, hy)
    out[0, 1:-1] = 2.0 * a[0, :] / hx**2
    out[-1, 1:-1] = 2.0 * a[-1, :] / hx**2
    out[1:-1, 0] = 2.0 * a[:, 0] / hy**2
    out[1:-1, -1] = 2.0 * a[:, -1] / hy**2
    return out


def lap_of_extended(e, hx, hy):
    """5-point Laplacian at interior nodes of an array that carries boundary values."""
    c = e[1:-1, 1:-1]
    return ((e[2:, 1:-1] - 2.0 * c + e[:-2, 1:-1]) / hx**2
            + (e[1:-1, 2:] - 2.0 * c + e[1:-1, :-2]) / hy**2)


def bih(a, hx, hy):
    return lap_of_extended(lap_extended(a, hx, hy), hx, hy)


def dxx(a, hx):
    p = np.zeros((a.shape[0] + 2, a.shape[1]))
    p[1:-1] = a
    return (p[2:] - 2.0 * a + p[:-2]) / hx**2


def dyy(a, hy):
    p = np.zeros((a.shape[0], a.shape[1] + 2))
    p[:, 1:-1] = a
    return (p[:, 2:] - 2.0 * a + p[:, :-2]) / hy**2


def dxy(a, hx, hy):
    p = pad_zero(a)
    return (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4.0 * hx * hy)


def dx_centered(a, hx):
    p = np.zeros((a.shape[0] + 2, a.shape[1]))
    p[1:-1] = a
    return (p[2:] - p[:-2]) / (2.0 * hx)


def trapezoid_weights_extended(nx, ny):
    """Trapezoid weights (without h factors) on the (nx+2, ny+2) extended grid."""
    wx = np.ones(nx + 2)
    wx[[0, -1]] = 0.5
    wy = np.ones(ny + 2)
    wy[[0, -1]] = 0.5
    return np.outer(wx, wy)


# ---------------------------------------------------------------------------
# Field-level operators
# ---------------------------------------------------------------------------

def apply_laplacian(f: Field) -> Field:
    d = f.domain
    return Field(d, lap_interior(f.values, d.hx, d.hy))


def laplacian_extended(f: Field) -> np.ndarray:
    """Clamped Laplacian including its (generally nonzero) boundary values."""
    d = f.domain
    return lap_extended(f.values, d.hx, d.hy)


def apply_biharmonic(f: Field) -> Field:
    """13-point clamped biharmonic: 5-point Laplacian of :func:`laplacian_extended`."""
    d = f.domain
    return Field(d, bih(f.values, d.hx, d.hy))


def laplacian_sq_norm(f: Field) -> float:
    """``||Lap f||^2`` with trapezoid weights on the extended grid; equals <B f, f>."""
    d = f.domain
    e = lap_extended(f.values, d.hx, d.hy)
    w = trapezoid_weights_extended(d.nx, d.ny)
    return float(np.sum(w * e * e) * d.cell_area)


# ---------------------------------------------------------------------------
# sparse matrices and solvers
# ---------------------------------------------------------------------------

def _second_difference(n, h):
    return sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2


@functools.lru_cache(maxsize=16)
def laplacian_matrix(domain: Domain) -> sp.csr_matrix:
    """Dirichlet 5-point Laplacian on interior nodes (C-order flattening)."""
    Dx = _second_difference(domain.nx, domain.hx)
    Dy = _second_difference(domain.ny, domain.hy)
    A = sp.kron(Dx, sp.identity(domain.ny)) + sp.kron(sp.identity(domain.nx), Dy)
    return A.tocsr()


@functools.lru_cache(maxsize=16)
def biharmonic_matrix(domain: Domain) -> sp.csr_matrix:
    """Clamped biharmonic matrix: A^2 plus the ghost-reflection diagonal."""
    A = laplacian_matrix(domain)
    corr = np.zeros(domain.shape)
    corr[[0, -1], :] += 2.0 / domain.hx**4
    corr[:, [0, -1]] += 2.0 / domain.hy**4
    return (A @ A + sp.diags(corr.ravel())).tocsr()


@functools.lru_cache(maxsize=16)
def _biharmonic_factor(domain: Domain):
    return spla.splu(biharmonic_matrix(domain).tocsc())


def dirichlet_eigenvalues(domain: Domain) -> np.ndarray:
    """Eigenvalues of -A on the (nx, ny) sine basis."""
    kx = np.arange(1, domain.nx + 1)
    ky = np.arange(1, domain.ny + 1)
    lx = (4.0 / domain.hx**2) * np.sin(kx * np.pi / (2 * (domain.nx + 1))) ** 2
    ly = (4.0 / domain.hy**2) * np.sin(ky * np.pi / (2 * (domain.ny + 1))) ** 2
    return lx[:, None] + ly[None, :]


def _dst(a):
    return scipy.fft.dstn(a, type=1, norm="ortho")


def _apply_dirichlet_power(a: np.ndarray, domain: Domain, power: float) -> np.ndarray:
    """(-A)^power applied through the sine transform (DST-I diagonalizes A)."""
    lam = dirichlet_eigenvalues(domain)
    return _dst(_dst(a) * lam**power)


def _residual(domain, u, rhs):
    r = rhs - bih(u, domain.hx, domain.hy)
    nr = np.linalg.norm(rhs)
    return np.linalg.norm(r) / nr if nr > 0 else np.linalg.norm(r)


def pcg_biharmonic(rhs: np.ndarray, domain: Domain, tol: float, maxiter: int = 500,
                   x0: np.ndarray | None = None):
    """Preconditioned CG for the clamped biharmonic, hinged-plate (A^-2) preconditioner.

    Returns ``(u, iterations, relative_residual)``.
    """
    hx, hy = domain.hx, domain.hy
    b = np.asarray(rhs, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - bih(x, hx, hy)
    z = _apply_dirichlet_power(r, domain, -2.0)
    d = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, maxiter + 1):
        Ad = bih(d, hx, hy)
        alpha = rz / np.vdot(d, Ad)
        x += alpha * d
        r -= alpha * Ad
        res = np.linalg.norm(r) / nb
        if res <= tol:
            return x, it, res
        z = _apply_dirichlet_power(r, domain, -2.0)
        rz_new = np.vdot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise NonConvergence(maxiter, res)


def solve_biharmonic_array(rhs: np.ndarray, domain: Domain, tol: float = 1e-10,
                           method: str = "auto") -> np.ndarray:
    """Solve ``B u = rhs`` for the clamped biharmonic ``B``; arrays in, array out."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float).reshape(domain.shape)
    if not np.any(rhs):
        return np.zeros(domain.shape)
    if method == "auto":
        method = "direct" if domain.size <= DIRECT_SOLVE_LIMIT else "pcg"
    if method == "direct":
        lu = _biharmonic_factor(domain)
        u = lu.solve(rhs.ravel()).reshape(domain.shape)
        res = _residual(domain, u, rhs)
        if res > tol:
            # one sweep of iterative refinement, then hand over to PCG
            u = u + lu.solve((rhs - bih(u, domain.hx, domain.hy)).ravel()).reshape(domain.shape)
            res = _residual(domain, u, rhs)
            if res > tol:
                u, _, res = pcg_biharmonic(rhs, domain, tol, x0=u)
        return u
    if method == "pcg":
        u, _, _ = pcg_biharmonic(rhs, domain, tol)
        return u
    raise ValueError(f"unknown method {method!r}")


def solve_biharmonic(rhs: Field, tol: float = 1e-10, method: str = "auto") -> Field:
    """Clamped solve: ``||apply_biharmonic(u) - rhs|| <= tol*||rhs||``."""
    return Field(rhs.domain, solve_biharmonic_array(rhs.values, rhs.domain, tol, method))


def solve_laplacian_dirichlet(rhs: Field, tol: float = 1e-10) -> Field:
    """``-Lap w = rhs`` with ``w = 0`` on the boundary (fast sine solver)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = rhs.domain
    b = rhs.values
    nb = np.linalg.norm(b)
    if nb == 0:
        return d.zeros()
    w = _apply_dirichlet_power(b, d, -1.0)
    res = np.linalg.norm(b + lap_interior(w, d.hx, d.hy)) / nb
    if res > tol:
        raise NonConvergence(1, res)
    return Field(d, w)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def sobolev_norm(f: Field, s: float, spectral_cap: int = SPECTRAL_NODE_CAP) -> float:
    """Discrete Sobolev-type norm of order ``s`` in [-1, 2].

    Integer orders use the stencils directly (``s=2`` is the clamped
    ``||Lap f||``); other orders interpolate through the sine eigenbasis of
    the Dirichlet Laplacian.
    """
    if not -1.0 <= s <= 2.0:
        raise ValueError(f"norm order {s} outside [-1, 2]")
    # scale to unit max first so squares neither underflow nor overflow
    peak = float(np.max(np.abs(f.values)))
    if peak == 0.0:
        return 0.0
    if peak != 1.0:
        return peak * sobolev_norm(Field(f.domain, f.values / peak), s, spectral_cap)
    d = f.domain
    a = f.values
    if s == 0:
        return float(np.sqrt(np.sum(a * a) * d.cell_area))
    if s == 1:
        p = pad_zero(a)
        gx = np.diff(p[:, 1:-1], axis=0) / d.hx
        gy = np.diff(p[1:-1, :], axis=1) / d.hy
        return float(np.sqrt((np.sum(a * a) + np.sum(gx * gx) + np.sum(gy * gy)) * d.cell_area))
    if s == 2:
        return float(np.sqrt(laplacian_sq_norm(f)))
    if s == -1:
        w = solve_laplacian_dirichlet(f)
        return float(np.sqrt(max(inner(f, w), 0.0)))
    if d.size > spectral_cap:
        raise SpectralUnavailable(f"fractional order {s} needs <= {spectral_cap} nodes, grid has {d.size}")
    coef = _dst(a)
    lam = dirichlet_eigenvalues(d)
    return float(np.sqrt(np.sum(lam**s * coef * coef) * d.cell_area))


# ---------------------------------------------------------------------------
# extension by zero
# ---------------------------------------------------------------------------

class ExtendedSampler:
    """Bilinear interpolant of a clamped field, exactly zero outside the rectangle."""

    def __init__(self, f: Field):
        self.domain = f.domain
        self._ext = pad_zero(f.values)

    def __call__(self, x, y):
        d = self.domain
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx = x / d.hx
        gy = y / d.hy
        inside = (gx >= 0) & (gx <= d.nx + 1) & (gy >= 0) & (gy <= d.ny + 1)
        gx = np.where(inside, gx, 0.0)
        gy = np.where(inside, gy, 0.0)
        # x/h rounds to k - 1e-16 at nodes; snap so nodes return stored values
        gx = np.where(np.abs(gx - np.round(gx)) < 1e-9, np.round(gx), gx)
        gy = np.where(np.abs(gy - np.round(gy)) < 1e-9, np.round(gy), gy)
        i0 = np.minimum(np.floor(gx).astype(int), d.nx)
        j0 = np.minimum(np.floor(gy).astype(int), d.ny)
        tx = gx - i0
        ty = gy - j0
        e = self._ext
        val = ((1 - tx) * (1 - ty) * e[i0, j0] + tx * (1 - ty) * e[i0 + 1, j0]
               + (1 - tx) * ty * e[i0, j0 + 1] + tx * ty * e[i0 + 1, j0 + 1])
        return np.where(inside, val, 0.0)


def extend_by_zero(f: Field) -> ExtendedSampler:
    return ExtendedSampler(f)


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

FIELD_MAGIC = "AEROPLATE-FIELD v1"


def format_field(f: Field) -> str:
    d = f.domain
    header = f"{FIELD_MAGIC} nx={d.nx} ny={d.ny} Lx={d.x_extent!r} Ly={d.y_extent!r}"
    body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in f.values)
    return header + "\n" + body + "\n"


def parse_field(text: str) -> Field:
    lines = text.split("\n", 1)
    head = lines[0].split()
    if " ".join(head[:2]) != FIELD_MAGIC:
        raise ValueError("not an AEROPLATE-FIELD snapshot")
    kv = dict(tok.split("=", 1) for tok in head[2:])
    dom = Domain(float(kv["Lx"]), float(kv["Ly"]), int(kv["nx"]), int(kv["ny"]))
    vals = np.array(lines[1].split(), dtype=float) if len(lines) > 1 else np.array([])
    if vals.size != dom.size:
        raise ValueError(f"expected {dom.size} values, found {vals.size}")
    return Field(dom, vals.reshape(dom.shape))


def write_field(path, f: Field) -> None:
    with open(path, "w") as fh:
        fh.write(format_field(f))


def read_field(path) -> Field:
    with open(path) as fh:
        return parse_field(fh.read())
