"""
Von Karman bracket, Airy stress function and the plate nonlinearity.

The discrete bracket is the symmetrization of the pointwise centered-stencil
bracket over the trilinear form ``T(a, b, c) = <[a, b], c>``.  The result is
still a second-order approximation of ``[u, w]``, but ``T`` is exactly
symmetric under every permutation, so ``f(u) = -[u, v(u) + F0]`` is the exact
gradient of the discrete potential ``1/4 ||Lap v(u)||^2 - 1/2 <[u, F0], u>``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import grid
from .grid import Domain, Field, dxx, dxy, dyy, same_domain


@dataclass(frozen=True)
class AiryConfig:
    solver_tol: float = 1e-11
    cache_enabled: bool = True

    def __post_init__(self):
        if not 0 < self.solver_tol <= 1e-4:
            raise ValueError("solver_tol must lie in (0, 1e-4]")


@dataclass(frozen=True)
class LoadSpec:
    p0: Field
    F0: Field

    def __post_init__(self):
        same_domain(self.p0, self.F0)
        d = self.F0.domain
        lap = grid.lap_interior(self.F0.values, d.hx, d.hy)
        nlap = np.linalg.norm(lap)
        if nlap > 0:
            # a mesh-scale oscillation has |Lap^2 F| ~ (8/h^2)|Lap F|
            rough = np.linalg.norm(grid.lap_interior(lap, d.hx, d.hy)) / nlap
            if rough > 0.25 * 8.0 / min(d.hx, d.hy) ** 2:
                warnings.warn("F0 is under-resolved on this grid; the bracket with F0 "
                              "will carry O(1) discretization error", stacklevel=3)

    @classmethod
    def zero(cls, domain: Domain) -> "LoadSpec":
        return cls(domain.zeros(), domain.zeros())


# ---------------------------------------------------------------------------
# arrays
# ---------------------------------------------------------------------------

def bracket_pointwise_array(a, b, hx, hy):
    """Pointwise centered-stencil bracket ``a_xx b_yy + a_yy b_xx - 2 a_xy b_xy``."""
    return dxx(a, hx) * dyy(b, hy) + dyy(a, hy) * dxx(b, hx) - 2.0 * dxy(a, hx, hy) * dxy(b, hx, hy)


def _bracket_adjoint(b, a, hx, hy):
    """Riesz representative of ``c -> <[b, c], a>`` for the pointwise bracket.

    The one-dimensional stencils are symmetric matrices on zero-boundary
    fields, so transposes are the stencils themselves.
    """
    return (dyy(a * dxx(b, hx), hy) + dxx(a * dyy(b, hy), hx)
            - 2.0 * dxy(a * dxy(b, hx, hy), hx, hy))


def bracket_array(a, b, hx, hy):
    # grouping the adjoint pair keeps the result bitwise symmetric in (a, b)
    return (bracket_pointwise_array(a, b, hx, hy)
            + (_bracket_adjoint(b, a, hx, hy) + _bracket_adjoint(a, b, hx, hy))) / 3.0


def airy_array(a, b, domain: Domain, tol: float):
    return grid.solve_biharmonic_array(-bracket_array(a, b, domain.hx, domain.hy), domain, tol)


def nonlinearity_array(a, F0, domain: Domain, tol: float, v=None):
    """``f(u) = -[u, v(u) + F0]``; pass ``v`` to reuse an Airy solve."""
    if v is None:
        v = airy_array(a, a, domain, tol)
    return -bracket_array(a, v + F0, domain.hx, domain.hy)


def pistar_array(a, v, domain: Domain):
    """``Pi_*(u) = 1/2 (||Lap u||^2 + 1/2 ||Lap v(u)||^2)``."""
    w = grid.trapezoid_weights_extended(domain.nx, domain.ny) * domain.cell_area
    eu = grid.lap_extended(a, domain.hx, domain.hy)
    ev = grid.lap_extended(v, domain.hx, domain.hy)
    return 0.5 * (np.sum(w * eu * eu) + 0.5 * np.sum(w * ev * ev))


# ---------------------------------------------------------------------------
# Field API
# ---------------------------------------------------------------------------

def bracket(u: Field, w: Field) -> Field:
    d = same_domain(u, w)
    return Field(d, bracket_array(u.values, w.values, d.hx, d.hy))


def bracket_pointwise(u: Field, w: Field) -> Field:
    """The unsymmetrized stencil bracket; kept for consistency diagnostics."""
    d = same_domain(u, w)
    return Field(d, bracket_pointwise_array(u.values, w.values, d.hx, d.hy))


class AiryCache:
    """Per-step memo of ``v(u)`` keyed on the identity of ``u``.

    Create one per time step (or per evaluation context) and pass it to
    :func:`nonlinearity` and :func:`potential_energy` so they share the solve.
    """

    def __init__(self):
        self._store = {}

    def get(self, u: Field, cfg: AiryConfig) -> Field:
        if not cfg.cache_enabled:
            return airy(u, u, cfg)
        key = id(u)
        hit = self._store.get(key)
        if hit is not None and hit[0] is u:
            return hit[1]
        v = airy(u, u, cfg)
        self._store[key] = (u, v)
        return v


def airy(u: Field, w: Field, cfg: AiryConfig = AiryConfig()) -> Field:
    """Airy stress function: ``Lap^2 v = -[u, w]``, ``v = dv/dn = 0`` on the boundary."""
    d = same_domain(u, w)
    return Field(d, airy_array(u.values, w.values, d, cfg.solver_tol))


def nonlinearity(u: Field, loads: LoadSpec, cfg: AiryConfig = AiryConfig(),
                 cache: AiryCache | None = None) -> Field:
    d = same_domain(u, loads.F0)
    v = cache.get(u, cfg) if cache is not None else airy(u, u, cfg)
    return Field(d, nonlinearity_array(u.values, loads.F0.values, d, cfg.solver_tol, v=v.values))


def potential_energy(u: Field, loads: LoadSpec, cfg: AiryConfig = AiryConfig(),
                     cache: AiryCache | None = None) -> tuple[float, float]:
    """Return ``(Pi, Pi_star)``.

    ``Pi = 1/4 ||Lap v(u)||^2 - 1/2 <[u, u], F0>`` (no boundary integral in
    the clamped case) and ``Pi_star = 1/2 (||Lap u||^2 + 1/2 ||Lap v(u)||^2)``.
    """
    d = same_domain(u, loads.F0)
    v = cache.get(u, cfg) if cache is not None else airy(u, u, cfg)
    lv2 = grid.laplacian_sq_norm(v)
    pi = 0.25 * lv2 - 0.5 * grid.inner(bracket(u, u), loads.F0)
    pistar = 0.5 * (grid.laplacian_sq_norm(u) + 0.5 * lv2)
    return float(pi), float(pistar)


def lipschitz_probe(u1: Field, u2: Field, delta: float, loads: LoadSpec,
                    cfg: AiryConfig = AiryConfig()) -> float:
    """Ratio ``||f(u1) - f(u2)||_{-delta} / ((1 + ||u1||_2^2 + ||u2||_2^2) ||u1 - u2||_{2-delta})``."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    z = u1 - u2
    if not np.any(z.values):
        return 0.0
    df = nonlinearity(u1, loads, cfg) - nonlinearity(u2, loads, cfg)
    num = grid.sobolev_norm(df, -delta)
    den = (1.0 + grid.sobolev_norm(u1, 2) ** 2 + grid.sobolev_norm(u2, 2) ** 2) * grid.sobolev_norm(z, 2 - delta)
    return num / den


def airy_regularity_probe(fields, cfg: AiryConfig = AiryConfig()) -> float:
    """Largest ``max|v(u)| / ||u||_2^2`` over a family of fields."""
    worst = 0.0
    for u in fields:
        n2 = grid.sobolev_norm(u, 2) ** 2
        if n2 == 0:
            continue
        v = airy(u, u, cfg)
        worst = max(worst, float(np.abs(v.values).max()) / n2)
    return worst


def low_frequency_probe(fields, eps: float, delta: float, cfg: AiryConfig = AiryConfig()) -> float:
    """Smallest ``C_eps`` with ``||u||_{2-delta}^2 <= eps (||u||_2^2 + ||Lap v(u)||^2) + C_eps`` on the family."""
    c = 0.0
    for u in fields:
        v = airy(u, u, cfg)
        lhs = grid.sobolev_norm(u, 2 - delta) ** 2
        rhs = eps * (grid.sobolev_norm(u, 2) ** 2 + grid.laplacian_sq_norm(v))
        c = max(c, lhs - rhs)
    return c
