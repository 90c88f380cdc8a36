"""Bulk, surface, and surface-dipole distributions with their pairings.

Three families: volume densities over the domain (possibly jumping across
the interface), surface densities pairing with test values on the
interface, and dipole densities pairing with normal derivatives of tests.
Divergence and curl are defined through the pairings; the closed-form
right-hand sides (identity1_rhs / identity2_rhs) provide the independent
second evaluation path used by the verification suites.

Every pairing returns a value together with a two-level quadrature error
estimate.  Comparisons downstream use max(abs_tol, rel_tol * scale).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _tensor as T
from .errors import ConfigError, RankMismatchError, StressDistError
from .fields import SurfaceField, surface_divergence
from .geometry import (DEFAULT_SURFACE_LEVEL, DEFAULT_VOLUME_LEVEL,
                       support_volume_quad)

ABS_TOL = 1e-7
REL_TOL = 1e-5

# extra refinement applied on top of the per-path defaults (CLI --refine)
LEVEL_BOOST = 0
ADAPTED_LEVEL = 1          # support-clipped quadratures resolve locally


def _lv(level, adapted):
    if level is not None:
        return level
    return (ADAPTED_LEVEL if adapted else DEFAULT_VOLUME_LEVEL) + LEVEL_BOOST


def _test_support(test):
    """(center, radius) of a compactly supported test, if it exposes one."""
    t = test
    for _ in range(6):
        if hasattr(t, 'center') and hasattr(t, 'radius'):
            return np.asarray(t.center, dtype=float), float(t.radius)
        t = getattr(t, 'base', None)
        if t is None:
            return None
    return None


def _test_breaks(test):
    """Radial structure advertised by a (wrapped) global test field."""
    t = test
    for _ in range(6):
        vb = getattr(t, 'volume_breaks', None)
        if vb is not None:
            return tuple(vb)
        t = getattr(t, 'base', None)
        if t is None:
            return None
    return None


def _volume_quad(dist, lv, support, test=None):
    """Support-adapted volume quadrature, falling back to the cached grid."""
    if support is not None:
        q = support_volume_quad(dist.interface, support[0], support[1], lv)
        if q is not None:
            return q, False
        return (dist.domain.volume_quadrature(dist.interface, lv,
                                              support=support), False)
    breaks = _test_breaks(test) if test is not None else None
    if breaks:
        # the graded radial breaks already resolve the profile layers, so a
        # coarser tensor level suffices
        return dist.domain.volume_quadrature(
            dist.interface, max(lv - 1, 0), extra_breaks=(breaks, (), ())), True
    return dist.domain.volume_quadrature(dist.interface, lv), True


@dataclass(frozen=True)
class PairingValue:
    """Scalar pairing result with an attached quadrature error estimate."""

    value: float
    error: float = 0.0

    def __add__(self, other):
        if isinstance(other, PairingValue):
            return PairingValue(self.value + other.value, self.error + other.error)
        return PairingValue(self.value + other, self.error)

    __radd__ = __add__

    def __neg__(self):
        return PairingValue(-self.value, self.error)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, a):
        return PairingValue(self.value * a, self.error * abs(a))

    __rmul__ = __mul__

    def __float__(self):
        return float(self.value)


def close(lhs, rhs, abs_tol=ABS_TOL, rel_tol=REL_TOL):
    """Tolerance rule for dual-path comparisons."""
    scale = max(abs(float(lhs)), abs(float(rhs)))
    return abs(float(lhs) - float(rhs)) <= max(abs_tol, rel_tol * scale)


def _contract(a, b):
    """Full contraction of equally-shaped (N, ...) arrays -> (N,)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise RankMismatchError(
            f"pairing shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return a * b
    n = a.shape[0]
    return np.einsum('nk,nk->n', a.reshape(n, -1), b.reshape(n, -1))


def _two_level(run, level):
    value = run(level)
    coarse = run(max(level - 1, 0)) if level > 0 else value
    return PairingValue(value, abs(value - coarse))


# ---------------------------------------------------------------------------
# the three families


class BDist:
    """Volume-density distribution over the domain."""

    family = 'B'

    def __init__(self, domain, interface, field):
        self.domain = domain
        self.interface = interface
        self.field = field
        self.rank = field.rank
        self._cache = {}

    def _values(self, quad, cache):
        if not cache:
            return np.asarray(self.field.value(quad.points))
        key = id(quad)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.field.value(quad.points))
        return self._cache[key]

    def _div_values(self, quad, cache):
        if not cache:
            return np.asarray(self.field.divergence(quad.points))
        key = ('div', id(quad))
        if key not in self._cache:
            self._cache[key] = np.asarray(self.field.divergence(quad.points))
        return self._cache[key]

    def pair(self, test, level=None):
        support = _test_support(test)

        def run(lv):
            q, cached = _volume_quad(self, lv, support, test)
            if len(q) == 0:
                return 0.0
            return float(np.dot(q.weights,
                                _contract(self._values(q, cached),
                                          test.value(q.points))))
        return _two_level(run, _lv(level, support is not None))


class CDist:
    """Surface-concentrated distribution on the interface."""

    family = 'C'

    def __init__(self, interface, surface_field):
        self.interface = interface
        self.density = surface_field
        self.rank = surface_field.rank
        self._cache = {}

    def _values(self, batch, cache=True):
        if not cache:
            return np.asarray(self.density.value(batch))
        key = id(batch)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.density.value(batch))
        return self._cache[key]

    def pair(self, test, level=None):
        support = _test_support(test)

        def run(lv):
            b = self.interface.surface_quadrature(lv, support=support)
            if len(b) == 0:
                return 0.0
            return float(np.dot(b.weights,
                                _contract(self._values(b, support is None),
                                          test.value(b.points))))
        return _two_level(run, _lv(level, support is not None))


class FDist:
    """Surface dipole distribution: pairs with normal derivatives of tests."""

    family = 'F'

    def __init__(self, interface, surface_field):
        self.interface = interface
        self.density = surface_field
        self.rank = surface_field.rank
        self._cache = {}

    def _values(self, batch, cache=True):
        if not cache:
            return np.asarray(self.density.value(batch))
        key = id(batch)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.density.value(batch))
        return self._cache[key]

    def pair(self, test, level=None):
        support = _test_support(test)

        def run(lv):
            b = self.interface.surface_quadrature(lv, support=support)
            if len(b) == 0:
                return 0.0
            dpsi_dn = np.einsum('n...j,nj->n...', test.gradient(b.points),
                                b.normals)
            return float(np.dot(b.weights,
                                _contract(self._values(b, support is None),
                                          dpsi_dn)))
        return _two_level(run, _lv(level, support is not None))


class CompositeDist:
    """Sum of optional bulk, surface, and dipole parts of one rank."""

    def __init__(self, b=None, c=None, f=None):
        parts = [p for p in (b, c, f) if p is not None]
        if not parts:
            raise StressDistError("composite distribution needs at least one part")
        ranks = {p.rank for p in parts}
        if len(ranks) != 1:
            raise RankMismatchError("composite parts must share one rank")
        self.b, self.c, self.f = b, c, f
        self.rank = ranks.pop()

    @property
    def parts(self):
        return [p for p in (self.b, self.c, self.f) if p is not None]

    @property
    def interface(self):
        for p in (self.c, self.f):
            if p is not None:
                return p.interface
        return self.b.interface

    @property
    def domain(self):
        return self.b.domain if self.b is not None else None

    def pair(self, test, level=None):
        out = PairingValue(0.0, 0.0)
        for p in self.parts:
            out = out + p.pair(test, **({} if level is None else {'level': level}))
        return out


def pair(dist, test, level=None):
    """Action of the distribution on a test function, with error estimate."""
    if isinstance(dist, CompositeDist):
        return dist.pair(test, level)
    if level is None:
        return dist.pair(test)
    return dist.pair(test, level=level)


# ---------------------------------------------------------------------------
# derivative wrappers for test functions


class GradTest:
    """The gradient of a test function viewed as a one-rank-higher test."""

    def __init__(self, base):
        self.base = base
        self.rank = base.rank + 1

    def value(self, pts):
        return self.base.gradient(pts)

    def gradient(self, pts):
        return self.base.hessian(pts)


class CurlTest:
    """curl of a vector test function (vector-valued)."""

    def __init__(self, base):
        if base.rank != 1:
            raise RankMismatchError("curl test needs a vector test function")
        self.base = base
        self.rank = 1

    def value(self, pts):
        return T.curl_from_gradient(self.base.gradient(pts))

    def gradient(self, pts):
        return np.einsum('ijk,nkjm->nim', T.EPS, self.base.hessian(pts))


class ColsCurlTest:
    """(curl(psi^T))^T of a tensor test: the pairing partner of tensor Curl."""

    def __init__(self, base):
        if base.rank != 2:
            raise RankMismatchError("tensor curl test needs a rank-2 test")
        self.base = base
        self.rank = 2

    def value(self, pts):
        return np.einsum('ikl,nljk->nij', T.EPS, self.base.gradient(pts))

    def gradient(self, pts):
        return np.einsum('ikl,nljkm->nijm', T.EPS, self.base.hessian(pts))


def distributional_div(dist, test, level=None):
    """Div T acting on a one-rank-lower test: -T(grad test)."""
    return -pair(dist, GradTest(test), level)


def distributional_curl(dist, test, level=None):
    """Curl T acting on a test of equal rank via the defining pairing."""
    rank = dist.rank
    if rank == 1:
        return pair(dist, CurlTest(test), level)
    if rank == 2:
        return pair(dist, ColsCurlTest(test), level)
    raise RankMismatchError("curl defined for vector and tensor distributions")


# ---------------------------------------------------------------------------
# closed-form divergence identities (dual path)


def _shape_times(batch, f_vals, rank):
    """(grad_S n) f for vectors, f (grad_S n) for tensors."""
    if rank == 1:
        return np.einsum('nij,nj->ni', batch.shape_ops, f_vals)
    return np.einsum('nij,njk->nik', f_vals, batch.shape_ops)


def _density_dot_normal(vals, normals, rank):
    if rank == 1:
        return np.einsum('ni,ni->n', vals, normals)
    return np.einsum('nij,nj->ni', vals, normals)


def identity1_rhs(dist, test, level=None):
    """Closed-form value of Div T(test) for each family, summed for composites.

    Requires differentiable densities; the interface term uses the jump of
    the bulk density, the surface terms use in-chart derivatives, curvature,
    and the shape operator.
    """
    if isinstance(dist, CompositeDist):
        out = PairingValue(0.0, 0.0)
        for p in dist.parts:
            out = out + identity1_rhs(p, test, level)
        return out

    rank = dist.rank
    support = _test_support(test)

    if isinstance(dist, BDist):
        def run_vol(lv):
            q, cached = _volume_quad(dist, lv, support, test)
            if len(q) == 0:
                return 0.0
            return float(np.dot(q.weights,
                                _contract(dist._div_values(q, cached),
                                          test.value(q.points))))

        out = _two_level(run_vol, _lv(level, support is not None))
        if dist.interface is not None:
            def run_surf(lv):
                b = dist.interface.surface_quadrature(lv, support=support)
                if len(b) == 0:
                    return 0.0
                jn = _density_dot_normal(dist.field.jump(b), b.normals, rank)
                return float(np.dot(b.weights, _contract(jn, test.value(b.points))))

            out = out + _two_level(run_surf, _lv(level, support is not None))
        return out

    slevel = _lv(level, support is not None)

    if isinstance(dist, CDist):
        def run(lv):
            b = dist.interface.surface_quadrature(lv, support=support)
            if len(b) == 0:
                return 0.0
            c = dist._values(b, support is None)
            div_c = surface_divergence(dist.density, b)
            cn = _density_dot_normal(c, b.normals, rank)
            coeff = div_c - b.kappa[..., None] * cn if rank == 2 \
                else div_c - b.kappa * cn
            dpsi_dn = np.einsum('n...j,nj->n...', test.gradient(b.points),
                                b.normals)
            integrand = (_contract(coeff, test.value(b.points))
                         - _contract(cn, dpsi_dn))
            return float(np.dot(b.weights, integrand))

        return _two_level(run, slevel)

    if isinstance(dist, FDist):
        shaped = SurfaceField(
            lambda b: _shape_times(b, dist.density.value(b), rank),
            rank, dist.interface)

        def run(lv):
            b = dist.interface.surface_quadrature(lv, support=support)
            if len(b) == 0:
                return 0.0
            f = dist._values(b, support is None)
            fn = _density_dot_normal(f, b.normals, rank)
            div_f = surface_divergence(dist.density, b)
            div_shaped = surface_divergence(shaped, b)
            dpsi_dn = np.einsum('n...j,nj->n...', test.gradient(b.points),
                                b.normals)
            hess = test.hessian(b.points)
            hnn = np.einsum('n...jk,nj,nk->n...', hess, b.normals, b.normals)
            coeff = div_f - (b.kappa[..., None] * fn if rank == 2
                             else b.kappa * fn)
            integrand = (-_contract(div_shaped, test.value(b.points))
                         + _contract(coeff, dpsi_dn)
                         - _contract(fn, hnn))
            return float(np.dot(b.weights, integrand))

        return _two_level(run, slevel)

    raise StressDistError(f"unknown distribution type {type(dist)!r}")


def _boundary_flux(domain, component, field, level):
    """integral of (field n) over one boundary component, out-of-domain normal."""
    total = np.zeros(3)
    for batch in domain.boundary_components[component].quadrature(level):
        vals = np.asarray(field.value(batch.points))
        tr = np.einsum('nij,nj->ni', vals, batch.normals)
        total += np.einsum('n,ni->i', batch.weights, tr)
    return total


def _curve_vector(interface, component, vec_of_curve, n=None):
    curve = (interface.curve_quadrature(component) if n is None
             else interface.curve_quadrature(component, n))
    vals = vec_of_curve(curve)
    return np.einsum('n,ni->i', curve.weights, vals)


def identity2_rhs(dist, gfield, level=None):
    """Closed-form value of T(grad u) for tensor distributions.

    Includes the boundary sums weighted by the constants of the gradient
    test field: bulk flux through each boundary component, and line
    integrals along the interface boundary curves with the in-plane
    conormal.
    """
    if isinstance(dist, CompositeDist):
        out = PairingValue(0.0, 0.0)
        for p in dist.parts:
            out = out + identity2_rhs(p, gfield, level)
        return out

    if dist.rank != 2:
        raise RankMismatchError("identity 2 applies to tensor distributions")
    constants = gfield.constants

    if isinstance(dist, BDist):
        vlevel = _lv(level, False)

        def run_vol(lv):
            q, _ = _volume_quad(dist, lv, None, gfield)
            return -float(np.dot(q.weights,
                                 _contract(dist._div_values(q, True),
                                           gfield.u(q.points))))

        out = _two_level(run_vol, vlevel)
        if dist.interface is not None:
            slevel = _lv(level, False)

            def run_surf(lv):
                b = dist.interface.surface_quadrature(lv)
                jn = np.einsum('nij,nj->ni', dist.field.jump(b), b.normals)
                return -float(np.dot(b.weights,
                                     _contract(jn, gfield.u(b.points))))

            out = out + _two_level(run_surf, slevel)
        blevel = _lv(level, False)
        bsum = 0.0
        for i, ci in enumerate(constants):
            if np.linalg.norm(ci) == 0.0:
                continue
            bsum += float(ci @ _boundary_flux(dist.domain, i, dist.field, blevel))
        return out + PairingValue(bsum, 0.0)

    slevel = _lv(level, False)
    interface = dist.interface
    _check_curve_data(interface, constants)

    if isinstance(dist, CDist):
        def run(lv):
            b = interface.surface_quadrature(lv)
            c = dist._values(b)
            div_c = surface_divergence(dist.density, b)
            cn = np.einsum('nij,nj->ni', c, b.normals)
            coeff = div_c - b.kappa[:, None] * cn
            du_dn = np.einsum('nij,nj->ni', gfield.value(b.points), b.normals)
            integrand = (-_contract(coeff, gfield.u(b.points))
                         + _contract(cn, du_dn))
            return float(np.dot(b.weights, integrand))

        out = _two_level(run, slevel)
        csum = 0.0
        for comp, ci in _curve_terms(interface, constants):
            vec = _curve_vector(
                interface, comp,
                lambda curve: np.einsum('nij,nj->ni',
                                        dist.density.value(curve.surface),
                                        curve.nu))
            csum += float(ci @ vec)
        return out + PairingValue(csum, 0.0)

    if isinstance(dist, FDist):
        shaped = SurfaceField(
            lambda b: _shape_times(b, dist.density.value(b), 2), 2, interface)

        def run(lv):
            b = interface.surface_quadrature(lv)
            f = dist._values(b)
            fn = np.einsum('nij,nj->ni', f, b.normals)
            div_f = surface_divergence(dist.density, b)
            div_shaped = surface_divergence(shaped, b)
            du_dn = np.einsum('nij,nj->ni', gfield.value(b.points), b.normals)
            hnn = np.einsum('nijk,nj,nk->ni', gfield.gradient(b.points),
                            b.normals, b.normals)
            coeff = div_f - b.kappa[:, None] * fn
            integrand = (_contract(div_shaped, gfield.u(b.points))
                         - _contract(coeff, du_dn)
                         + _contract(fn, hnn))
            return float(np.dot(b.weights, integrand))

        out = _two_level(run, slevel)
        csum = 0.0
        for comp, ci in _curve_terms(interface, constants):
            vec = _curve_vector(
                interface, comp,
                lambda curve: np.einsum(
                    'nij,nj->ni',
                    _shape_times(curve.surface, dist.density.value(curve.surface), 2),
                    curve.nu))
            csum -= float(ci @ vec)
        return out + PairingValue(csum, 0.0)

    raise StressDistError(f"unknown distribution type {type(dist)!r}")


def _check_curve_data(interface, constants):
    """A non-closed interface pairing against nonzero boundary constants
    must carry its boundary-curve data."""
    if interface.closed or interface.boundary_curves:
        return
    for i, ci in enumerate(constants):
        if i > 0 and np.linalg.norm(ci) > 0:
            raise ConfigError(
                f"interface carries no curve data for boundary component {i}")


def _curve_terms(interface, constants):
    for comp, _ in interface.boundary_curves:
        if comp < len(constants) and np.linalg.norm(constants[comp]) > 0:
            yield comp, constants[comp]


# ---------------------------------------------------------------------------
# mollification and the Cauchy flux map


def _gauss_profile(s, rho):
    core = np.exp(-0.5 * (s / rho) ** 2) / (rho * np.sqrt(2.0 * np.pi))
    return np.where(np.abs(s) <= 6.0 * rho, core, 0.0)


def _gauss_profile_dneg(s, rho):
    """-d/ds of the Gaussian profile (dipole mollifier)."""
    return _gauss_profile(s, rho) * s / rho ** 2


def _mollifier_clearance(domain, interface):
    kind = interface.kind
    if kind == 'sphere':
        a = interface.params['radius']
        if domain.kind == 'ball':
            return min(a, domain.radius - a)
        if domain.kind == 'spherical-shell':
            return min(a - domain.inner_radius, domain.outer_radius - a)
    if kind in ('plane-disk', 'plane-rect', 'equatorial-annulus'):
        z0 = interface.params.get('z', 0.0)
        lo, hi = domain.bounding_box()
        return min(hi[2] - z0, z0 - lo[2])
    if kind == 'cylinder-patch':
        a = interface.feature_size
        return min(a - domain.inner_radius, domain.outer_radius - a)
    raise StressDistError(f"no mollifier support for interface {kind!r}")


def _mollifier_breaks(domain, interface, rho):
    """Extra quadrature breaks resolving the Gaussian layer."""
    offs = np.array([-6.0, -2.0, 0.0, 2.0, 6.0]) * rho
    kind = interface.kind
    if kind == 'sphere':
        vals = interface.params['radius'] + offs
        return (vals, (), ())
    if kind in ('plane-disk', 'plane-rect', 'equatorial-annulus'):
        vals = interface.params.get('z', 0.0) + offs
        if domain.kind == 'box':
            return ((), (), vals)
        raise StressDistError(
            "plane mollification is only quadratured in box domains")
    if kind == 'cylinder-patch':
        return (interface.feature_size + offs, (), ())
    raise StressDistError(f"no mollifier support for interface {kind!r}")


def mollified_pair(dist, test, rho, domain=None, level=None):
    """Pairing with surface parts replaced by Gaussian layers of width rho.

    Bulk parts are already functions and pair exactly.  The surface part
    becomes a volume density c(project(x)) g_rho(s(x)); the dipole part
    uses the negative derivative of the profile.  Errors if the truncated
    layer (6 rho) does not fit inside the domain.
    """
    if isinstance(dist, CompositeDist):
        out = PairingValue(0.0, 0.0)
        for p in dist.parts:
            out = out + mollified_pair(p, test, rho, domain, level)
        return out

    if isinstance(dist, BDist):
        return dist.pair(test) if level is None else dist.pair(test, level=level)

    if domain is None:
        raise ConfigError("mollified surface pairings need the domain")
    interface = dist.interface
    if 6.0 * rho >= _mollifier_clearance(domain, interface):
        raise StressDistError(
            f"mollifier width {rho} too large: truncated layer leaves the domain")

    profile = _gauss_profile if isinstance(dist, CDist) else _gauss_profile_dneg
    support = _test_support(test)
    vlevel = _lv(level, support is not None)
    breaks = _mollifier_breaks(domain, interface, rho)

    def run(lv):
        q = domain.volume_quadrature(interface, lv, extra_breaks=breaks,
                                     support=support)
        s = interface.signed_distance(q.points)
        w = profile(s, rho)
        active = np.abs(s) <= 6.0 * rho
        if not np.any(active):
            return 0.0
        pts = q.points[active]
        proj = interface.project_batch(pts)
        dens = dist.density.value(proj)
        tv = np.asarray(test.value(pts))
        return float(np.dot(q.weights[active] * w[active], _contract(dens, tv)))

    return _two_level(run, vlevel)


@dataclass
class ConvergenceTable:
    """Mollification error against the exact pairing, by width."""

    rhos: list
    values: list
    errors: list
    exact: float
    order: float

    def rows(self):
        return list(zip(self.rhos, self.values, self.errors))


def mollify_convergence(dist, test, rhos, domain=None, level=None):
    exact = pair(dist, test, level)
    values, errors = [], []
    for rho in sorted(rhos, reverse=True):
        v = mollified_pair(dist, test, rho, domain, level)
        values.append(v.value)
        errors.append(abs(v.value - exact.value))
    rr = sorted(rhos, reverse=True)
    floor = 10.0 * max(exact.error, 1e-14 * max(1.0, abs(exact.value)))
    order = T.loglog_slope(rr, errors, floor=floor)
    return ConvergenceTable(rr, values, errors, exact.value, order)


@dataclass
class FluxReport:
    """Cauchy flux over a probe surface for a shrinking mollifier width."""

    rhos: list
    fluxes: list              # list of 3-vectors
    limit: Optional[np.ndarray]
    errors: list
    converged: bool
    order: float
    divergence_slope: float

    def rows(self):
        return [(r, f.tolist(), e) for r, f, e in
                zip(self.rhos, self.fluxes, self.errors)]


def cauchy_flux(dist, probe, rhos, domain=None, level=DEFAULT_SURFACE_LEVEL):
    """Mollified traction flux through a probe surface, tabulated in rho.

    Away from the singular support the flux converges to the bulk flux; a
    probe touching the support of a surface part inherits the mollifier
    peak and grows like 1/rho -- reported as non-convergent, never raised.
    Bulk values exactly on the probe use the two-sided average.
    """
    if not isinstance(dist, CompositeDist):
        dist = CompositeDist(**{dist.family.lower(): dist})
    batch = probe.surface_quadrature(level)

    limit = np.zeros(3)
    if dist.b is not None:
        f = dist.b.field
        s = (f.interface.signed_distance(batch.points)
             if f.interface is not None else np.ones(len(batch)))
        on = np.abs(s) < 1e-12
        vals = np.asarray(f.value(batch.points))
        if np.any(on):
            avg = 0.5 * (np.asarray(f.side_value(batch.points[on], 1))
                         + np.asarray(f.side_value(batch.points[on], -1)))
            vals[on] = avg
        tr = np.einsum('nij,nj->ni', vals, batch.normals)
        limit = np.einsum('n,ni->i', batch.weights, tr)

    rr = sorted(rhos, reverse=True)
    fluxes = []
    for rho in rr:
        total = limit.copy()
        for part, prof in ((dist.c, _gauss_profile), (dist.f, _gauss_profile_dneg)):
            if part is None:
                continue
            s = part.interface.signed_distance(batch.points)
            w = prof(s, rho)
            active = w != 0.0
            if not np.any(active):
                continue
            proj = part.interface.project_batch(batch.points[active])
            dens = part.density.value(proj)
            tr = np.einsum('nij,nj->ni', dens, batch.normals[active])
            total = total + np.einsum('n,ni->i',
                                      batch.weights[active] * w[active], tr)
        fluxes.append(total)

    scale = max(1.0, float(np.linalg.norm(limit)))
    errors = [float(np.linalg.norm(f - limit)) for f in fluxes]
    mags = [float(np.linalg.norm(f)) for f in fluxes]
    err_slope = T.loglog_slope(rr, errors, floor=1e-13 * scale)
    mag_slope = T.loglog_slope(rr, mags, floor=1e-13 * scale)
    tiny = errors[-1] <= 1e-8 * scale
    decreasing = errors[-1] <= errors[0] + 1e-13 * scale
    converged = tiny or (decreasing and (np.isnan(err_slope) or err_slope >= 0.9))
    return FluxReport(rhos=rr, fluxes=fluxes,
                      limit=limit if converged else None,
                      errors=errors, converged=bool(converged),
                      order=err_slope, divergence_slope=mag_slope)


def pairing_table(dist, tests, level=None):
    """Rows (test id, value, error) for CSV export of a pairing batch."""
    rows = []
    for j, t in enumerate(tests):
        v = pair(dist, t, level)
        rows.append((j, v.value, v.error))
    return rows
