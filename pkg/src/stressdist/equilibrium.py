"""Local equilibrium residuals, weak/local equivalence, and the dipole limit.

The local interface conditions verified here (with kappa = tr(grad_S n) and
the jump taken toward-side minus away-side):

* bulk:      div sigma + b = 0 off the interface;
* interface: [sigma] n + div_S sigma1 - kappa sigma1 n
             - div_S(sigma2 grad_S n) + b1 = 0;
* dipole:    -sigma1 n + div_S sigma2 + b2 = 0;
* closure:   sigma2 n = 0.

The weak residual of the same scenario is Div Sigma(psi) + B(psi) evaluated
through the pairings; scenarios passing all four local conditions must pair
to zero within quadrature tolerance for every test function.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Optional

import numpy as np

from . import _tensor as T
from .distributions import (CompositeDist, PairingValue, distributional_div,
                            pair)
from .errors import FieldError, GeometryError
from .fields import (BumpSymTensor, ModulatedTest, Poly3,
                     SquaredDistanceFactor, SurfaceField, make_bump,
                     surface_divergence, surface_gradient)
from .geometry import plane_disk_interface

LOCAL_TOL_ANALYTIC = 1e-6
LOCAL_TOL_FD = 1e-4
WEAK_FACTOR = 10.0


@dataclass
class Tolerances:
    local: float = LOCAL_TOL_ANALYTIC
    weak_factor: float = WEAK_FACTOR
    weak_floor: float = 1e-12
    symmetry: float = 1e-12


@dataclass
class DilatationalData:
    """Scalar pressure description: sigma = p I, sigma_i = p_i (I - n@n)."""

    p: object                      # piecewise scalar field
    p1: object                     # scalar surface field (or constant)
    p2: object = 0.0


@dataclass
class EquilibriumScenario:
    domain: object
    interface: object
    sigma: Optional[object] = None          # piecewise rank-2 field
    sigma1: Optional[SurfaceField] = None
    sigma2: Optional[SurfaceField] = None
    b: Optional[object] = None              # piecewise rank-1 field
    b1: Optional[SurfaceField] = None
    b2: Optional[SurfaceField] = None
    dilatational: Optional[DilatationalData] = None
    tolerances: Tolerances = dfield(default_factory=Tolerances)
    name: str = "scenario"

    def stress_dist(self):
        from .distributions import BDist, CDist, FDist
        b = BDist(self.domain, self.interface, self.sigma) if self.sigma else None
        c = CDist(self.interface, self.sigma1) if self.sigma1 else None
        f = FDist(self.interface, self.sigma2) if self.sigma2 else None
        if not any((b, c, f)):
            return None
        return CompositeDist(b=b, c=c, f=f)

    def force_dist(self):
        from .distributions import BDist, CDist, FDist
        b = BDist(self.domain, self.interface, self.b) if self.b else None
        c = CDist(self.interface, self.b1) if self.b1 else None
        f = FDist(self.interface, self.b2) if self.b2 else None
        if not any((b, c, f)):
            return None
        return CompositeDist(b=b, c=c, f=f)

    def check_symmetry(self, n=64):
        """Tensor densities must be symmetric (sampled check)."""
        tol = self.tolerances.symmetry
        if self.sigma is not None:
            pts = self.domain.interior_samples(n, self.interface, 1e-3)
            v = self.sigma.value(pts)
            if np.max(np.abs(v - np.swapaxes(v, -1, -2))) > tol * max(1, np.max(np.abs(v))):
                raise FieldError("bulk stress density is not symmetric")
        batch = self.interface.samples(n) if self.interface is not None else None
        for f in (self.sigma1, self.sigma2):
            if f is None or batch is None:
                continue
            v = f.value(batch)
            if np.max(np.abs(v - np.swapaxes(v, -1, -2))) > tol * max(1, np.max(np.abs(v))):
                raise FieldError("surface stress density is not symmetric")


@dataclass
class ConditionResult:
    cond: str
    residual: float
    tolerance: float

    @property
    def passed(self):
        return self.residual <= self.tolerance

    def to_dict(self):
        return {"id": self.cond, "residual": self.residual,
                "tolerance": self.tolerance, "pass": bool(self.passed)}


@dataclass
class ResidualReport:
    conditions: list
    weak: list = dfield(default_factory=list)       # (label, value, tol)
    notes: dict = dfield(default_factory=dict)

    @property
    def passed(self):
        ok = all(c.passed for c in self.conditions)
        ok = ok and all(abs(v) <= t for _, v, t in self.weak)
        return ok

    def failing(self):
        out = [c.cond for c in self.conditions if not c.passed]
        out += [lab for lab, v, t in self.weak if abs(v) > t]
        return out

    def to_dict(self):
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "weak": [{"id": lab, "residual": v, "tolerance": t,
                      "pass": bool(abs(v) <= t)} for lab, v, t in self.weak],
            "pass": bool(self.passed),
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# local residuals


def bulk_residual(scenario, points=None, n=2000, guard=None):
    """max |div sigma + b| over interior samples kept away from the interface."""
    dom, itf = scenario.domain, scenario.interface
    if guard is None:
        step = scenario.sigma.fd_step if scenario.sigma is not None else 1e-4
        guard = 6.0 * step
    resampled = 0
    if points is None:
        points = dom.interior_samples(n, itf, min_dist=guard)
    else:
        if itf is not None:
            keep = np.abs(itf.signed_distance(points)) > guard
            resampled = int(np.count_nonzero(~keep))
            points = points[keep]
    total = np.zeros((len(points), 3))
    if scenario.sigma is not None:
        total += scenario.sigma.divergence(points)
    if scenario.b is not None:
        total += scenario.b.value(points)
    r = float(np.max(np.linalg.norm(total, axis=-1))) if len(points) else 0.0
    return r, resampled


def _shape_density_field(sigma2, interface):
    """sigma2 grad_S n as a surface field (row-wise divergence target)."""

    def ev(batch):
        return np.einsum('nij,njk->nik', sigma2.value(batch), batch.shape_ops)

    return SurfaceField(ev, rank=2, interface=interface)


def interface_residuals(scenario, batch=None, n=2000):
    """Max norms of the three interface conditions over surface samples."""
    itf = scenario.interface
    if batch is None:
        batch = itf.samples(n)
    m = len(batch)
    r_b = np.zeros((m, 3))
    r_c = np.zeros((m, 3))
    r_d = np.zeros((m, 3))
    normals = batch.normals
    kappa = batch.kappa
    if scenario.sigma is not None:
        r_b += np.einsum('nij,nj->ni', scenario.sigma.jump(batch), normals)
    if scenario.sigma1 is not None:
        s1 = scenario.sigma1.value(batch)
        s1n = np.einsum('nij,nj->ni', s1, normals)
        r_b += surface_divergence(scenario.sigma1, batch)
        r_b -= kappa[:, None] * s1n
        r_c -= s1n
    if scenario.sigma2 is not None:
        s2 = scenario.sigma2.value(batch)
        r_b -= surface_divergence(_shape_density_field(scenario.sigma2, itf), batch)
        r_c += surface_divergence(scenario.sigma2, batch)
        r_d += np.einsum('nij,nj->ni', s2, normals)
    if scenario.b1 is not None:
        r_b += scenario.b1.value(batch)
    if scenario.b2 is not None:
        r_c += scenario.b2.value(batch)
    norms = [float(np.max(np.linalg.norm(r, axis=-1))) for r in (r_b, r_c, r_d)]
    return tuple(norms)


def local_report(scenario, n_bulk=2000, n_surface=2000):
    tol = scenario.tolerances.local
    rb, rc, rd = interface_residuals(scenario, n=n_surface)
    bulk, resampled = bulk_residual(scenario, n=n_bulk)
    conds = [
        ConditionResult("12a", bulk, tol),
        ConditionResult("12b", rb, tol),
        ConditionResult("12c", rc, tol),
        ConditionResult("12d", rd, tol),
    ]
    return ResidualReport(conditions=conds,
                          notes={"bulk_points_resampled": resampled})


def dilatational_residuals(scenario, batch=None, n=2000, n_bulk=1000):
    """Residuals of the pressure form plus its normal/tangential projections.

    Requires the scenario to carry DilatationalData (sigma = p I,
    sigma_i = p_i (I - n@n)); other inputs are rejected.
    """
    if scenario.dilatational is None:
        raise FieldError("scenario does not declare dilatational structure")
    dil = scenario.dilatational
    itf = scenario.interface
    if batch is None:
        batch = itf.samples(n)
    normals = batch.normals
    kappa = batch.kappa
    P = T.I3 - np.einsum('ni,nj->nij', normals, normals)

    def scalar_surface(fn):
        if isinstance(fn, SurfaceField):
            return fn
        if callable(fn):
            return SurfaceField.from_world(fn, 0, itf)
        return SurfaceField(lambda b: np.full(len(b), float(fn)), 0, itf)

    p1 = scalar_surface(dil.p1)
    p2 = scalar_surface(dil.p2)
    p1v = p1.value(batch)
    p2v = p2.value(batch)
    grad_p1 = surface_gradient(p1, batch)
    grad_p2 = surface_gradient(p2, batch)
    shape_field = SurfaceField(lambda b: b.shape_ops, 2, itf)
    div_shape = surface_divergence(shape_field, batch)

    jump_p = dil.p.jump(batch)
    r_b = (jump_p[:, None] * normals + grad_p1
           - kappa[:, None] * p1v[:, None] * normals
           - p2v[:, None] * div_shape
           - np.einsum('nij,nj->ni', batch.shape_ops, grad_p2))
    if scenario.b1 is not None:
        r_b = r_b + scenario.b1.value(batch)
    r_c = grad_p2 - kappa[:, None] * p2v[:, None] * normals
    if scenario.b2 is not None:
        r_c = r_c + scenario.b2.value(batch)

    def split(r):
        rn = np.einsum('ni,ni->n', r, normals)
        rt = np.einsum('nij,nj->ni', P, r)
        return (float(np.max(np.abs(rn))),
                float(np.max(np.linalg.norm(rt, axis=-1))))

    bn, bt = split(r_b)
    cn, ct = split(r_c)
    bulk_pts = scenario.domain.interior_samples(n_bulk, itf, min_dist=6e-4 * scenario.domain.length_scale)
    grad_p = dil.p.gradient(bulk_pts)
    ra = grad_p.copy()
    if scenario.b is not None:
        ra = ra + scenario.b.value(bulk_pts)
    tol = scenario.tolerances.local
    conds = [
        ConditionResult("12a", float(np.max(np.linalg.norm(ra, axis=-1))), tol),
        ConditionResult("12b", float(np.max(np.linalg.norm(r_b, axis=-1))), tol),
        ConditionResult("12b-normal", bn, tol),
        ConditionResult("12b-tangential", bt, tol),
        ConditionResult("12c", float(np.max(np.linalg.norm(r_c, axis=-1))), tol),
        ConditionResult("12c-normal", cn, tol),
        ConditionResult("12c-tangential", ct, tol),
        ConditionResult("12d", 0.0, tol),
    ]
    return ResidualReport(conditions=conds)


# ---------------------------------------------------------------------------
# test suites for the weak form


def _crossing_bump_geometry(domain, interface, rng):
    """(center, radius) for a support that straddles the interface."""
    kind = interface.kind
    if kind == 'sphere':
        a = interface.params['radius']
        if domain.kind == 'ball':
            room = min(a, domain.radius - a)
        else:
            room = min(a - domain.inner_radius, domain.outer_radius - a)
        r = 0.42 * room
        d = _unit(rng)
        center = d * (a + rng.uniform(-0.4, 0.4) * r)
        return center, r
    if kind in ('plane-disk', 'plane-rect'):
        z0 = interface.params.get('z', 0.0)
        lo, hi = domain.bounding_box()
        room = min(hi[2] - z0, z0 - lo[2])
        r = 0.35 * room
        x = _xy_interior(domain, rng, margin=1.3 * r)
        center = np.array([x[0], x[1], z0 + rng.uniform(-0.4, 0.4) * r])
        return center, r
    if kind == 'equatorial-annulus':
        r0, r1 = domain.inner_radius, domain.outer_radius
        r = 0.3 * (r1 - r0) / 2
        rho = rng.uniform(r0 + 1.6 * r, r1 - 1.6 * r)
        phi = rng.uniform(0, 2 * np.pi)
        center = np.array([rho * np.cos(phi), rho * np.sin(phi),
                           rng.uniform(-0.4, 0.4) * r])
        return center, r
    if kind == 'cylinder-patch':
        a = interface.feature_size
        room = min(a - domain.inner_radius, domain.outer_radius - a)
        z0, z1 = domain.z_range
        r = min(0.42 * room, 0.3 * (z1 - z0))
        phi = rng.uniform(0, 2 * np.pi)
        rho = a + rng.uniform(-0.4, 0.4) * r
        z = rng.uniform(z0 + 1.5 * r, z1 - 1.5 * r)
        center = np.array([rho * np.cos(phi), rho * np.sin(phi), z])
        return center, r
    raise GeometryError(f"no bump placement rule for interface {kind!r}")


def _offset_bump_geometry(domain, interface, rng):
    """(center, radius) for a support disjoint from the interface."""
    center, r = _crossing_bump_geometry(domain, interface, rng)
    s = float(interface.signed_distance(center.reshape(1, 3))[0])
    shift = (1.6 * r - s) if s >= 0 else -(1.6 * r + s)
    # move along the distance gradient to clear the surface
    eps = 1e-6
    g = np.zeros(3)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = eps
        g[ax] = (interface.signed_distance((center + e).reshape(1, 3))[0]
                 - interface.signed_distance((center - e).reshape(1, 3))[0]) / (2 * eps)
    g /= max(np.linalg.norm(g), 1e-12)
    new_center = center + shift * g
    new_r = 0.45 * r
    if not domain.contains_ball(new_center, new_r):
        new_center = center - (shift + 0.5 * r) * g
    if not domain.contains_ball(new_center, new_r):
        new_center, new_r = center, r   # fall back to a crossing support
    return new_center, new_r


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _xy_interior(domain, rng, margin):
    lo, hi = domain.bounding_box()
    for _ in range(100):
        x = rng.uniform(lo[0] + margin, hi[0] - margin)
        y = rng.uniform(lo[1] + margin, hi[1] - margin)
        if domain.contains_ball(np.array([x, y, 0.0]), 0.9 * margin):
            return x, y
    return 0.0, 0.0


def make_test_suite(domain, interface, n, rng, rank=1, degree=2):
    """Stratified suite: off-interface, crossing, and dipole-sensitive tests."""
    suite = []
    strata = []
    for j in range(n):
        strata.append(j % 3 if interface is not None else 0)
    for stratum in strata:
        if interface is None:
            lo, hi = domain.bounding_box()
            r = 0.15 * float(np.min(hi - lo))
            for _ in range(200):
                center = rng.uniform(lo, hi)
                if domain.contains_ball(center, r):
                    break
                r *= 0.95
            c, rr = center, r
        elif stratum == 0:
            c, rr = _offset_bump_geometry(domain, interface, rng)
        else:
            c, rr = _crossing_bump_geometry(domain, interface, rng)
        t = make_bump(domain, c, rr, rank=rank, rng=rng, degree=degree)
        if stratum == 2:
            t = ModulatedTest(t, SquaredDistanceFactor(interface))
        suite.append(t)
    return suite


def weak_residuals(scenario, tests, level=None):
    """Div Sigma(psi) + B(psi) for each test, with tolerance from the estimates."""
    sig = scenario.stress_dist()
    frc = scenario.force_dist()
    out = []
    for j, t in enumerate(tests):
        total = PairingValue(0.0, 0.0)
        scale = 0.0
        if sig is not None:
            dv = distributional_div(sig, t, level)
            total = total + dv
            scale += abs(dv.value)
        if frc is not None:
            bv = pair(frc, t, level)
            total = total + bv
            scale += abs(bv.value)
        tol = max(scenario.tolerances.weak_factor * total.error,
                  scenario.tolerances.weak_floor * max(1.0, scale))
        out.append((f"weak-{j}", total.value, tol))
    return out


@dataclass
class EquivalenceReport:
    local: ResidualReport
    weak: list
    consistent: bool
    pairing_factor: float

    @property
    def passed(self):
        return self.consistent

    def to_dict(self):
        return {"local": self.local.to_dict(),
                "weak": [{"id": lab, "residual": v, "tolerance": t,
                          "pass": bool(abs(v) <= t)} for lab, v, t in self.weak],
                "consistent": bool(self.consistent),
                "pairing_factor": self.pairing_factor}


def weak_equals_local(scenario, n_suite=12, seed=0, level=None, tests=None):
    """Correlate weak residuals with the local conditions.

    Both small, or both failing with the weak residual bounded by the local
    one times a pairing norm; anything else is flagged inconsistent.
    """
    rng = np.random.default_rng(seed)
    if tests is None:
        tests = make_test_suite(scenario.domain, scenario.interface, n_suite, rng)
    local = local_report(scenario)
    weak = weak_residuals(scenario, tests, level)
    local_pass = all(c.passed for c in local.conditions)
    weak_pass = all(abs(v) <= t for _, v, t in weak)
    factor = 0.0
    if local_pass:
        consistent = weak_pass
    else:
        max_local = max(c.residual for c in local.conditions)
        factor = _pairing_factor(scenario, tests)
        max_weak = max(abs(v) for _, v, t in weak)
        consistent = (not weak_pass or max_weak <= scenario.tolerances.local * factor) \
            and max_weak <= 2.0 * max_local * factor
    return EquivalenceReport(local=local, weak=weak, consistent=bool(consistent),
                             pairing_factor=factor)


def _pairing_factor(scenario, tests):
    """Crude bound: sup over tests of the L1 mass seen by the pairings."""
    from .geometry import integrate_surface, integrate_volume
    worst = 0.0
    for t in tests:
        total = 0.0
        if scenario.interface is not None:
            total += integrate_surface(
                scenario.interface,
                lambda b: np.linalg.norm(
                    t.value(b.points).reshape(len(b), -1), axis=1)
                + np.linalg.norm(t.gradient(b.points).reshape(len(b), -1), axis=1),
                level=1).value
        total += integrate_volume(
            scenario.domain, scenario.interface,
            lambda p: np.linalg.norm(t.value(p).reshape(len(p), -1), axis=1)
            + np.linalg.norm(t.gradient(p).reshape(len(p), -1), axis=1),
            level=1).value
        worst = max(worst, total)
    return worst


# ---------------------------------------------------------------------------
# stress-dipole limit


@dataclass
class DipoleLimitReport:
    h_values: list
    errors: list              # per test: list of |Sigma_h - Sigma_2|
    orders: list
    fraction_first_order: float

    def rows(self):
        out = []
        for j, errs in enumerate(self.errors):
            for h, e in zip(self.h_values, errs):
                out.append((j, h, e))
        return out


def dipole_limit(domain, sigma0, h_values, tests=None, z0=0.0, n_tests=10,
                 seed=0, level=None, min_order=0.9):
    """Difference quotient of two opposite surface concentrations vs. the
    dipole pairing, tabulated over the separation h.

    sigma0 is a constant symmetric tensor; the carrier planes sit at z0 and
    z0+h inside the domain.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    if np.max(np.abs(sigma0 - sigma0.T)) > 1e-12:
        raise FieldError("dipole strength must be symmetric")
    h_values = sorted(float(h) for h in h_values)
    lo, hi = domain.bounding_box()
    if z0 + max(h_values) >= hi[2] or z0 <= lo[2]:
        raise GeometryError("separation exceeds the domain clearance")

    base = plane_disk_interface(domain, z=z0)
    rng = np.random.default_rng(seed)
    if tests is None:
        tests = []
        for _ in range(n_tests):
            c, r = _crossing_bump_geometry(domain, base, rng)
            c = c.copy()
            c[2] = z0 + abs(c[2] - z0) * 0.2   # keep support over both planes
            r = min(r, 0.45 * (hi[2] - z0 - max(h_values)))
            polys = [Poly3.random(rng, 2) for _ in range(6)]
            tests.append(BumpSymTensor(c, r, polys))

    def plane_int(z, fn, support):
        itf = plane_disk_interface(domain, z=z)
        b = itf.surface_quadrature(2 if level is None else level,
                                   support=support)
        if len(b) == 0:
            return 0.0
        return float(np.dot(b.weights, fn(b)))

    errors = [[] for _ in tests]
    exact = []
    for t in tests:
        sup = (t.center, t.radius)
        e2 = plane_int(z0, lambda b: np.einsum(
            'ij,nij->n', sigma0,
            np.einsum('nijk,nk->nij', t.gradient(b.points), b.normals)), sup)
        exact.append(e2)
    for h in sorted(h_values, reverse=True):
        for j, t in enumerate(tests):
            sup = (t.center, t.radius)
            low = plane_int(z0, lambda b: np.einsum('ij,nij->n', sigma0,
                                                    t.value(b.points)), sup)
            highv = plane_int(z0 + h, lambda b: np.einsum('ij,nij->n', sigma0,
                                                          t.value(b.points)), sup)
            sh = (highv - low) / h
            errors[j].append(abs(sh - exact[j]))
    hs = sorted(h_values, reverse=True)
    orders = []
    for j, errs in enumerate(errors):
        scale = max(1.0, abs(exact[j]))
        orders.append(T.loglog_slope(hs, errs, floor=1e-12 * scale))
    good = [o for o in orders if not np.isnan(o)]
    frac = (sum(1 for o in good if o >= min_order) / len(orders)) if orders else 0.0
    return DipoleLimitReport(h_values=hs, errors=errors, orders=orders,
                             fraction_first_order=frac)
