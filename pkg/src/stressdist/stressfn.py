"""Stress functions: double-curl stresses, density extraction, and the
necessary/sufficient conditions for their existence.

A piecewise-smooth symmetric tensor potential generates a bulk stress
(double curl, side by side) plus surface and dipole concentrations driven
by the jumps of the potential and of its curl.  The extracted triple is
equilibrated with zero body force by construction; the converse direction
is tested through pairings with curl-free tensor test fields and through
the per-component global force and moment integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _tensor as T
from .distributions import BDist, CDist, CompositeDist, FDist, pair
from .equilibrium import EquilibriumScenario, Tolerances
from .errors import ConfigError, FieldError, StressDistError
from .fields import (PiecewiseField, PolyField, SurfaceField,
                     make_gradient_test_field, surface_divergence)
from .geometry import DEFAULT_SURFACE_LEVEL

LEMMA2_TOL = 1e-6
CURL_ASYMMETRY_TOL = 1e-6


class StressFunction:
    """Piecewise-smooth symmetric tensor potential across an interface."""

    def __init__(self, plus, minus=None, interface=None, length_scale=2.0,
                 check_symmetry=True):
        self.pw = PiecewiseField(2, plus, minus, interface, length_scale)
        self.interface = interface
        if check_symmetry:
            pts = np.array([[0.21, -0.13, 0.08], [-0.4, 0.31, -0.22],
                            [0.05, 0.17, 0.33]])
            for side in (1, -1):
                v = self.pw.side_value(pts, side)
                asym = np.max(np.abs(v - np.swapaxes(v, -1, -2)))
                if asym > 1e-12 * max(1.0, np.max(np.abs(v))):
                    raise FieldError("stress function must be symmetric")

    @classmethod
    def smooth(cls, potential, length_scale=2.0):
        return cls(potential, None, None, length_scale)

    def jump(self, batch):
        return self.pw.jump(batch)

    def jump_gradient(self, pts):
        return (self.pw.side_gradient(pts, 1)
                - self.pw.side_gradient(pts, -1))

    def curl_jump(self, batch):
        pts = batch.points
        return self._curl_side(pts, 1) - self._curl_side(pts, -1)

    def _side(self, side):
        return self.pw.plus if side > 0 else self.pw.minus

    def _curl_side(self, pts, side):
        f = self._side(side)
        if isinstance(f, PolyField):
            return f.curl_rows_field().value(pts)
        grad = self.pw.side_gradient(pts, side)
        return T.tensor_curl_rows_from_gradient(grad)

    def inc_side_field(self, side):
        """Double-curl stress of one side as an evaluable smooth field."""
        f = self._side(side)
        if isinstance(f, PolyField):
            return f.inc_field()
        return _FdIncField(f, self.pw.fd_step)

    def inc_value(self, pts, side=None):
        pts = np.asarray(pts, dtype=float)
        if side is not None:
            return self.inc_side_field(side).value(pts)
        if self.interface is None:
            return self.inc_side_field(1).value(pts)
        s = self.interface.side(pts)
        out = np.empty((len(pts), 3, 3))
        for sd in (1, -1):
            m = s >= 0 if sd > 0 else s < 0
            if np.any(m):
                out[m] = self.inc_side_field(sd).value(pts[m])
        return out


class _FdIncField:
    """Finite-difference double curl of a generic smooth tensor field."""

    rank = 2

    def __init__(self, base, h):
        self.base = base
        self.h = h

    def _curl(self, pts):
        if hasattr(self.base, 'gradient'):
            grad = np.asarray(self.base.gradient(pts))
        else:
            grad = T.fd_gradient(self.base.value, pts, self.h, (3, 3))
        return T.tensor_curl_rows_from_gradient(grad)

    def value(self, pts):
        def ct(p):
            return np.swapaxes(self._curl(p), -1, -2)

        grad = T.fd_gradient(ct, pts, 10.0 * self.h, (3, 3))
        return T.tensor_curl_rows_from_gradient(grad)

    def gradient(self, pts):
        return T.fd_gradient(self.value, pts, 20.0 * self.h, (3, 3))

    def divergence(self, pts):
        return np.einsum('nijj->ni', self.gradient(pts))


def curl_curl(potential, points, asymmetry_tol=CURL_ASYMMETRY_TOL):
    """Double-curl stress at points off the interface, symmetrized.

    The raw result must already be symmetric for a symmetric potential; an
    asymmetry beyond tolerance signals a convention violation and raises.
    """
    if isinstance(potential, PolyField):
        raw = potential.inc_field().value(points)
    elif isinstance(potential, StressFunction):
        raw = potential.inc_value(points)
    else:
        raw = _FdIncField(potential, 1e-4).value(points)
    asym = np.max(np.abs(raw - np.swapaxes(raw, -1, -2)))
    scale = max(1.0, float(np.max(np.abs(raw))))
    if asym > asymmetry_tol * scale:
        raise StressDistError(
            f"double curl asymmetry {asym:.3e} exceeds tolerance: "
            "check the potential's symmetry")
    return T.sym(raw)


def surface_curl(a, batch):
    """Surface curl of a rank-2 surface field.

    Defined row by row through the relation: row_i equals the surface
    divergence of the field (a x e_i), rows crossed on the right.
    """
    rows = []
    for i in range(3):
        d = np.zeros(3)
        d[i] = 1.0
        dchart = None
        if getattr(a, 'dchart', None) is not None:
            def dchart(b, axis, dd=d):
                return T.row_cross(a.dchart(b, axis), dd)
        crossed = SurfaceField(
            lambda b, dd=d: T.row_cross(a.value(b), dd), 2, a.interface,
            dchart=dchart)
        rows.append(surface_divergence(crossed, batch))
    return np.stack(rows, axis=1)


@dataclass
class DensityTriple:
    """Bulk stress plus the two interfacial densities of a stress function."""

    sigma: PiecewiseField
    sigma1: SurfaceField
    sigma2: SurfaceField
    interface: object

    def scenario(self, domain, name="stress-function", tolerances=None):
        return EquilibriumScenario(
            domain=domain, interface=self.interface, sigma=self.sigma,
            sigma1=self.sigma1, sigma2=self.sigma2,
            tolerances=tolerances or Tolerances(), name=name)

    def composite(self, domain):
        return CompositeDist(b=BDist(domain, self.interface, self.sigma),
                             c=CDist(self.interface, self.sigma1),
                             f=FDist(self.interface, self.sigma2))


def extract_densities(potential, interface):
    """Bulk, surface, and dipole stress densities of a piecewise potential.

    With the jump taken toward-side minus away-side and N the cross matrix
    of the normal:

    * sigma2 = -N^T [phi] N (tangential, automatically killing the normal);
    * sigma1 = -([curl phi])^T x n - (curl_S((phi jump x n)^T))^T + kappa sigma2;
    * sigma  = double curl of the side potentials off the interface.
    """
    if not isinstance(potential, StressFunction):
        raise FieldError("extract_densities needs a StressFunction")
    pw = potential.pw
    sigma = PiecewiseField(2, potential.inc_side_field(1),
                           potential.inc_side_field(-1), interface,
                           length_scale=2.0 * max(interface.feature_size, 1.0))

    analytic = all(hasattr(potential._side(s), 'gradient') for s in (1, -1))

    def _chart_pieces(batch, axis):
        xu, xv = batch.patch.tangents(batch.U, batch.V)
        t = xu if axis == 0 else xv
        dj = np.einsum('nijk,nk->nij', potential.jump_gradient(batch.points), t)
        dn = np.einsum('nij,nj->ni', batch.shape_ops, t)
        return dj, dn

    def sigma2_ev(batch):
        N = T.cross_matrix(batch.normals)
        j = potential.jump(batch)
        return -np.einsum('nla,nlm,nmd->nad', N, j, N)

    sigma2_dchart = None
    jump_cross_dchart = None
    if analytic:
        def sigma2_dchart(batch, axis):
            N = T.cross_matrix(batch.normals)
            j = potential.jump(batch)
            dj, dn = _chart_pieces(batch, axis)
            dN = T.cross_matrix(dn)
            return -(np.einsum('nla,nlm,nmd->nad', dN, j, N)
                     + np.einsum('nla,nlm,nmd->nad', N, dj, N)
                     + np.einsum('nla,nlm,nmd->nad', N, j, dN))

        def jump_cross_dchart(batch, axis):
            dj, dn = _chart_pieces(batch, axis)
            return np.swapaxes(
                T.row_cross(dj, batch.normals)
                + T.row_cross(potential.jump(batch), dn), -1, -2)

    sigma2 = SurfaceField(sigma2_ev, 2, interface, dchart=sigma2_dchart)

    jump_cross = SurfaceField(
        lambda b: np.swapaxes(T.row_cross(potential.jump(b), b.normals), -1, -2),
        2, interface, dchart=jump_cross_dchart)

    def sigma1_ev(batch):
        jc = potential.curl_jump(batch)
        term_a = -T.row_cross(np.swapaxes(jc, -1, -2), batch.normals)
        term_c = -np.swapaxes(surface_curl(jump_cross, batch), -1, -2)
        term_b = batch.kappa[:, None, None] * sigma2_ev(batch)
        return T.sym(term_a + term_b + term_c)

    sigma1 = SurfaceField(sigma1_ev, 2, interface)
    return DensityTriple(sigma=sigma, sigma1=sigma1, sigma2=sigma2,
                         interface=interface)


# ---------------------------------------------------------------------------
# necessary conditions: pairings with curl-free tests, global conditions


class MomentTest:
    """x-weighted pairing partner implementing the moment distribution.

    value[j,q] = eps_ipq x_p psi_ij; its normal derivative automatically
    produces the dipole correction term.
    """

    rank = 2

    def __init__(self, base):
        self.base = base

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.einsum('ipq,np,nij->njq', T.EPS, pts, self.base.value(pts))

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        v = self.base.value(pts)
        g = self.base.gradient(pts)
        out = np.einsum('ikq,nij->njqk', T.EPS, v)
        out += np.einsum('ipq,np,nijk->njqk', T.EPS, pts, g)
        return out


def moment_pair(dist, test, level=None):
    """Pairing of the x-cross-stress distribution with a tensor test."""
    return pair(dist, MomentTest(test), level)


@dataclass
class Lemma2Report:
    entries: list                    # (label, value, error, tol)
    tol: float

    @property
    def passed(self):
        return all(abs(v) <= t for _, v, _, t in self.entries)

    def failing(self):
        return [lab for lab, v, _, t in self.entries if abs(v) > t]

    def to_dict(self):
        return {"conditions": [{"id": lab, "residual": v, "estimate": e,
                                "tolerance": t, "pass": bool(abs(v) <= t)}
                               for lab, v, e, t in self.entries],
                "pass": bool(self.passed)}


def default_lemma2_suite(domain, rng=None):
    """Gradient test fields probing the existence obstructions.

    Single-component domains get interior gradient-of-bump members (the
    classical divergence-free case); multi-component domains get the
    2(k-1) boundary-constant force/moment members.
    """
    rng = rng or np.random.default_rng(0)
    suite = []
    if domain.k == 1:
        zeros = [np.zeros(3)]
        lo, hi = domain.bounding_box()
        if domain.kind == 'ball':
            center = np.zeros(3)
            radius = 0.55 * domain.radius
        else:
            center = 0.5 * (lo + hi)
            radius = 0.2 * float(np.min(hi - lo))
        for d in range(3):
            e = np.zeros(3)
            e[d] = 1.0
            suite.append(("interior-e%d" % d,
                          make_gradient_test_field(domain, zeros, rng=rng,
                                                   center=center, radius=radius,
                                                   direction=e)))
        return suite
    for i in range(1, domain.k):
        for d in range(3):
            e = np.zeros(3)
            e[d] = 1.0
            constants = [np.zeros(3) for _ in range(domain.k)]
            constants[i] = e
            suite.append((f"component{i}-e{d}",
                          make_gradient_test_field(domain, constants)))
    return suite


def check_lemma2_conditions(dist, domain, suite=None, level=2,
                            tol=LEMMA2_TOL, rng=None):
    """Pairings of the stress and its x-cross companion with curl-free tests.

    All pairings vanish (to tolerance) exactly when a stress function
    exists; a nonzero value against a boundary-constant member exposes the
    per-component force or moment obstruction.
    """
    if suite is None:
        suite = default_lemma2_suite(domain, rng)
    entries = []
    for label, g in suite:
        probe = domain.interior_samples(32, None, 0.0)
        if g.curl_residual(probe) > 1e-9:
            raise FieldError(f"suite member {label} is not curl-free")
        v = pair(dist, g, level)
        entries.append((f"force:{label}", v.value, v.error,
                        max(tol, 10.0 * v.error)))
        m = moment_pair(dist, g, level)
        entries.append((f"moment:{label}", m.value, m.error,
                        max(tol, 10.0 * m.error)))
    return Lemma2Report(entries=entries, tol=tol)


@dataclass
class GlobalConditionsReport:
    components: list     # dicts with force / moment arrays and pass flags
    tol: float

    @property
    def passed(self):
        return all(c["pass"] for c in self.components if c["component"] >= 1)

    def to_dict(self):
        out = []
        for c in self.components:
            d = dict(c)
            d["force"] = list(map(float, d["force"]))
            d["moment"] = list(map(float, d["moment"]))
            out.append(d)
        return {"components": out, "pass": bool(self.passed)}


def _curve_integrals(interface, component, sigma1, sigma2, origin, n=None):
    force = np.zeros(3)
    moment = np.zeros(3)
    curves = [b for c, b in interface.boundary_curves if c == component]
    for builder in curves:
        curve = builder(64 if n is None else n)
        if sigma1 is not None:
            v = np.einsum('nij,nj->ni', sigma1.value(curve.surface), curve.nu)
            force += np.einsum('n,ni->i', curve.weights, v)
            moment += np.einsum('n,ni->i', curve.weights,
                                np.cross(curve.points - origin, v))
        if sigma2 is not None:
            sh = np.einsum('nij,njk->nik', sigma2.value(curve.surface),
                           curve.surface.shape_ops)
            v = np.einsum('nij,nj->ni', sh, curve.nu)
            force -= np.einsum('n,ni->i', curve.weights, v)
            moment -= np.einsum('n,ni->i', curve.weights,
                                np.cross(curve.points - origin, v))
    return force, moment


def global_conditions(triple_or_sigma, domain, interface=None,
                      level=DEFAULT_SURFACE_LEVEL, tol=LEMMA2_TOL,
                      origin=(0.0, 0.0, 0.0)):
    """Net force and moment per boundary component, including curve terms.

    Both must vanish on every component i >= 1 for a stress function to
    exist; component 0 is reported for reference only.
    """
    origin = np.asarray(origin, dtype=float)
    if isinstance(triple_or_sigma, DensityTriple):
        sigma = triple_or_sigma.sigma
        sigma1 = triple_or_sigma.sigma1
        sigma2 = triple_or_sigma.sigma2
        interface = triple_or_sigma.interface
    else:
        sigma = triple_or_sigma
        sigma1 = sigma2 = None
    if interface is not None and not interface.closed:
        for comp in interface.curve_components():
            if comp >= domain.k:
                raise ConfigError(
                    f"interface touches unknown boundary component {comp}")

    components = []
    for i in range(domain.k):
        force = np.zeros(3)
        moment = np.zeros(3)
        for batch in domain.boundary_components[i].quadrature(level):
            vals = np.asarray(sigma.value(batch.points))
            tr = np.einsum('nij,nj->ni', vals, batch.normals)
            force += np.einsum('n,ni->i', batch.weights, tr)
            moment += np.einsum('n,ni->i', batch.weights,
                                np.cross(batch.points - origin, tr))
        if interface is not None and not interface.closed:
            fc, mc = _curve_integrals(interface, i, sigma1, sigma2, origin)
            force += fc
            moment += mc
        ok = bool(np.linalg.norm(force) <= tol and np.linalg.norm(moment) <= tol)
        components.append({"component": i, "force": force, "moment": moment,
                           "pass": ok})
    return GlobalConditionsReport(components=components, tol=tol)


# ---------------------------------------------------------------------------
# algebraic identities behind the existence proof


def trace_curl_check(potentials, points):
    """max |tr(curl phi)| over a suite of symmetric potentials (zero in exact
    arithmetic)."""
    worst = 0.0
    for phi in potentials:
        if isinstance(phi, PolyField):
            c = phi.curl_rows_field().value(points)
        else:
            grad = T.fd_gradient(phi.value, points, 1e-5, (3, 3))
            c = T.tensor_curl_rows_from_gradient(grad)
        worst = max(worst, float(np.max(np.abs(np.einsum('nii->n', c)))))
    return worst


def _x_cross_cols_polyfield(K):
    """x cross (columns of K^T) as an exact polynomial field."""
    comp = np.empty((3, 3), dtype=object)
    from .fields import Poly3
    for i in range(3):
        for j in range(3):
            acc = Poly3.constant(0.0)
            for k in range(3):
                for l in range(3):
                    e = T.EPS[i, k, l]
                    if e != 0.0:
                        acc = acc + K.components[j, l].times_coordinate(k).scaled(e)
            comp[i, j] = acc
    return PolyField(comp, rank=2)


def lemma2_algebraic_identity(K_fields, points):
    """Max residual of: curl(x cross_cols K^T) - x cross_cols curl(K^T)
    - tr(K) I + K, evaluated pointwise (zero for smooth K)."""
    points = np.asarray(points, dtype=float)
    worst = 0.0
    for K in K_fields:
        if isinstance(K, PolyField):
            lhs = _x_cross_cols_polyfield(K).curl_rows_field().value(points)
            sig = K.transpose().curl_rows_field().value(points)
            Kv = K.value(points)
        else:
            Kv = np.asarray(K.value(points))

            def xkt(p):
                kv = np.asarray(K.value(p))
                return T.col_cross(p, np.swapaxes(kv, -1, -2))

            lhs = T.tensor_curl_rows_from_gradient(
                T.fd_gradient(xkt, points, 1e-5, (3, 3)))
            sig = T.tensor_curl_rows_from_gradient(
                np.swapaxes(T.fd_gradient(K.value, points, 1e-5, (3, 3)),
                            1, 2))
        xs = T.col_cross(points, sig)
        trK = np.einsum('nii->n', Kv)
        rhs = xs + trK[:, None, None] * T.I3 - Kv
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
