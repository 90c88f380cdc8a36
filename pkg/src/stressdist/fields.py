"""Piecewise bulk fields, surface fields, and smooth compactly supported tests.

Test functions are radial bumps times polynomial factors with closed-form
gradients and Hessians; user-supplied bulk fields are differentiated by
4th-order finite differences that never straddle the interface.  Surface
fields are differentiated in-chart (4th order, one-sided near chart edges).
"""

from __future__ import annotations

import numpy as np

from . import _tensor as T
from .errors import FieldError, GeometryError, RankMismatchError
from .geometry import make_surface_batch

FD_STEP_REL = 1e-4          # bulk FD step relative to the domain length scale
SIDE_GUARD_FACTOR = 5.0     # one-sided stencils within this many steps of S


# ---------------------------------------------------------------------------
# trivariate polynomials with exact derivatives


class Poly3:
    """Trivariate polynomial sum c_m * x^i y^j z^k."""

    def __init__(self, exps, coefs):
        self.exps = np.atleast_2d(np.asarray(exps, dtype=int))
        self.coefs = np.asarray(coefs, dtype=float).ravel()
        if self.exps.shape[0] != self.coefs.shape[0]:
            raise FieldError("polynomial term/coefficient mismatch")

    @classmethod
    def constant(cls, c):
        return cls([[0, 0, 0]], [c])

    @classmethod
    def random(cls, rng, degree=3, scale=1.0):
        terms = [(i, j, k) for i in range(degree + 1) for j in range(degree + 1)
                 for k in range(degree + 1) if i + j + k <= degree]
        coefs = rng.uniform(-1.0, 1.0, len(terms)) * scale
        return cls(terms, coefs)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        n = pts.shape[0]
        mono = np.ones((self.exps.shape[0], n))
        for ax in range(3):
            dmax = int(self.exps[:, ax].max(initial=0))
            if dmax == 0:
                continue
            pows = np.empty((dmax + 1, n))
            pows[0] = 1.0
            for k in range(1, dmax + 1):
                pows[k] = pows[k - 1] * pts[:, ax]
            mono *= pows[self.exps[:, ax]]
        return self.coefs @ mono

    def derivative(self, axis):
        e = self.exps.copy()
        c = self.coefs * e[:, axis]
        keep = e[:, axis] > 0
        e = e[keep]
        c = c[keep]
        e[:, axis] -= 1
        if len(c) == 0:
            return Poly3.constant(0.0)
        return Poly3(e, c)

    def gradient_polys(self):
        return [self.derivative(a) for a in range(3)]

    def __add__(self, other):
        return Poly3(np.vstack([self.exps, other.exps]),
                     np.concatenate([self.coefs, other.coefs]))

    def __neg__(self):
        return Poly3(self.exps, -self.coefs)

    def times_coordinate(self, axis):
        e = self.exps.copy()
        e[:, axis] += 1
        return Poly3(e, self.coefs.copy())

    def scaled(self, a):
        return Poly3(self.exps, a * self.coefs)


class PolyField:
    """Smooth field whose components are Poly3, with exact derivatives.

    rank 0: scalar; rank 1: components (3,); rank 2: components (3, 3).
    """

    def __init__(self, components, rank):
        self.rank = rank
        self.components = components
        self._grads = None

    @classmethod
    def random_symmetric(cls, rng, degree=3, scale=1.0):
        comp = np.empty((3, 3), dtype=object)
        for i in range(3):
            for j in range(i, 3):
                p = Poly3.random(rng, degree, scale)
                comp[i, j] = p
                comp[j, i] = p
        return cls(comp, rank=2)

    @classmethod
    def random_vector(cls, rng, degree=3, scale=1.0):
        return cls(np.array([Poly3.random(rng, degree, scale)
                             for _ in range(3)], dtype=object), rank=1)

    def _flat_components(self):
        if self.rank == 0:
            return [self.components]
        if self.rank == 1:
            return list(self.components)
        return [self.components[i, j] for i in range(3) for j in range(3)]

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        comps = self._flat_components()
        vals = self._values_shared(comps, pts)
        if self.rank == 0:
            return vals[0]
        if self.rank == 1:
            return np.stack(vals, axis=-1)
        out = np.empty((len(pts), 3, 3))
        for k in range(9):
            out[:, k // 3, k % 3] = vals[k]
        return out

    def _values_shared(self, comps, pts):
        """Evaluate every component through one shared monomial table
        (components are mapped onto the union exponent basis once)."""
        if not hasattr(self, '_shared_basis'):
            rows = {}
            for c in comps:
                for e in map(tuple, c.exps):
                    rows.setdefault(e, len(rows))
            exps = np.array(sorted(rows, key=rows.get), dtype=int)
            index = {tuple(e): i for i, e in enumerate(exps)}
            coef = np.zeros((len(comps), len(exps)))
            for k, c in enumerate(comps):
                for e, a in zip(map(tuple, c.exps), c.coefs):
                    coef[k, index[e]] += a
            self._shared_basis = (exps, coef)
        exps, coef = self._shared_basis
        n = pts.shape[0]
        mono = np.ones((exps.shape[0], n))
        for ax in range(3):
            dmax = int(exps[:, ax].max(initial=0))
            if dmax == 0:
                continue
            pows = np.empty((dmax + 1, n))
            pows[0] = 1.0
            for k in range(1, dmax + 1):
                pows[k] = pows[k - 1] * pts[:, ax]
            mono *= pows[exps[:, ax]]
        return list(coef @ mono)

    def __call__(self, pts):
        return self.value(pts)

    def _grad_polys(self):
        if self._grads is None:
            if self.rank == 0:
                self._grads = self.components.gradient_polys()
            elif self.rank == 1:
                self._grads = [p.gradient_polys() for p in self.components]
            else:
                self._grads = [[self.components[i, j].gradient_polys()
                                for j in range(3)] for i in range(3)]
        return self._grads

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        g = self._grad_polys()
        if self.rank == 0:
            return np.stack([p.value(pts) for p in g], axis=-1)
        if self.rank == 1:
            return np.stack([np.stack([gg.value(pts) for gg in g[i]], axis=-1)
                             for i in range(3)], axis=1)
        out = np.empty((len(pts), 3, 3, 3))
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    out[:, i, j, k] = g[i][j][k].value(pts)
        return out

    def divergence(self, pts):
        if not hasattr(self, '_div_polys'):
            if self.rank == 1:
                acc = Poly3.constant(0.0)
                for i in range(3):
                    acc = acc + self.components[i].derivative(i)
                self._div_polys = acc
            elif self.rank == 2:
                self._div_polys = []
                for i in range(3):
                    acc = Poly3.constant(0.0)
                    for j in range(3):
                        acc = acc + self.components[i, j].derivative(j)
                    self._div_polys.append(acc)
            else:
                raise RankMismatchError("divergence needs a vector or tensor field")
        if self.rank == 1:
            return self._div_polys.value(pts)
        return np.stack([p.value(pts) for p in self._div_polys], axis=-1)

    def curl_rows(self, pts):
        """Row-wise curl; exact (rank 2) or vector curl (rank 1)."""
        grad = self.gradient(pts)
        if self.rank == 1:
            return T.curl_from_gradient(grad)
        return T.tensor_curl_rows_from_gradient(grad)

    def transpose(self):
        if self.rank != 2:
            raise RankMismatchError("transpose needs a rank-2 field")
        comp = np.empty((3, 3), dtype=object)
        for i in range(3):
            for j in range(3):
                comp[i, j] = self.components[j, i]
        return PolyField(comp, rank=2)

    def curl_rows_field(self):
        """Row-wise curl as an exact polynomial field (rank 2 only)."""
        if self.rank != 2:
            raise RankMismatchError("curl field needs a rank-2 field")
        comp = np.empty((3, 3), dtype=object)
        for i in range(3):
            for j in range(3):
                acc = Poly3.constant(0.0)
                for k in range(3):
                    for l in range(3):
                        e = T.EPS[j, k, l]
                        if e != 0.0:
                            acc = acc + self.components[i, l].derivative(k).scaled(e)
                comp[i, j] = acc
        return PolyField(comp, rank=2)

    def inc_field(self):
        """curl((curl A)^T): the double-curl stress of a polynomial potential."""
        return self.curl_rows_field().transpose().curl_rows_field()


class CallableField:
    """Smooth field given by a plain evaluator; derivatives by central FD."""

    def __init__(self, fn, rank, fd_step=1e-5):
        self.fn = fn
        self.rank = rank
        self.fd_step = fd_step

    def value(self, pts):
        return np.asarray(self.fn(np.asarray(pts, dtype=float)))

    def __call__(self, pts):
        return self.value(pts)

    def gradient(self, pts):
        shape = () if self.rank == 0 else ((3,) if self.rank == 1 else (3, 3))
        return T.fd_gradient(self.value, pts, self.fd_step, shape)

    def divergence(self, pts):
        grad = self.gradient(pts)
        if self.rank == 1:
            return np.einsum('nii->n', grad)
        return np.einsum('nijj->ni', grad)


class ConstantField:
    def __init__(self, value, rank):
        self._value = np.asarray(value, dtype=float)
        self.rank = rank

    def value(self, pts):
        n = len(np.asarray(pts))
        return np.broadcast_to(self._value, (n,) + self._value.shape).copy()

    def __call__(self, pts):
        return self.value(pts)

    def gradient(self, pts):
        n = len(np.asarray(pts))
        return np.zeros((n,) + self._value.shape + (3,))

    def divergence(self, pts):
        n = len(np.asarray(pts))
        if self.rank == 1:
            return np.zeros(n)
        return np.zeros((n, 3))


class KelvinStressField:
    """Point-force stress field, origin excluded from the domain.

    Normalized so the net outward traction flux across any sphere enclosing
    the origin equals the force parameter: int_{|x|=r} sigma e_r da = F.
    Divergence-free away from the origin; the canonical violator of the
    global force condition on multiply connected domains.
    """

    rank = 2

    def __init__(self, force, nu=0.25):
        self.force = np.asarray(force, dtype=float)
        self.nu = float(nu)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        P = -self.force          # classical Kelvin load with outward flux -P
        nu = self.nu
        r = np.linalg.norm(pts, axis=-1)
        Px = pts @ P
        A = -1.0 / (8.0 * np.pi * (1.0 - nu))
        out = np.empty((len(pts), 3, 3))
        r3 = r ** 3
        r5 = r ** 5
        for i in range(3):
            for j in range(3):
                t = 3.0 * pts[:, i] * pts[:, j] * Px / r5
                t = t + (1.0 - 2.0 * nu) * (P[i] * pts[:, j] + P[j] * pts[:, i]
                                            - (1.0 if i == j else 0.0) * Px) / r3
                out[:, i, j] = A * t
        return out

    def __call__(self, pts):
        return self.value(pts)

    def gradient(self, pts):
        return T.fd_gradient(self.value, pts, 1e-5, (3, 3))

    def divergence(self, pts):
        return np.einsum('nijj->ni', self.gradient(pts))


class HessianInverseR:
    """b(x) = amp * hess(1/|x|) = amp (3 x@x/r^5 - I/r^3); divergence-free."""

    rank = 2

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(pts, axis=-1)
        xx = np.einsum('ni,nj->nij', pts, pts)
        return self.amplitude * (3.0 * xx / r[:, None, None] ** 5
                                 - T.I3 / r[:, None, None] ** 3)

    def __call__(self, pts):
        return self.value(pts)

    def gradient(self, pts):
        return T.fd_gradient(self.value, pts, 1e-5, (3, 3))

    def divergence(self, pts):
        return np.einsum('nijj->ni', self.gradient(pts))


# ---------------------------------------------------------------------------
# piecewise fields across an interface


class PiecewiseField:
    """Bulk field with independent smooth evaluators on the two interface sides.

    The plus side is the side the interface normal points toward; the jump
    is plus minus minus.  With no interface the field is globally smooth.
    """

    def __init__(self, rank, plus, minus=None, interface=None, length_scale=2.0):
        self.rank = rank
        self.plus = plus
        self.minus = minus if minus is not None else plus
        self.interface = interface
        self.fd_step = FD_STEP_REL * float(length_scale)
        if interface is None and minus is not None and minus is not plus:
            raise FieldError("two-sided field needs an interface")

    @classmethod
    def smooth(cls, field, rank, length_scale=2.0):
        return cls(rank, field, None, None, length_scale)

    def _sides(self, pts):
        if self.interface is None:
            return np.ones(len(pts))
        return self.interface.side(pts)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.interface is None or self.minus is self.plus:
            return np.asarray(self.plus.value(pts))
        s = self._sides(pts)
        plus_mask = s >= 0
        shape = self._value_shape()
        out = np.empty((len(pts),) + shape)
        if np.any(plus_mask):
            out[plus_mask] = np.asarray(self.plus.value(pts[plus_mask]))
        if not np.all(plus_mask):
            out[~plus_mask] = np.asarray(self.minus.value(pts[~plus_mask]))
        return out

    def __call__(self, pts):
        return self.value(pts)

    def side_value(self, pts, side):
        f = self.plus if side > 0 else self.minus
        return np.asarray(f.value(pts))

    def jump(self, batch_or_points):
        pts = getattr(batch_or_points, 'points', batch_or_points)
        return (np.asarray(self.plus.value(pts))
                - np.asarray(self.minus.value(pts)))

    def _value_shape(self):
        return () if self.rank == 0 else ((3,) if self.rank == 1 else (3, 3))

    def gradient(self, pts):
        """d(field)/dx with one-sided stencils near the interface."""
        pts = np.asarray(pts, dtype=float)
        shape = self._value_shape()
        if self.interface is None or self.minus is self.plus:
            if hasattr(self.plus, 'gradient'):
                return np.asarray(self.plus.gradient(pts))
            return T.fd_gradient(self.plus.value, pts, self.fd_step, shape)
        s = self._sides(pts)
        out = np.empty((len(pts),) + shape + (3,))
        for side, f in ((1.0, self.plus), (-1.0, self.minus)):
            m = s >= 0 if side > 0 else s < 0
            if not np.any(m):
                continue
            if hasattr(f, 'gradient'):
                out[m] = np.asarray(f.gradient(pts[m]))
            else:
                out[m] = T.fd_gradient_guarded(
                    f.value, pts[m], self.fd_step,
                    self.interface.signed_distance, shape)
        return out

    def divergence(self, pts):
        if self.rank not in (1, 2):
            raise RankMismatchError("divergence needs rank 1 or 2")
        pts = np.asarray(pts, dtype=float)
        shape = () if self.rank == 1 else (3,)
        if self.interface is None or self.minus is self.plus:
            if hasattr(self.plus, 'divergence'):
                return np.asarray(self.plus.divergence(pts))
            grad = self.gradient(pts)
        else:
            s = self._sides(pts)
            out = np.empty((len(pts),) + shape)
            done = True
            for side, f in ((1.0, self.plus), (-1.0, self.minus)):
                m = s >= 0 if side > 0 else s < 0
                if not np.any(m):
                    continue
                if hasattr(f, 'divergence'):
                    out[m] = np.asarray(f.divergence(pts[m]))
                else:
                    done = False
                    break
            if done:
                return out
            grad = self.gradient(pts)
        if self.rank == 1:
            return np.einsum('nii->n', grad)
        return np.einsum('nijj->ni', grad)

    def curl_rows(self, pts):
        grad = self.gradient(pts)
        if self.rank == 1:
            return T.curl_from_gradient(grad)
        return T.tensor_curl_rows_from_gradient(grad)

    def side_gradient(self, pts, side):
        f = self.plus if side > 0 else self.minus
        if hasattr(f, 'gradient'):
            return np.asarray(f.gradient(pts))
        return T.fd_gradient(f.value, pts, self.fd_step, self._value_shape())

    def smoothness_probe(self, pts):
        """Best-effort smoothness check: FD gradients at h and h/2 agree."""
        g1 = self._probe(pts, self.fd_step)
        g2 = self._probe(pts, 0.5 * self.fd_step)
        scale = np.max(np.abs(g1)) + 1e-12
        return float(np.max(np.abs(g1 - g2)) / scale)

    def _probe(self, pts, h):
        s = self._sides(pts)
        shape = self._value_shape()
        out = np.empty((len(pts),) + shape + (3,))
        for side, f in ((1.0, self.plus), (-1.0, self.minus)):
            m = s >= 0 if side > 0 else s < 0
            if np.any(m):
                if self.interface is None:
                    out[m] = T.fd_gradient(f.value, pts[m], h, shape)
                else:
                    out[m] = T.fd_gradient_guarded(
                        f.value, pts[m], h, self.interface.signed_distance, shape)
        return out


def jump(field, point):
    """Jump of a piecewise field at a surface point (plus minus minus)."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    j = field.jump(pts)
    return j[0] if np.asarray(point).ndim == 1 else j


# ---------------------------------------------------------------------------
# surface fields and in-chart differentiation


class SurfaceField:
    """Smooth field on an interface, evaluated on SurfaceBatch objects.

    ``dchart`` optionally supplies analytic in-chart partial derivatives
    (batch, axis) -> values; fields without it are differentiated by
    4th-order finite differences in the chart.
    """

    def __init__(self, evaluator, rank, interface=None, dchart=None):
        self.evaluator = evaluator
        self.rank = rank
        self.interface = interface
        self.dchart = dchart

    @classmethod
    def from_world(cls, fn, rank, interface=None):
        dchart = None
        if hasattr(fn, 'gradient'):
            def dchart(batch, axis):
                xu, xv = batch.patch.tangents(batch.U, batch.V)
                tang = xu if axis == 0 else xv
                g = np.asarray(fn.gradient(batch.points))
                return np.einsum('n...k,nk->n...', g, tang)
        value = fn.value if hasattr(fn, 'value') else fn
        return cls(lambda batch: np.asarray(value(batch.points)), rank,
                   interface, dchart=dchart)

    @classmethod
    def constant(cls, value, rank, interface=None):
        value = np.asarray(value, dtype=float)

        def ev(batch):
            return np.broadcast_to(value, (len(batch),) + value.shape).copy()

        return cls(ev, rank, interface)

    def value(self, batch):
        return np.asarray(self.evaluator(batch))

    def _value_shape(self):
        return () if self.rank == 0 else ((3,) if self.rank == 1 else (3, 3))


def _shifted_batch(batch, du, dv):
    patch = batch.patch
    U = batch.U + du
    V = batch.V + dv
    if getattr(patch, 'periodic_v', False):
        lo, hi = patch.v_range
        V = lo + np.mod(V - lo, hi - lo)
    if getattr(patch, 'periodic_u', False):
        lo, hi = patch.u_range
        U = lo + np.mod(U - lo, hi - lo)
    return make_surface_batch(patch, U, V)


def _chart_partial(field, batch, axis):
    """4th-order in-chart partial derivative, one-sided near chart edges."""
    patch = batch.patch
    hu, hv = patch.chart_steps()
    h = hu if axis == 0 else hv
    coord = batch.U if axis == 0 else batch.V
    periodic = getattr(patch, 'periodic_v' if axis == 1 else 'periodic_u', False)
    lo, hi = patch.u_range if axis == 0 else patch.v_range

    def val_at(offsets_scaled):
        du = offsets_scaled if axis == 0 else 0.0
        dv = offsets_scaled if axis == 1 else 0.0
        return field.value(_shifted_batch(batch, du, dv))

    n = len(batch)
    shape = np.asarray(field.value(batch)).shape[1:]
    out = np.zeros((n,) + shape)
    if periodic:
        acc = 0.0
        for off, w in zip(T.CENTRAL_OFFSETS, T.CENTRAL_WEIGHTS):
            acc = acc + w * val_at(off * h)
        return acc / h

    near_lo = coord - 2 * h < lo
    near_hi = coord + 2 * h > hi
    central = ~(near_lo | near_hi)
    direction = np.where(near_lo, 1.0, -1.0)
    if np.any(central):
        acc = 0.0
        for off, w in zip(T.CENTRAL_OFFSETS, T.CENTRAL_WEIGHTS):
            du = np.where(central, off * h, 0.0)
            acc = acc + w * val_at(du)
        out[central] = (acc / h)[central]
    onesided = ~central
    if np.any(onesided):
        acc = 0.0
        for off, w in zip(T.ONESIDED_OFFSETS, T.ONESIDED_WEIGHTS):
            du = np.where(onesided, direction * off * h, 0.0)
            acc = acc + w * val_at(du)
        d = direction.reshape((-1,) + (1,) * len(shape))
        out[onesided] = (acc / (d * h))[onesided]
    return out


def chart_derivatives(field, batch):
    """(df/du, df/dv) of a surface field along the chart axes."""
    if getattr(field, 'dchart', None) is not None:
        return field.dchart(batch, 0), field.dchart(batch, 1)
    return _chart_partial(field, batch, 0), _chart_partial(field, batch, 1)


def dual_tangents(batch):
    """Dual basis (g^u, g^v) to the coordinate tangents."""
    xu, xv = batch.patch.tangents(batch.U, batch.V)
    guu = np.einsum('ni,ni->n', xu, xu)
    guv = np.einsum('ni,ni->n', xu, xv)
    gvv = np.einsum('ni,ni->n', xv, xv)
    det = guu * gvv - guv ** 2
    gu = (gvv[:, None] * xu - guv[:, None] * xv) / det[:, None]
    gv = (guu[:, None] * xv - guv[:, None] * xu) / det[:, None]
    return gu, gv


def surface_gradient(field, batch):
    """grad_S f: tangential derivative of a surface field, (N, ..., 3)."""
    fu, fv = chart_derivatives(field, batch)
    gu, gv = dual_tangents(batch)
    return (fu[..., None] * gu[:, None, ...].reshape((len(batch),) + (1,) * (fu.ndim - 1) + (3,))
            + fv[..., None] * gv.reshape((len(batch),) + (1,) * (fu.ndim - 1) + (3,)))


def surface_divergence(field, batch):
    """div_S f: trace for vector fields, row-wise contraction for tensors."""
    grad = surface_gradient(field, batch)
    if field.rank == 1:
        return np.einsum('nii->n', grad)
    if field.rank == 2:
        return np.einsum('nijj->ni', grad)
    raise RankMismatchError("surface divergence needs rank 1 or 2")


# ---------------------------------------------------------------------------
# compactly supported smooth test functions


def _bump_radial(q):
    """beta(q) = exp(1 - 1/(1-q)) for q < 1 else 0, and dq-derivatives."""
    q = np.asarray(q, dtype=float)
    m = q < 1.0 - 1e-9
    beta = np.zeros_like(q)
    b1 = np.zeros_like(q)
    b2 = np.zeros_like(q)
    om = 1.0 - q[m]
    e = np.exp(1.0 - 1.0 / om)
    beta[m] = e
    b1[m] = -e / om ** 2
    b2[m] = e * (1.0 / om ** 4 - 2.0 / om ** 3)
    return beta, b1, b2


class _BumpBase:
    """Shared radial machinery: q = |x-c|^2 / r^2."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def _q(self, pts):
        d = pts - self.center
        q = np.einsum('ni,ni->n', d, d) / self.radius ** 2
        dq = 2.0 * d / self.radius ** 2
        return q, dq

    def _parts(self, pts):
        pts = np.asarray(pts, dtype=float)
        q, dq = self._q(pts)
        beta, b1, b2 = _bump_radial(q)
        hq = 2.0 / self.radius ** 2            # hessian of q is (2/r^2) I
        return pts, beta, b1, b2, dq, hq

    def support_in(self, domain):
        return domain.contains_ball(self.center, self.radius)


class BumpScalar(_BumpBase):
    """psi(x) = P(x) * exp(1 - 1/(1 - |x-c|^2/r^2)) inside the support ball."""

    rank = 0

    def __init__(self, center, radius, poly=None):
        super().__init__(center, radius)
        self.poly = poly if poly is not None else Poly3.constant(1.0)
        self._gp = self.poly.gradient_polys()
        self._hp = [[self._gp[a].derivative(b) for b in range(3)] for a in range(3)]

    def value(self, pts):
        pts, beta, _, _, _, _ = self._parts(pts)
        return self.poly.value(pts) * beta

    def gradient(self, pts):
        pts, beta, b1, _, dq, _ = self._parts(pts)
        P = self.poly.value(pts)
        gP = np.stack([g.value(pts) for g in self._gp], axis=-1)
        return beta[:, None] * gP + (P * b1)[:, None] * dq

    def hessian(self, pts):
        pts, beta, b1, b2, dq, hq = self._parts(pts)
        P = self.poly.value(pts)
        gP = np.stack([g.value(pts) for g in self._gp], axis=-1)
        hP = np.empty((len(pts), 3, 3))
        for a in range(3):
            for b in range(3):
                hP[:, a, b] = self._hp[a][b].value(pts)
        out = beta[:, None, None] * hP
        out += b1[:, None, None] * (gP[:, :, None] * dq[:, None, :]
                                    + dq[:, :, None] * gP[:, None, :])
        out += (P * b2)[:, None, None] * dq[:, :, None] * dq[:, None, :]
        out += (P * b1)[:, None, None] * hq * T.I3
        return out


class _ComponentBump(_BumpBase):
    """Vector/tensor bump assembled from per-component polynomials."""

    def __init__(self, center, radius, polys, shape):
        super().__init__(center, radius)
        self.polys = polys
        self.shape = shape
        self._scalars = [BumpScalar(center, radius, p) for p in polys]

    def value(self, pts):
        vals = [s.value(pts) for s in self._scalars]
        return np.stack(vals, axis=-1).reshape((len(np.asarray(pts)),) + self.shape)

    def gradient(self, pts):
        g = [s.gradient(pts) for s in self._scalars]
        return np.stack(g, axis=1).reshape((len(np.asarray(pts)),) + self.shape + (3,))

    def hessian(self, pts):
        h = [s.hessian(pts) for s in self._scalars]
        return np.stack(h, axis=1).reshape(
            (len(np.asarray(pts)),) + self.shape + (3, 3))


class BumpVector(_ComponentBump):
    rank = 1

    def __init__(self, center, radius, polys):
        if len(polys) != 3:
            raise FieldError("vector bump needs 3 polynomials")
        super().__init__(center, radius, list(polys), (3,))

    def curl(self, pts):
        return T.curl_from_gradient(self.gradient(pts))


class BumpSymTensor(_ComponentBump):
    """Symmetric-tensor bump: six polynomials fill the upper triangle."""

    rank = 2

    def __init__(self, center, radius, polys):
        if len(polys) != 6:
            raise FieldError("symmetric tensor bump needs 6 polynomials")
        iu = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        grid = np.empty((3, 3), dtype=object)
        for (i, j), p in zip(iu, polys):
            grid[i, j] = p
            grid[j, i] = p
        super().__init__(center, radius, list(grid.ravel()), (3, 3))


def make_bump(domain, center, radius, rank=0, rng=None, degree=3, poly=None):
    """Random-polynomial bump test function supported strictly inside the domain."""
    center = np.asarray(center, dtype=float)
    if not domain.contains_ball(center, radius):
        raise FieldError(
            f"bump support B({center}, {radius}) is not strictly inside the domain")
    if poly is not None:
        return BumpScalar(center, radius, poly)
    if rng is None:
        return BumpScalar(center, radius)
    if rank == 0:
        return BumpScalar(center, radius, Poly3.random(rng, degree))
    n = 3 if rank == 1 else 6
    polys = [Poly3.random(rng, degree) for _ in range(n)]
    return (BumpVector(center, radius, polys) if rank == 1
            else BumpSymTensor(center, radius, polys))


class ModulatedTest:
    """Product of a test function and a smooth scalar factor (value/grad/hess)."""

    def __init__(self, base, factor):
        self.base = base
        self.factor = factor
        self.rank = base.rank

    def value(self, pts):
        m = self.factor.value(pts)
        v = self.base.value(pts)
        return m.reshape((-1,) + (1,) * (v.ndim - 1)) * v

    def gradient(self, pts):
        m = self.factor.value(pts)
        gm = self.factor.gradient(pts)
        v = self.base.value(pts)
        gv = self.base.gradient(pts)
        pad = (1,) * (v.ndim - 1)
        return (m.reshape((-1,) + pad + (1,)) * gv
                + v[..., None] * gm.reshape((-1,) + pad + (3,)))

    def hessian(self, pts):
        m = self.factor.value(pts)
        gm = self.factor.gradient(pts)
        hm = self.factor.hessian(pts)
        v = self.base.value(pts)
        gv = self.base.gradient(pts)
        hv = self.base.hessian(pts)
        pad = (1,) * (v.ndim - 1)
        mm = m.reshape((-1,) + pad + (1, 1))
        out = mm * hv
        out += gv[..., :, None] * gm.reshape((-1,) + pad + (1, 3))
        out += gv[..., None, :] * gm.reshape((-1,) + pad + (3, 1))
        out += v[..., None, None] * hm.reshape((-1,) + pad + (3, 3))
        return out

    def curl(self, pts):
        if self.rank != 1:
            raise RankMismatchError("curl needs a vector test")
        return T.curl_from_gradient(self.gradient(pts))


def interface_distance_derivatives(interface, pts):
    """(s, grad s, hess s) of the catalog signed-distance functions."""
    pts = np.asarray(pts, dtype=float)
    kind = interface.kind
    if kind == 'sphere':
        a = interface.params['radius']
        r = np.linalg.norm(pts, axis=-1)
        er = pts / r[:, None]
        s = r - a
        hess = (T.I3 - np.einsum('ni,nj->nij', er, er)) / r[:, None, None]
        return s, er, hess
    if kind in ('plane-disk', 'plane-rect', 'equatorial-annulus'):
        z0 = interface.params.get('z', 0.0)
        s = pts[:, 2] - z0
        g = np.zeros_like(pts)
        g[:, 2] = 1.0
        return s, g, np.zeros((len(pts), 3, 3))
    if kind == 'cylinder-patch':
        a = interface.feature_size
        rho = np.hypot(pts[:, 0], pts[:, 1])
        er = np.stack([pts[:, 0] / rho, pts[:, 1] / rho, np.zeros(len(pts))], axis=-1)
        s = rho - a
        hess = (T.I3 - np.einsum('ni,nj->nij', er, er)) / rho[:, None, None]
        hess[:, 2, 2] -= 1.0 / rho
        return s, er, hess
    raise GeometryError(f"no analytic distance derivatives for {kind!r}")


class SquaredDistanceFactor:
    """m(x) = s(x)^2: vanishes with its normal derivative on the interface."""

    def __init__(self, interface):
        self.interface = interface

    def value(self, pts):
        s, _, _ = interface_distance_derivatives(self.interface, pts)
        return s ** 2

    def gradient(self, pts):
        s, g, _ = interface_distance_derivatives(self.interface, pts)
        return 2.0 * s[:, None] * g

    def hessian(self, pts):
        s, g, h = interface_distance_derivatives(self.interface, pts)
        return 2.0 * np.einsum('ni,nj->nij', g, g) + 2.0 * s[:, None, None] * h


class SmoothStepProfile:
    """C-infinity transition t -> [0, 1] with closed-form derivatives."""

    @staticmethod
    def _g(t):
        out = np.zeros_like(t)
        m = t > 0
        out[m] = np.exp(-1.0 / t[m])
        return out

    @staticmethod
    def _g1(t):
        out = np.zeros_like(t)
        m = t > 0
        out[m] = np.exp(-1.0 / t[m]) / t[m] ** 2
        return out

    @staticmethod
    def _g2(t):
        out = np.zeros_like(t)
        m = t > 0
        out[m] = np.exp(-1.0 / t[m]) * (1.0 / t[m] ** 4 - 2.0 / t[m] ** 3)
        return out

    def value(self, t):
        t = np.asarray(t, dtype=float)
        g, g1 = self._g(t), self._g(1.0 - t)
        return np.where(t <= 0, 0.0, np.where(t >= 1, 1.0, g / (g + g1)))

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t > 0) & (t < 1)
        out = np.zeros_like(t)
        ti = t[inside]
        g, gp = self._g(ti), self._g1(ti)
        h, hp = self._g(1.0 - ti), self._g1(1.0 - ti)
        D = g + h
        out[inside] = (gp * h + g * hp) / D ** 2
        return out

    def d2(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t > 0) & (t < 1)
        out = np.zeros_like(t)
        ti = t[inside]
        g, gp, gpp = self._g(ti), self._g1(ti), self._g2(ti)
        h, hp, hpp = self._g(1.0 - ti), self._g1(1.0 - ti), self._g2(1.0 - ti)
        D = g + h
        Dp = gp - hp
        N = gp * h + g * hp
        Np = gpp * h - g * hpp
        out[inside] = (Np * D - 2.0 * N * Dp) / D ** 3
        return out


class PlateauFactor:
    """m(z) = 1 on |z - z0| <= w_in, 0 for |z - z0| >= w_out, C-infinity between."""

    def __init__(self, z0, w_in, w_out, axis=2):
        if not 0 < w_in < w_out:
            raise FieldError("plateau needs 0 < w_in < w_out")
        self.z0, self.w_in, self.w_out, self.axis = z0, w_in, w_out, axis
        self._step = SmoothStepProfile()

    def _t(self, pts):
        z = pts[:, self.axis] - self.z0
        return (self.w_out - np.abs(z)) / (self.w_out - self.w_in), np.sign(z)

    def value(self, pts):
        t, _ = self._t(np.asarray(pts, dtype=float))
        return self._step.value(t)

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        t, sgn = self._t(pts)
        w = self.w_out - self.w_in
        out = np.zeros_like(pts)
        out[:, self.axis] = self._step.d1(t) * (-sgn / w)
        return out

    def hessian(self, pts):
        pts = np.asarray(pts, dtype=float)
        t, _ = self._t(pts)
        w = self.w_out - self.w_in
        out = np.zeros((len(pts), 3, 3))
        out[:, self.axis, self.axis] = self._step.d2(t) / w ** 2
        return out


# ---------------------------------------------------------------------------
# curl-free tensor test fields (gradients of vector potentials)


class GradientTestField:
    """psi = grad u for a smooth vector potential u that equals a constant
    vector on a neighborhood of each boundary component (zero on component 0).

    Curl-free by construction; value, gradient (= hess u) and the potential
    itself are all analytic.  ``volume_breaks`` exposes the radial structure
    of the profile so pairings can resolve its transition layers.
    """

    rank = 2

    def __init__(self, u_value, psi_value, psi_gradient, constants,
                 volume_breaks=None):
        self._u = u_value
        self._psi = psi_value
        self._grad = psi_gradient
        self.constants = [np.asarray(c, dtype=float) for c in constants]
        self.volume_breaks = volume_breaks

    def u(self, pts):
        return self._u(np.asarray(pts, dtype=float))

    def value(self, pts):
        return self._psi(np.asarray(pts, dtype=float))

    def gradient(self, pts):
        return self._grad(np.asarray(pts, dtype=float))

    def curl_residual(self, pts):
        """max |curl of each row| (zero identically for gradients)."""
        g = self.gradient(pts)
        c = np.einsum('jkl,nilk->nij', T.EPS, g)
        return float(np.max(np.abs(c)))


def make_gradient_test_field(domain, constants, margin=0.12, rng=None,
                             center=None, radius=None, direction=None):
    """Curl-free tensor test field adapted to the domain's boundary components.

    For a shell the potential is c_1 * profile(r): identically c_1 near the
    inner boundary, zero near the outer one.  For a single-component domain
    the constants must all vanish and the potential is a vector bump.
    """
    constants = [np.asarray(c, dtype=float) for c in constants]
    if len(constants) != domain.k:
        raise FieldError(f"need one constant per boundary component (k={domain.k})")
    if np.linalg.norm(constants[0]) != 0.0:
        raise FieldError("the constant on component 0 must vanish")
    nonzero = any(np.linalg.norm(c) > 0 for c in constants[1:])

    if domain.k == 1 or not nonzero:
        if any(np.linalg.norm(c) > 0 for c in constants):
            raise FieldError("single-component domains admit only zero constants")
        if center is None or radius is None:
            raise FieldError("interior gradient test needs a bump center and radius")
        poly = Poly3.constant(1.0) if rng is None else Poly3.random(rng, 2)
        bump = make_bump(domain, center, radius, rank=0, poly=poly)
        d = np.asarray(direction if direction is not None else [1.0, 0.0, 0.0],
                       dtype=float)

        def u_val(pts):
            return d[None, :] * bump.value(pts)[:, None]

        def psi_val(pts):
            return np.einsum('i,nj->nij', d, bump.gradient(pts))

        def psi_grad(pts):
            return np.einsum('i,njk->nijk', d, bump.hessian(pts))

        g = GradientTestField(u_val, psi_val, psi_grad, constants)
        g.center = bump.center
        g.radius = bump.radius
        return g

    if domain.kind != 'spherical-shell':
        raise FieldError("boundary-constant gradient tests need a spherical shell")
    c1 = constants[1]
    r0, r1 = domain.inner_radius, domain.outer_radius
    a = r0 + margin * (r1 - r0)
    b = r1 - margin * (r1 - r0)
    step = SmoothStepProfile()

    def prof(r):
        return 1.0 - step.value((r - a) / (b - a))

    def prof1(r):
        return -step.d1((r - a) / (b - a)) / (b - a)

    def prof2(r):
        return -step.d2((r - a) / (b - a)) / (b - a) ** 2

    def u_val(pts):
        r = np.linalg.norm(pts, axis=-1)
        return c1[None, :] * prof(r)[:, None]

    def psi_val(pts):
        r = np.linalg.norm(pts, axis=-1)
        er = pts / r[:, None]
        return np.einsum('i,nj->nij', c1, prof1(r)[:, None] * er)

    def psi_grad(pts):
        r = np.linalg.norm(pts, axis=-1)
        er = pts / r[:, None]
        ee = np.einsum('nj,nk->njk', er, er)
        radial = prof2(r)[:, None, None] * ee
        tangential = (prof1(r) / r)[:, None, None] * (T.I3 - ee)
        return np.einsum('i,njk->nijk', c1, radial + tangential)

    # graded radial breaks resolving the profile's transition layers
    w = b - a
    breaks = sorted({a, b, 0.5 * (a + b)}
                    | {a + w * 0.5 ** k for k in range(1, 9)}
                    | {b - w * 0.5 ** k for k in range(1, 9)})
    return GradientTestField(u_val, psi_val, psi_grad, constants,
                             volume_breaks=breaks)


# ---------------------------------------------------------------------------
# catalog surface fields


def uniform_tension(gamma, interface):
    """Isotropic tangential tension gamma (I - n@n) on the interface."""

    def ev(batch):
        nn = np.einsum('ni,nj->nij', batch.normals, batch.normals)
        return gamma * (T.I3 - nn)

    return SurfaceField(ev, rank=2, interface=interface)


def dilatational_surface(p_fn, interface):
    """p(x) (I - n@n) for a scalar function (or constant) on the surface."""

    def ev(batch):
        p = p_fn(batch.points) if callable(p_fn) else np.full(len(batch), float(p_fn))
        nn = np.einsum('ni,nj->nij', batch.normals, batch.normals)
        return p[:, None, None] * (T.I3 - nn)

    return SurfaceField(ev, rank=2, interface=interface)


def normal_dyad(a, interface):
    """sym(a @ n): carries nonzero net traction through closed surfaces."""
    a = np.asarray(a, dtype=float)

    def ev(batch):
        an = np.einsum('i,nj->nij', a, batch.normals)
        return 0.5 * (an + np.swapaxes(an, -1, -2))

    return SurfaceField(ev, rank=2, interface=interface)


def surface_polynomial(rng, rank, interface, degree=2, symmetric=True, scale=1.0):
    """Random polynomial field restricted to the surface."""
    if rank == 1:
        pf = PolyField.random_vector(rng, degree, scale)
    else:
        pf = (PolyField.random_symmetric(rng, degree, scale) if symmetric
              else PolyField(np.array([[Poly3.random(rng, degree, scale)
                                        for _ in range(3)] for _ in range(3)],
                                      dtype=object), rank=2))
    return SurfaceField.from_world(pf.value, rank, interface)
