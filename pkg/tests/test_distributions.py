"""Pairings, the dual-path divergence identities, mollification, Cauchy flux."""

import numpy as np
import pytest

from stressdist.distributions import (BDist, CDist, CompositeDist, FDist,
                                      PairingValue, cauchy_flux, close,
                                      distributional_curl, distributional_div,
                                      identity1_rhs, identity2_rhs,
                                      mollified_pair, mollify_convergence,
                                      pair)
from stressdist.errors import RankMismatchError, StressDistError
from stressdist.fields import (BumpScalar, ConstantField, ModulatedTest,
                               PiecewiseField, Poly3, PolyField,
                               SquaredDistanceFactor, SurfaceField, make_bump,
                               make_gradient_test_field, normal_dyad,
                               surface_polynomial)
from stressdist.geometry import integrate_surface, integrate_volume, \
    sphere_interface


class TestPairingBasics:
    def test_pairing_value_arithmetic(self):
        a = PairingValue(1.0, 0.1)
        b = PairingValue(2.0, 0.2)
        s = a + b
        assert s.value == 3.0 and abs(s.error - 0.3) < 1e-15
        assert (-a).value == -1.0
        assert (2.0 * a).value == 2.0 and (2.0 * a).error == 0.2

    def test_linearity(self, ball, sphere_half, rng):
        c = surface_polynomial(rng, 1, sphere_half, degree=2)
        cd = CDist(sphere_half, c)
        p1 = make_bump(ball, [0.45, 0.0, 0.1], 0.22, rank=1, rng=rng)
        p2 = make_bump(ball, [0.4, 0.1, -0.1], 0.2, rank=1, rng=rng)

        class Lin:
            # support ball enclosing both members keeps the same quadrature
            rank = 1

            def __init__(self, a, b):
                self.a, self.b = a, b
                mid = 0.5 * (a.center + b.center)
                self.center = mid
                self.radius = max(np.linalg.norm(a.center - mid) + a.radius,
                                  np.linalg.norm(b.center - mid) + b.radius)

            def value(self, pts):
                return 2.0 * self.a.value(pts) - 0.5 * self.b.value(pts)

            def gradient(self, pts):
                return 2.0 * self.a.gradient(pts) - 0.5 * self.b.gradient(pts)

        combo = pair(cd, Lin(p1, p2), level=2)
        target = (2.0 * pair(cd, p1, level=2).value
                  - 0.5 * pair(cd, p2, level=2).value)
        assert abs(combo.value - target) < 1e-7 * max(1.0, abs(target))

    def test_support_locality(self, big_ball, unit_sphere, rng):
        c = surface_polynomial(rng, 1, unit_sphere, degree=2)
        cd = CDist(unit_sphere, c)
        # support disjoint from the sphere
        psi = make_bump(big_ball, [0.0, 0.0, 0.0], 0.4, rank=1, rng=rng)
        assert abs(pair(cd, psi).value) < 1e-14

    def test_constant_density_factors(self, ball, rng):
        cvec = np.array([0.3, -1.2, 0.7])
        b = PiecewiseField.smooth(ConstantField(cvec, 1), 1, 2.0)
        bd = BDist(ball, None, b)
        psi = make_bump(ball, [0.1, 0.0, 0.2], 0.4, rank=1, rng=rng)
        got = pair(bd, psi).value
        comp = [integrate_volume(ball, None,
                                 lambda p, i=i: psi.value(p)[:, i], level=2).value
                for i in range(3)]
        assert abs(got - float(cvec @ comp)) < 1e-7 * max(1.0, abs(got))

    def test_fdist_plane_against_2d_oracle(self, box, rng):
        pl = box.plane_interface(0.0)
        sig0 = np.array([[1.0, 0.2, 0.0], [0.2, -0.5, 0.1], [0.0, 0.1, 0.3]])
        f = SurfaceField.constant(sig0, 2, pl)
        fd = FDist(pl, f)
        psi = make_bump(box, [0.1, -0.2, 0.1], 0.5, rank=2, rng=rng)
        got = pair(fd, psi).value
        # independent 2-D composite Gauss grid, cells graded into the
        # support edge where the integrand has its steep layers
        rp = np.sqrt(0.5 ** 2 - 0.1 ** 2)

        def graded_axis(c):
            edges = sorted({-1.0, 1.0, c}
                           | {c - rp * (1 - 0.5 ** k) for k in range(9)}
                           | {c + rp * (1 - 0.5 ** k) for k in range(9)}
                           | {c - rp, c + rp})
            xg, wg = np.polynomial.legendre.leggauss(10)
            xs, ws = [], []
            for a, b in zip(edges[:-1], edges[1:]):
                xs.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
                ws.append(0.5 * (b - a) * wg)
            return np.concatenate(xs), np.concatenate(ws)

        xn, xw = graded_axis(0.1)
        yn, yw = graded_axis(-0.2)
        X, Y = np.meshgrid(xn, yn, indexing='ij')
        W = np.outer(xw, yw)
        pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=-1)
        dpsi_dz = psi.gradient(pts)[:, :, :, 2]
        ref = float(np.dot(W.ravel(), np.einsum('ij,nij->n', sig0, dpsi_dz)))
        assert abs(got - ref) < 1e-7 * max(1.0, abs(ref))

    def test_fdist_depends_on_normal_derivative_only(self, big_ball,
                                                     unit_sphere, rng):
        f = surface_polynomial(rng, 1, unit_sphere, degree=1)
        fd = FDist(unit_sphere, f)
        base = make_bump(big_ball, [0.9, 0.1, 0.2], 0.35, rank=1, rng=rng)
        v1 = pair(fd, base).value

        class Shifted:
            # base + s^2-modulated perturbation: equal to first order on S
            rank = 1

            def __init__(self, a, b):
                self.a, self.b = a, b
                self.center, self.radius = a.center, a.radius

            def value(self, pts):
                return self.a.value(pts) + self.b.value(pts)

            def gradient(self, pts):
                return self.a.gradient(pts) + self.b.gradient(pts)

        pert = ModulatedTest(make_bump(big_ball, [0.9, 0.1, 0.2], 0.3,
                                       rank=1, rng=rng),
                             SquaredDistanceFactor(unit_sphere))
        v2 = pair(fd, Shifted(base, pert)).value
        assert abs(v1 - v2) < 1e-9 * max(1.0, abs(v1))

    def test_rank_mismatch(self, ball, rng):
        b = PiecewiseField.smooth(ConstantField(np.zeros(3), 1), 1, 2.0)
        bd = BDist(ball, None, b)
        psi = make_bump(ball, [0.0, 0.0, 0.0], 0.4, rank=2, rng=rng)
        with pytest.raises(RankMismatchError):
            pair(bd, psi)


class TestDivergenceIdentity1:
    def test_identity_field_divergence(self, ball, rng):
        # density b = x: -B(grad psi) equals 3 * integral of psi
        comp = np.array([Poly3([[1, 0, 0]], [1.0]), Poly3([[0, 1, 0]], [1.0]),
                         Poly3([[0, 0, 1]], [1.0])], dtype=object)
        b = PiecewiseField.smooth(PolyField(comp, rank=1), 1, 2.0)
        bd = BDist(ball, None, b)
        psi = make_bump(ball, [0.2, -0.1, 0.0], 0.4, rank=0, rng=rng)
        got = distributional_div(bd, psi).value
        ref = 3.0 * integrate_volume(ball, None, psi.value, level=2).value
        assert abs(got - ref) < 1e-6 * max(1.0, abs(ref))

    def test_smooth_density_no_interface_term(self, ball, rng):
        f = PolyField.random_vector(rng, 3)
        bd = BDist(ball, None, PiecewiseField.smooth(f, 1, 2.0))
        psi = make_bump(ball, [0.0, 0.25, 0.0], 0.4, rank=0, rng=rng)
        lhs = distributional_div(bd, psi).value
        ref = integrate_volume(ball, None,
                               lambda p: f.divergence(p) * psi.value(p),
                               level=2).value
        assert abs(lhs - ref) < 1e-6 * max(1.0, abs(ref))

    def test_pure_jump_three_ways(self, ball, sphere_half, rng):
        cp = np.array([0.8, -0.3, 0.5])
        cm = np.array([-0.2, 0.4, 1.0])
        b = PiecewiseField(1, ConstantField(cp, 1), ConstantField(cm, 1),
                           sphere_half, 2.0)
        bd = BDist(ball, sphere_half, b)
        psi = make_bump(ball, [0.48, 0.05, -0.1], 0.2, rank=0, rng=rng)
        lhs = distributional_div(bd, psi).value
        rhs = identity1_rhs(bd, psi).value
        # independent surface quadrature of the jump term
        jump = cp - cm
        oracle = integrate_surface(
            sphere_half,
            lambda bt: (bt.normals @ jump) * psi.value(bt.points), level=4).value
        assert close(lhs, rhs)
        assert abs(lhs - oracle) < 1e-6 * max(1.0, abs(oracle))

    def test_dual_path_all_families(self, ball, sphere_half, rng):
        psi = make_bump(ball, [0.42, 0.12, 0.15], 0.22, rank=0, rng=rng,
                        degree=3)
        b = PiecewiseField(1, PolyField.random_vector(rng, 3),
                           PolyField.random_vector(rng, 3), sphere_half, 2.0)
        dists = [BDist(ball, sphere_half, b),
                 CDist(sphere_half, surface_polynomial(rng, 1, sphere_half, 2)),
                 FDist(sphere_half, surface_polynomial(rng, 1, sphere_half, 2))]
        for d in dists:
            lhs = distributional_div(d, psi)
            rhs = identity1_rhs(d, psi)
            assert close(lhs.value, rhs.value), type(d).__name__
        comp = CompositeDist(*dists)
        lhs = distributional_div(comp, psi)
        rhs = identity1_rhs(comp, psi)
        assert close(lhs.value, rhs.value)

    def test_normal_density_on_sphere(self, big_ball, unit_sphere):
        # density = the normal itself; for a radial test the surface term
        # cancels and only the normal-derivative term survives
        n_field = SurfaceField(lambda b: b.normals.copy(), 1, unit_sphere)
        cd = CDist(unit_sphere, n_field)
        bump = BumpScalar(np.zeros(3), 1.8)
        lhs = distributional_div(cd, bump).value
        rhs = identity1_rhs(cd, bump).value
        # analytic: -4 pi * d/dr psi at r=1 for the plain radial bump
        r = 1.8
        q = (1.0 / r) ** 2
        dpsi = np.exp(1 - 1 / (1 - q)) * (-1.0 / (1 - q) ** 2) * 2.0 * 1.0 / r ** 2
        exact = -4 * np.pi * dpsi
        assert abs(lhs - exact) < 1e-8 * abs(exact)
        assert abs(rhs - exact) < 1e-8 * abs(exact)

    def test_flat_interface_degeneracy(self, box, rng):
        # tangential density on a plane: shape-operator and normal terms die
        pl = box.plane_interface(0.0)
        tang = SurfaceField.from_world(
            lambda p: np.stack([p[:, 1], -p[:, 0], np.zeros(len(p))], axis=-1), 1)
        tang.interface = pl
        fd = FDist(pl, tang)
        psi = make_bump(box, [0.0, 0.1, 0.05], 0.4, rank=0, rng=rng)
        lhs = distributional_div(fd, psi)
        rhs = identity1_rhs(fd, psi)
        assert close(lhs.value, rhs.value)
        batch = pl.samples(50)
        f_vals = tang.value(batch)
        fn = np.einsum('ni,ni->n', f_vals, batch.normals)
        assert np.max(np.abs(fn)) < 1e-14
        assert np.max(np.abs(batch.shape_ops)) == 0.0


class TestCylinderInterface:
    def test_dual_path_on_cylinder_patch(self):
        from stressdist.geometry import (CylinderAnnulus,
                                         cylinder_patch_interface)
        from stressdist.equilibrium import _crossing_bump_geometry
        dom = CylinderAnnulus(0.5, 1.5, 2.0)
        itf = cylinder_patch_interface(dom, 1.0)
        rng = np.random.default_rng(9)
        c, r = _crossing_bump_geometry(dom, itf, rng)
        psi = make_bump(dom, c, r, rank=0, rng=rng, degree=2)
        for d in (CDist(itf, surface_polynomial(rng, 1, itf, degree=1)),
                  FDist(itf, surface_polynomial(rng, 1, itf, degree=1))):
            lhs = distributional_div(d, psi)
            rhs = identity1_rhs(d, psi)
            assert close(lhs.value, rhs.value), type(d).__name__


class TestIdentity2:
    def test_ball_reduces_to_interior(self, ball, sphere_half, rng):
        b = PiecewiseField(2, PolyField.random_symmetric(rng, 2),
                           PolyField.random_symmetric(rng, 2), sphere_half, 2.0)
        bd = BDist(ball, sphere_half, b)
        g = make_gradient_test_field(ball, [np.zeros(3)], rng=rng,
                                     center=np.zeros(3), radius=0.8,
                                     direction=np.array([1.0, 0, 0]))
        lhs = pair(bd, g)
        rhs = identity2_rhs(bd, g)
        assert close(lhs.value, rhs.value)

    def test_hessian_harmonic_boundary_term_vanishes(self, shell):
        from stressdist.fields import HessianInverseR
        field = HessianInverseR(1.0)
        batches = shell.boundary_components[1].quadrature(2)
        total = np.zeros(3)
        for bt in batches:
            tr = np.einsum('nij,nj->ni', field.value(bt.points), bt.normals)
            total += np.einsum('n,ni->i', bt.weights, tr)
        assert np.linalg.norm(total) < 1e-10

    def test_dual_path_shell_families(self, shell, shell_sphere, annulus, rng):
        g = make_gradient_test_field(shell,
                                     [np.zeros(3), rng.uniform(-1, 1, 3)])
        configs = [
            BDist(shell, shell_sphere,
                  PiecewiseField(2, PolyField.random_symmetric(rng, 2),
                                 PolyField.random_symmetric(rng, 2),
                                 shell_sphere, 4.0)),
            CDist(annulus, surface_polynomial(rng, 2, annulus, 2,
                                              symmetric=False)),
            FDist(annulus, surface_polynomial(rng, 2, annulus, 2,
                                              symmetric=False)),
        ]
        for d in configs:
            lhs = pair(d, g)
            rhs = identity2_rhs(d, g)
            assert close(lhs.value, rhs.value), type(d).__name__


class TestCurl:
    def test_gradient_field_is_curl_free(self, ball, rng):
        pot = Poly3.random(rng, 4)
        comp = np.array(pot.gradient_polys(), dtype=object)
        bd = BDist(ball, None,
                   PiecewiseField.smooth(PolyField(comp, rank=1), 1, 2.0))
        for k in range(20):
            c = _random_interior_center(ball, rng)
            psi = make_bump(ball, c, 0.25, rank=1, rng=rng)
            v = distributional_curl(bd, psi)
            assert abs(v.value) < max(1e-8, 10 * v.error)

    def test_rotation_field_curl(self, ball, rng):
        comp = np.array([Poly3([[0, 1, 0]], [-1.0]), Poly3([[1, 0, 0]], [1.0]),
                         Poly3.constant(0.0)], dtype=object)
        bd = BDist(ball, None,
                   PiecewiseField.smooth(PolyField(comp, rank=1), 1, 2.0))
        psi = make_bump(ball, [0.1, 0.1, 0.0], 0.5, rank=1, rng=rng)
        got = distributional_curl(bd, psi).value
        # smooth-field identity: pairs like curl b = (0, 0, 2) against psi
        ref = 2.0 * integrate_volume(ball, None,
                                     lambda p: psi.value(p)[:, 2], level=2).value
        assert abs(got - ref) < 1e-7 * max(1.0, abs(ref))

    def test_tensor_curl_of_column_gradients(self, ball, rng):
        # tensor Curl pairs through the transposed test curl, so densities
        # whose columns are gradients are annihilated
        pots = [Poly3.random(rng, 3) for _ in range(3)]
        comp = np.empty((3, 3), dtype=object)
        for j in range(3):
            g = pots[j].gradient_polys()
            for i in range(3):
                comp[i, j] = g[i]
        bd = BDist(ball, None, PiecewiseField.smooth(PolyField(comp, 2), 2, 2.0))
        psi = make_bump(ball, [0.0, 0.2, 0.1], 0.4, rank=2, rng=rng)
        v = distributional_curl(bd, psi)
        assert abs(v.value) < max(1e-7, 10 * v.error)


def _random_interior_center(ball, rng):
    while True:
        c = rng.uniform(-0.6, 0.6, 3)
        if ball.contains_ball(c, 0.25):
            return c


class TestMollification:
    def test_bulk_part_unchanged(self, ball, sphere_half, rng):
        b = PiecewiseField(1, PolyField.random_vector(rng, 2),
                           PolyField.random_vector(rng, 2), sphere_half, 2.0)
        bd = BDist(ball, sphere_half, b)
        psi = make_bump(ball, [0.45, 0.0, 0.1], 0.2, rank=1, rng=rng)
        exact = pair(bd, psi).value
        for rho in (0.05, 0.01):
            assert mollified_pair(bd, psi, rho, domain=ball).value == exact

    def test_plane_constant_second_order(self, box, rng):
        pl = box.plane_interface(0.0)
        cd = CDist(pl, SurfaceField.constant(np.array([0.5, 0.2, -1.0]), 1, pl))
        psi = make_bump(box, [0.1, 0.0, 0.05], 0.5, rank=1, rng=rng)
        tab = mollify_convergence(cd, psi, [0.08, 0.04, 0.02, 0.01], domain=box)
        assert tab.errors[-1] < tab.errors[0]
        assert tab.order > 1.9

    def test_tangential_plateau_is_exact(self, box):
        from stressdist.fields import PlateauFactor
        pl = box.plane_interface(0.0)
        tang = SurfaceField.constant(np.array([1.0, -0.5, 0.0]), 1, pl)
        cd = CDist(pl, tang)
        plateau = PlateauFactor(0.0, 0.25, 0.6)

        class DrumTest:
            # in-plane bump times a z-plateau: constant along the normal
            # near the interface
            rank = 1
            center = np.zeros(3)
            radius = 0.85

            def value(self, pts):
                q = (pts[:, 0] ** 2 + pts[:, 1] ** 2) / 0.55 ** 2
                val = np.zeros(len(pts))
                m = q < 1 - 1e-9
                val[m] = np.exp(1 - 1 / (1 - q[m]))
                out = val * plateau.value(pts)
                return np.stack([out, 0.5 * out, -0.2 * out], axis=-1)

        psi = DrumTest()
        exact = pair(cd, psi).value
        got1 = mollified_pair(cd, psi, 0.03, domain=box).value
        got2 = mollified_pair(cd, psi, 0.06, domain=box).value
        # the profile integrates out for a normal-constant test: the value is
        # independent of the width at machine level
        assert abs(got1 - got2) < 1e-8 * max(1.0, abs(exact))
        assert abs(got1 - exact) < 5e-5 * max(1.0, abs(exact))

    def test_rho_too_large(self, ball, sphere_half, rng):
        cd = CDist(sphere_half, surface_polynomial(rng, 1, sphere_half, 1))
        psi = make_bump(ball, [0.45, 0.0, 0.1], 0.2, rank=1, rng=rng)
        with pytest.raises(StressDistError):
            mollified_pair(cd, psi, 0.2, domain=ball)


class TestCauchyFlux:
    def test_disjoint_probe_converges_to_bulk_flux(self, big_ball,
                                                   unit_sphere, rng):
        bulk = PiecewiseField(2, PolyField.random_symmetric(rng, 2, 0.5),
                              PolyField.random_symmetric(rng, 2, 0.5),
                              unit_sphere, 4.0)
        comp = CompositeDist(b=BDist(big_ball, unit_sphere, bulk),
                             c=CDist(unit_sphere,
                                     normal_dyad([0, 0, 1.0], unit_sphere)))
        probe = sphere_interface(1.5)
        rep = cauchy_flux(comp, probe, [0.05, 0.025, 0.0125], domain=big_ball)
        assert rep.converged
        batch = probe.surface_quadrature(2)
        tr = np.einsum('nij,nj->ni', bulk.value(batch.points), batch.normals)
        ref = np.einsum('n,ni->i', batch.weights, tr)
        assert np.linalg.norm(rep.limit - ref) < 1e-8 * max(
            1.0, np.linalg.norm(ref))

    def test_coincident_probe_diverges(self, big_ball, unit_sphere):
        comp = CompositeDist(c=CDist(unit_sphere,
                                     normal_dyad([0, 0, 1.0], unit_sphere)))
        rep = cauchy_flux(comp, unit_sphere,
                          [0.05, 0.025, 0.0125, 0.00625], domain=big_ball)
        assert not rep.converged
        assert abs(rep.divergence_slope + 1.0) < 0.1


class TestExports:
    def test_pairing_table_rows(self, ball, sphere_half, rng):
        cd = CDist(sphere_half, surface_polynomial(rng, 1, sphere_half, 1))
        tests = [make_bump(ball, [0.45, 0.0, 0.1], 0.2, rank=1, rng=rng)
                 for _ in range(3)]
        from stressdist.distributions import pairing_table
        rows = pairing_table(cd, tests)
        assert len(rows) == 3
        for j, value, err in rows:
            assert isinstance(j, int) and err >= 0.0

    def test_fdist_mollification_order(self, box, rng):
        pl = box.plane_interface(0.0)
        fd = FDist(pl, SurfaceField.constant(np.diag([1.0, -0.5, 0.2]), 2, pl))
        psi = make_bump(box, [0.1, 0.0, 0.05], 0.5, rank=2, rng=rng, degree=1)
        tab = mollify_convergence(fd, psi, [0.08, 0.04, 0.02], domain=box)
        assert tab.errors[-1] < tab.errors[0]
        assert tab.order >= 1.0


class TestTrivialCurlPairings:
    def test_curl_pairs_to_zero_against_gradient_tests(self, ball, rng):
        # curl of a gradient-type vector test vanishes identically, so the
        # curl pairing is exactly zero before any quadrature
        from stressdist.distributions import CurlTest
        b = PiecewiseField.smooth(
            PolyField.random_vector(np.random.default_rng(2), 2), 1, 2.0)
        bd = BDist(ball, None, b)
        base = make_bump(ball, [0.2, 0.0, 0.1], 0.4, rank=0, rng=rng)

        class GradOfScalar:
            rank = 1
            center, radius = base.center, base.radius

            def value(self, pts):
                return base.gradient(pts)

            def gradient(self, pts):
                return base.hessian(pts)

        v = distributional_curl(bd, GradOfScalar())
        assert abs(v.value) < 1e-12
