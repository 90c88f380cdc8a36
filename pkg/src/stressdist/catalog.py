"""Named geometry, field, and scenario builders addressable from configs.

Everything the CLI can reference by name lives here, so tests and scenario
files construct the exact same objects.
"""

from __future__ import annotations

import numpy as np

from . import _tensor as T
from .equilibrium import DilatationalData, EquilibriumScenario, Tolerances
from .errors import ConfigError
from .fields import (ConstantField, HessianInverseR, KelvinStressField,
                     PiecewiseField, PolyField, Poly3, SurfaceField,
                     dilatational_surface, normal_dyad, surface_polynomial,
                     uniform_tension)
from .geometry import (Ball, Box, CylinderAnnulus, SphericalShell,
                       cylinder_patch_interface, equatorial_annulus_interface,
                       plane_disk_interface, sphere_interface)
from .stressfn import StressFunction


def build_domain(cfg):
    kind = cfg.get("kind")
    if kind == "ball":
        return Ball(cfg["radius"])
    if kind == "spherical-shell":
        return SphericalShell(cfg["inner_radius"], cfg["outer_radius"])
    if kind == "box":
        return Box(cfg["half_widths"])
    if kind == "cylinder-annulus":
        return CylinderAnnulus(cfg["inner_radius"], cfg["outer_radius"],
                               cfg["height"])
    raise ConfigError(f"unknown domain kind {kind!r}")


def build_interface(cfg, domain):
    if cfg is None:
        return None
    kind = cfg.get("kind")
    if kind == "sphere":
        return sphere_interface(cfg["radius"])
    if kind == "plane-disk":
        return plane_disk_interface(domain, cfg.get("z", 0.0))
    if kind == "plane-rect":
        return domain.plane_interface(cfg.get("z", 0.0))
    if kind == "equatorial-annulus":
        return equatorial_annulus_interface(domain)
    if kind == "cylinder-patch":
        return cylinder_patch_interface(domain, cfg["radius"])
    raise ConfigError(f"unknown interface kind {kind!r}")


# ---------------------------------------------------------------------------
# bulk fields


def _pressure_side(p):
    return ConstantField(p * T.I3, rank=2)


def build_bulk_tensor(cfg, domain, interface):
    kind = cfg.get("kind")
    L = domain.length_scale
    if kind == "zero":
        return None
    if kind == "uniform-pressure":
        return PiecewiseField(2, _pressure_side(cfg["p_plus"]),
                              _pressure_side(cfg["p_minus"]), interface, L)
    if kind == "kelvin":
        return PiecewiseField.smooth(
            KelvinStressField(cfg["force"], cfg.get("nu", 0.25)), 2, L)
    if kind == "hessian-harmonic":
        return PiecewiseField.smooth(
            HessianInverseR(cfg.get("amplitude", 1.0)), 2, L)
    if kind == "constant":
        return PiecewiseField.smooth(
            ConstantField(np.asarray(cfg["value"], dtype=float), 2), 2, L)
    if kind == "piecewise-polynomial":
        rng = np.random.default_rng(cfg["seed"])
        deg = cfg.get("degree", 3)
        scale = cfg.get("scale", 1.0)
        plus = PolyField.random_symmetric(rng, deg, scale)
        minus = PolyField.random_symmetric(rng, deg, scale)
        return PiecewiseField(2, plus, minus, interface, L)
    if kind == "radial-pressure":
        plus = _radial_pressure_field(cfg["coeffs_plus"])
        if interface is None or "coeffs_minus" not in cfg:
            return PiecewiseField(2, plus, None, interface, L)
        minus = _radial_pressure_field(cfg["coeffs_minus"])
        return PiecewiseField(2, plus, minus, interface, L)
    raise ConfigError(f"unknown bulk stress kind {kind!r}")


def _radial_pressure_field(coeffs):
    """p(r) I with p an even radial polynomial sum c_k r^(2k), exact
    derivatives."""
    r2 = Poly3([[2, 0, 0], [0, 2, 0], [0, 0, 2]], [1.0, 1.0, 1.0])
    p = Poly3.constant(0.0)
    power = Poly3.constant(1.0)
    for c in coeffs:
        p = p + power.scaled(float(c))
        power = _poly_times(power, r2)
    comp = np.empty((3, 3), dtype=object)
    for i in range(3):
        for j in range(3):
            comp[i, j] = p if i == j else Poly3.constant(0.0)
    return PolyField(comp, rank=2)


def _poly_times(a, b):
    exps = (a.exps[:, None, :] + b.exps[None, :, :]).reshape(-1, 3)
    coefs = (a.coefs[:, None] * b.coefs[None, :]).ravel()
    return Poly3(exps, coefs)


def build_bulk_vector(cfg, domain, interface):
    kind = cfg.get("kind")
    L = domain.length_scale
    if kind == "zero":
        return None
    if kind == "constant-vector":
        return PiecewiseField.smooth(
            ConstantField(np.asarray(cfg["value"], dtype=float), 1), 1, L)
    if kind == "piecewise-polynomial":
        rng = np.random.default_rng(cfg["seed"])
        deg = cfg.get("degree", 3)
        plus = PolyField.random_vector(rng, deg, cfg.get("scale", 1.0))
        minus = PolyField.random_vector(rng, deg, cfg.get("scale", 1.0))
        return PiecewiseField(1, plus, minus, interface, L)
    if kind == "gradient":        # curl-free bulk field for curl checks
        rng = np.random.default_rng(cfg["seed"])
        pot = Poly3.random(rng, cfg.get("degree", 4))
        comp = np.array(pot.gradient_polys(), dtype=object)
        return PiecewiseField.smooth(PolyField(comp, rank=1), 1, L)
    raise ConfigError(f"unknown bulk force kind {kind!r}")


# ---------------------------------------------------------------------------
# surface fields


def build_surface_tensor(cfg, interface):
    kind = cfg.get("kind")
    if kind == "zero":
        return None
    if kind == "uniform-tension":
        return uniform_tension(cfg["gamma"], interface)
    if kind == "dilatational":
        return dilatational_surface(cfg["p"], interface)
    if kind == "normal-dyad":
        return normal_dyad(np.asarray(cfg["a"], dtype=float), interface)
    if kind == "constant":
        return SurfaceField.constant(np.asarray(cfg["value"], dtype=float), 2,
                                     interface)
    if kind == "polynomial":
        rng = np.random.default_rng(cfg["seed"])
        return surface_polynomial(rng, 2, interface, cfg.get("degree", 2),
                                  scale=cfg.get("scale", 1.0))
    raise ConfigError(f"unknown surface stress kind {kind!r}")


def build_surface_vector(cfg, interface):
    kind = cfg.get("kind")
    if kind == "zero":
        return None
    if kind == "constant-vector":
        return SurfaceField.constant(np.asarray(cfg["value"], dtype=float), 1,
                                     interface)
    if kind == "matched-dipole":
        p2 = float(cfg["p2"])

        def ev(batch):
            return p2 * batch.kappa[:, None] * batch.normals

        return SurfaceField(ev, 1, interface)
    if kind == "polynomial":
        rng = np.random.default_rng(cfg["seed"])
        return surface_polynomial(rng, 1, interface, cfg.get("degree", 2),
                                  scale=cfg.get("scale", 1.0))
    raise ConfigError(f"unknown surface force kind {kind!r}")


# ---------------------------------------------------------------------------
# equilibrium scenario presets


def soap_film(domain, interface, gamma, pressure_jump, tolerances=None):
    """Constant-pressure sides with uniform surface tension on a sphere.

    Equilibrated exactly when pressure_jump (toward-side minus away-side)
    equals kappa * gamma.
    """
    L = domain.length_scale
    p = PiecewiseField(0, ConstantField(pressure_jump, 0),
                       ConstantField(0.0, 0), interface, L)
    sigma = PiecewiseField(2, _pressure_side(pressure_jump),
                           _pressure_side(0.0), interface, L)
    return EquilibriumScenario(
        domain=domain, interface=interface, sigma=sigma,
        sigma1=uniform_tension(gamma, interface),
        dilatational=DilatationalData(p=p, p1=gamma, p2=0.0),
        tolerances=tolerances or Tolerances(), name="soap-film")


def dilatational_dipole(domain, interface, gamma, p2, tolerances=None):
    """Soap film plus a constant dilatational dipole with its matched
    normal body-force dipole; equilibrated by construction on a sphere."""
    a = interface.params["radius"]
    kappa = 2.0 / a
    jump = kappa * gamma - 2.0 * p2 / a ** 2
    scn = soap_film(domain, interface, gamma, jump, tolerances)
    scn.sigma2 = dilatational_surface(p2, interface)
    scn.b2 = build_surface_vector({"kind": "matched-dipole", "p2": p2}, interface)
    scn.dilatational = DilatationalData(p=scn.dilatational.p, p1=gamma, p2=p2)
    scn.name = "dilatational-dipole"
    return scn


def kelvin_scenario(domain, force=(0.0, 0.0, 1.0), nu=0.25):
    """Smooth divergence-free stress with nonzero net flux: no stress function."""
    sigma = PiecewiseField.smooth(KelvinStressField(force, nu), 2,
                                  domain.length_scale)
    return EquilibriumScenario(domain=domain, interface=None, sigma=sigma,
                               name="kelvin")


def flat_tension(domain, interface, gamma, tolerances=None):
    """Uniform tension on a flat interface: equilibrated with zero jump."""
    L = domain.length_scale
    p = PiecewiseField(0, ConstantField(0.0, 0), ConstantField(0.0, 0),
                       interface, L)
    sigma = PiecewiseField(2, _pressure_side(0.0), _pressure_side(0.0),
                           interface, L)
    return EquilibriumScenario(
        domain=domain, interface=interface, sigma=sigma,
        sigma1=uniform_tension(gamma, interface),
        dilatational=DilatationalData(p=p, p1=gamma, p2=0.0),
        tolerances=tolerances or Tolerances(), name="flat-tension")


def build_scenario_fields(cfg, domain, interface, tolerances=None):
    """Equilibrium scenario from a preset name or explicit field blocks."""
    preset = cfg.get("preset")
    if preset == "soap-film":
        scn = soap_film(domain, interface, cfg["gamma"], cfg["pressure_jump"],
                        tolerances)
    elif preset == "dilatational-dipole":
        scn = dilatational_dipole(domain, interface, cfg["gamma"], cfg["p2"],
                                  tolerances)
    elif preset == "flat-tension":
        scn = flat_tension(domain, interface, cfg["gamma"], tolerances)
    elif preset == "kelvin":
        scn = kelvin_scenario(domain, cfg.get("force", (0, 0, 1)),
                              cfg.get("nu", 0.25))
    elif preset is None:
        scn = EquilibriumScenario(
            domain=domain, interface=interface,
            sigma=build_bulk_tensor(cfg.get("sigma", {"kind": "zero"}),
                                    domain, interface),
            sigma1=build_surface_tensor(cfg.get("sigma1", {"kind": "zero"}),
                                        interface),
            sigma2=build_surface_tensor(cfg.get("sigma2", {"kind": "zero"}),
                                        interface),
            b=build_bulk_vector(cfg.get("b", {"kind": "zero"}), domain, interface),
            b1=build_surface_vector(cfg.get("b1", {"kind": "zero"}), interface),
            b2=build_surface_vector(cfg.get("b2", {"kind": "zero"}), interface),
            tolerances=tolerances or Tolerances())
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    if tolerances is not None:
        scn.tolerances = tolerances
    return scn


def build_potential(cfg, domain, interface):
    kind = cfg.get("kind")
    L = domain.length_scale
    if kind == "piecewise-polynomial":
        rng = np.random.default_rng(cfg["seed"])
        deg = cfg.get("degree", 4)
        scale = cfg.get("scale", 1.0)
        plus = PolyField.random_symmetric(rng, deg, scale)
        minus = PolyField.random_symmetric(rng, deg, scale)
        return StressFunction(plus, minus, interface, L)
    if kind == "smooth-polynomial":
        rng = np.random.default_rng(cfg["seed"])
        f = PolyField.random_symmetric(rng, cfg.get("degree", 4),
                                       cfg.get("scale", 1.0))
        return StressFunction(f, None, interface, L) if interface is not None \
            else StressFunction.smooth(f, L)
    if kind == "airy":
        # planar potential f(x1, x2) e3 (x) e3: generates an in-plane stress
        terms = cfg["terms"]            # list of [i, j, coef]
        f = Poly3([[int(i), int(j), 0] for i, j, _ in terms],
                  [float(c) for _, _, c in terms])
        comp = np.empty((3, 3), dtype=object)
        for a in range(3):
            for b in range(3):
                comp[a, b] = f if (a == 2 and b == 2) else Poly3.constant(0.0)
        pf = PolyField(comp, rank=2)
        return StressFunction(pf, None, interface, L) if interface is not None \
            else StressFunction.smooth(pf, L)
    raise ConfigError(f"unknown potential kind {kind!r}")


def random_stress_function(rng, interface, domain, degree=4, scale=1.0):
    plus = PolyField.random_symmetric(rng, degree, scale)
    minus = PolyField.random_symmetric(rng, degree, scale)
    return StressFunction(plus, minus, interface, domain.length_scale)
