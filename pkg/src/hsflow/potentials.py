"""Example Kähler potentials on the sphere and the radial flow oracle.

* ``zero``: ``phi = 0``, so ``omega_phi = omega_FS``.
* ``radial``: ``omega_phi = m(|z|) omega_FS`` with a smooth positive density
  ``m`` normalized to total mass 1.  Everything reduces to one variable
  ``s = |z|^2 / (1 + |z|^2)``, the ``omega_FS`` area of the disc of radius
  ``|z|``, and the flow is known in closed form up to 1-D quadrature.
* ``dumbbell``: a density ``f`` vanishing on a tube around the circle
  ``gamma = {|z - a| = a}`` through the origin, with one lobe inside and one
  outside ``gamma`` carrying half the mass each; ``phi = phi_f / (1 + eps)``.
  Fluid injected at the origin runs round the cheap tube and encloses the
  inner lobe before filling it, so the flow domain stops being simply
  connected for a while.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .envelope import check_kahler
from .geometry import (CHARTS, Atlas, ChartField, MeasureField, SphereMask, fs_measure,
                       integrate_measure, solve_poisson)

VARIANTS = ("zero", "radial", "dumbbell", "custom")


class SpecError(ValueError):
    """Malformed potential specification."""


@dataclass
class RadialParams:
    """Density ``m = (1 + amp * exp(-((|z|^2 - center) / width)^2)) / N``."""

    amp: float = 2.0
    center: float = 1.0
    width: float = 0.5


@dataclass
class DumbbellParams:
    """Geometry of the dumbbell density.

    ``a``: radius of ``gamma`` (centred at ``a``); ``tube``: half-width of the
    zero-density tube around ``gamma``; ``inner_radius``: support radius of
    the raised-cosine bump centred at ``a``; ``ramp``: width over which the
    outer density rises to its constant value; ``eps``: the final scaling
    ``phi = phi_f / (1 + eps)``.
    """

    a: float = 0.6
    tube: float = 0.12
    inner_radius: float = 0.4
    ramp: float = 0.3
    eps: float = 0.05


@dataclass
class PotentialSpec:
    variant: str = "zero"
    radial: RadialParams = field(default_factory=RadialParams)
    dumbbell: DumbbellParams = field(default_factory=DumbbellParams)
    grid_file: Optional[str] = None
    field_name: Optional[str] = None
    n: Optional[int] = None
    extent: Optional[float] = None
    perturb_amplitude: float = 0.0
    perturb_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown potential variant {self.variant!r}; expected one of {VARIANTS}")
        if isinstance(self.radial, dict):
            self.radial = RadialParams(**self.radial)
        if isinstance(self.dumbbell, dict):
            self.dumbbell = DumbbellParams(**self.dumbbell)
        if self.variant == "custom" and not self.grid_file:
            raise SpecError("custom potentials need 'grid_file'")
        if self.perturb_amplitude < 0:
            raise SpecError("perturb_amplitude must be non-negative")

    @classmethod
    def from_json(cls, text: str) -> "PotentialSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"potential spec is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise SpecError("potential spec must be a JSON object")
        try:
            return cls(**data)
        except TypeError as exc:
            raise SpecError(f"bad potential spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# ---------------------------------------------------------------------------
# radial potentials


class RadialProfile:
    """Tabulated radial potential with density ``m(s)`` in the area variable ``s``.

    ``M(s) = int_0^s m`` is the ``omega_phi`` area of the disc ``|z|^2 <= s/(1-s)``
    and ``phi(s) = int_0^s (M - sigma) / (sigma (1 - sigma)) d sigma``.
    """

    def __init__(self, params: RadialParams, samples: int = 200001):
        self.params = params
        s = np.linspace(0.0, 1.0, samples)
        raw = self._raw_density(s)
        mass = integrate.cumulative_trapezoid(raw, s, initial=0.0)
        self.norm = mass[-1]
        self.s = s
        self.M = mass / self.norm
        integrand = np.empty_like(s)
        inner = (s > 0) & (s < 1)
        integrand[inner] = (self.M[inner] - s[inner]) / (s[inner] * (1 - s[inner]))
        integrand[0] = raw[0] / self.norm - 1.0
        integrand[-1] = 1.0 - raw[-1] / self.norm
        self.phi_s = integrate.cumulative_trapezoid(integrand, s, initial=0.0)

    def _raw_density(self, s):
        p = self.params
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            x = s / (1.0 - s)
            bump = np.where(np.isfinite(x), np.exp(-((x - p.center) / p.width) ** 2), 0.0)
        return 1.0 + p.amp * bump

    def density(self, s):
        return self._raw_density(np.asarray(s, float)) / self.norm

    def mass(self, s):
        return np.interp(s, self.s, self.M)

    def phi(self, s):
        return np.interp(s, self.s, self.phi_s)

    def area_variable(self, z):
        """``s = |z|^2 / (1 + |z|^2)``; ``inf`` maps to 1."""
        r2 = np.abs(np.asarray(z, dtype=complex)) ** 2
        with np.errstate(invalid="ignore"):
            return np.where(np.isinf(r2), 1.0, r2 / (1.0 + r2))

    def field(self, atlas: Atlas) -> ChartField:
        def fw(w):
            r2 = np.abs(w) ** 2
            return self.phi(1.0 / (1.0 + r2))

        return ChartField.from_callables(atlas, lambda z: self.phi(self.area_variable(z)), fw, name="phi")


class ZeroProfile(RadialProfile):
    """``phi = 0`` written as a radial profile with ``m = 1``."""

    def __init__(self):
        self.params = None
        self.norm = 1.0
        self.s = np.array([0.0, 1.0])
        self.M = self.s.copy()
        self.phi_s = np.zeros(2)

    def density(self, s):
        return np.ones_like(np.asarray(s, float))


@dataclass
class RadialOracle:
    """Closed-form radial flow at one time."""

    t: float
    radius: float
    constant: float
    profile: RadialProfile

    def psi(self, z) -> np.ndarray:
        """``psi_t(z)``: ``t log|z|^2 - log(1+|z|^2) + C`` inside, ``phi`` outside."""
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        s = self.profile.area_variable(z)
        out = self.profile.phi(s).astype(float)
        inside = r < self.radius
        with np.errstate(divide="ignore"):
            out[inside] = (self.t * np.log(r[inside] ** 2) - np.log1p(r[inside] ** 2) + self.constant)
        return out


def radial_profile(spec: PotentialSpec) -> RadialProfile:
    if spec.variant == "zero":
        return ZeroProfile()
    if spec.variant == "radial":
        return RadialProfile(spec.radial)
    raise SpecError(f"variant {spec.variant!r} is not radial")


def radial_flow_oracle(spec_or_profile, t: float) -> RadialOracle:
    """Radius of ``Omega_t`` from ``M(s) = t`` and the matched envelope profile."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time must lie in [0, 1], got {t}")
    prof = spec_or_profile if isinstance(spec_or_profile, RadialProfile) else radial_profile(spec_or_profile)
    if t == 0.0:
        return RadialOracle(0.0, 0.0, 0.0, prof)
    if t == 1.0:
        return RadialOracle(1.0, np.inf, prof.phi(1.0), prof)
    if isinstance(prof, ZeroProfile):
        s_t = t
    else:
        s_t = optimize.brentq(lambda s: prof.mass(s) - t, 0.0, 1.0, xtol=1e-15)
    r2 = s_t / (1.0 - s_t)
    c = float(prof.phi(s_t)) + np.log1p(r2) - t * np.log(r2)
    return RadialOracle(float(t), float(np.sqrt(r2)), c, prof)


# ---------------------------------------------------------------------------
# dumbbell


def _raised_cosine(rho):
    rho = np.clip(rho, 0.0, 1.0)
    return (0.5 * (1.0 + np.cos(np.pi * rho))) ** 2


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10 - 15 * x + 6 * x ** 2)


@dataclass
class Dumbbell:
    """The dumbbell density, its lobes, and the resulting potential."""

    atlas: Atlas
    params: DumbbellParams

    def _on_sphere(self, fn) -> ChartField:
        def fw(w):
            with np.errstate(divide="ignore", invalid="ignore"):
                z = 1.0 / w
            return fn(z)

        return ChartField.from_callables(self.atlas, fn, fw)

    def inner_shape(self, z):
        p = self.params
        d = np.abs(z - p.a)
        return np.where(np.isfinite(d), _raised_cosine(d / p.inner_radius), 0.0)

    def outer_shape(self, z):
        p = self.params
        d = np.abs(z - p.a)
        return np.where(np.isfinite(d), _smoothstep((d - p.a - p.tube) / p.ramp), 1.0)

    def lobe_masks(self):
        p = self.params
        u1 = SphereMask.from_predicate(self.atlas, lambda z: np.abs(z - p.a) < p.a - p.tube)
        u2 = SphereMask.from_predicate(self.atlas, lambda z: ~(np.abs(z - p.a) <= p.a + p.tube))
        return u1, u2

    def gamma_mask(self, width: float) -> SphereMask:
        p = self.params
        return SphereMask.from_predicate(self.atlas, lambda z: np.abs(np.abs(z - p.a) - p.a) < width)

    @cached_property
    def density(self) -> ChartField:
        """``f`` scaled so each lobe carries half the discrete ``omega_FS`` mass."""
        p = self.params
        if not (0 < p.inner_radius <= p.a - p.tube and p.tube > 0 and p.eps > 0 and p.ramp > 0):
            raise SpecError("dumbbell needs 0 < inner_radius <= a - tube, tube > 0, ramp > 0, eps > 0")
        fs = fs_measure(self.atlas)
        half = 0.5 * fs.total()
        f_in = self._on_sphere(self.inner_shape)
        f_out = self._on_sphere(self.outer_shape)
        m_in = fs.times(f_in).total()
        m_out = fs.times(f_out).total()
        if m_in <= 0 or m_out <= 0:
            raise SpecError("dumbbell lobes carry no mass at this resolution")
        f = f_in.scaled(half / m_in) + f_out.scaled(half / m_out)
        f.name = "f"
        return f

    def lobe_masses(self):
        m = fs_measure(self.atlas).times(self.density)
        u1, u2 = self.lobe_masks()
        return integrate_measure(m, u1), integrate_measure(m, u2)

    @cached_property
    def phi_f(self) -> ChartField:
        rhs = fs_measure(self.atlas).times(self.density)
        return solve_poisson(rhs)

    def potential(self) -> ChartField:
        phi = self.phi_f.scaled(1.0 / (1.0 + self.params.eps))
        phi.name = "phi"
        return phi


# ---------------------------------------------------------------------------
# perturbations


def c2_norm(field: ChartField) -> float:
    """``max|p| + max|grad p| + max|D^2 p|`` by centred differences on both charts."""
    g = field.global_part()
    h = field.atlas.h
    c0 = c1 = c2 = 0.0
    for c in CHARTS:
        v = g[c]
        inner = field.atlas[c].interior.copy()
        # centred second differences need the neighbours' neighbours inside too
        sl = (slice(1, -1), slice(1, -1))
        core = np.zeros_like(inner)
        core[sl] = inner[sl] & inner[1:-1, 2:] & inner[1:-1, :-2] & inner[2:, 1:-1] & inner[:-2, 1:-1]
        dx = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h)
        dy = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h)
        dxx = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h ** 2
        dyy = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h ** 2
        dxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h * h)
        k = core[sl]
        c0 = max(c0, float(np.nanmax(np.abs(v[field.atlas[c].active]))))
        c1 = max(c1, float(np.max(np.hypot(dx, dy)[k])))
        c2 = max(c2, float(np.max(np.maximum(np.maximum(np.abs(dxx), np.abs(dyy)), np.abs(dxy))[k])))
    return c0 + c1 + c2


def bump_sum(atlas: Atlas, seed: int, count: int = 6, width: float = 0.6) -> ChartField:
    """Seeded sum of Gaussian bumps in chordal distance (smooth on the sphere)."""
    rng = np.random.default_rng(seed)
    # centres uniform on the sphere via stereographic projection
    v = rng.standard_normal((count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    centers = (v[:, 0] + 1j * v[:, 1]) / (1.0 - v[:, 2])
    weights = rng.standard_normal(count)

    def chordal2(z, c):
        with np.errstate(invalid="ignore", divide="ignore"):
            d2 = 4 * np.abs(z - c) ** 2 / ((1 + np.abs(z) ** 2) * (1 + abs(c) ** 2))
        return np.where(np.isinf(z), 4.0 / (1 + abs(c) ** 2), d2)

    def fz(z):
        return sum(wk * np.exp(-chordal2(z, ck) / width ** 2) for wk, ck in zip(weights, centers))

    def fw(w):
        with np.errstate(divide="ignore"):
            z = np.where(w == 0, np.inf, 1.0 / np.where(w == 0, 1.0, w))
        return fz(z)

    return ChartField.from_callables(atlas, fz, fw, name=f"bumps(seed={seed})")


def perturb(phi: ChartField, amplitude: float, seed: int) -> ChartField:
    """Add a seeded bump sum whose measured C^2 norm equals ``amplitude``."""
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    phi = phi.global_part()
    if amplitude == 0:
        return phi.copy()
    bumps = bump_sum(phi.atlas, seed)
    p = bumps.scaled(amplitude / c2_norm(bumps))
    out = phi + p
    out.name = f"{phi.name}+perturbation"
    try:
        check_kahler(out)
    except ValueError as exc:
        raise ValueError(f"perturbation of C^2 size {amplitude} destroys positivity; "
                         f"try a smaller amplitude ({exc})") from exc
    return out


# ---------------------------------------------------------------------------


def make_potential(spec: PotentialSpec, atlas: Atlas) -> ChartField:
    """Realize ``spec`` on ``atlas`` and verify positivity of ``omega_phi``."""
    if spec.variant == "zero":
        phi = ChartField.constant(atlas, 0.0, name="phi")
    elif spec.variant == "radial":
        phi = RadialProfile(spec.radial).field(atlas)
    elif spec.variant == "dumbbell":
        phi = Dumbbell(atlas, spec.dumbbell).potential()
    else:
        from .io import read_grid

        gf = read_grid(spec.grid_file)
        name = spec.field_name or gf.names[0]
        phi = gf.field(name)
        if phi.atlas != atlas:
            raise SpecError(f"grid file is on {phi.atlas}, requested {atlas}")
    if spec.perturb_amplitude:
        phi = perturb(phi, spec.perturb_amplitude, spec.perturb_seed)
    check_kahler(phi)
    phi.name = "phi"
    return phi
