"""Thermodynamic closure for an N-species isothermal compressible mixture.

The pressure is a function of a scalar "volume extension" of the mixture,

    p = G(L(rho)),    L positively homogeneous of degree one,

with G strictly increasing.  In number-density variables n_i = rho_i/m_i the
extension reads L(rho) = n_tot * H(n_1/n_tot, ..., n_N/n_tot), so the
supported forms are a direct linear combination of the rho_i or an H-average
of number fractions (identity, linear in reference volumes, or a power
mean).  From G one builds the mixing free energy density

    h(rho) = h_M(L(rho)),   h_M(s) = s * int_{s0}^{s} G(t)/t^2 dt + const,

whose gradient gives the chemical potentials mu_i = h_M'(L) dL/drho_i.  The
closure satisfies two exact identities that double as self-tests:
homogeneity forces the Euler relation L'(rho).rho = L(rho), and the
construction of h_M forces s h_M'(s) - h_M(s) = G(s), which together yield
the Gibbs-Duhem form p = -h + sum_i rho_i mu_i.

All evaluation functions broadcast over trailing axes: rho may be a single
(N,) state or an (N, nx[, ny]) field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


@dataclass(frozen=True)
class SpeciesSet:
    """Species count plus per-particle masses and optional reference volumes."""

    molecular_masses: tuple[float, ...]
    reference_volumes: tuple[float, ...] | None = None

    def __post_init__(self):
        masses = tuple(float(m) for m in self.molecular_masses)
        object.__setattr__(self, "molecular_masses", masses)
        if len(masses) < 1:
            raise ValueError("need at least one species")
        if any(m <= 0 for m in masses):
            raise ValueError(f"molecular masses must be positive, got {masses}")
        if self.reference_volumes is not None:
            vols = tuple(float(v) for v in self.reference_volumes)
            object.__setattr__(self, "reference_volumes", vols)
            if len(vols) != len(masses):
                raise ValueError("reference volumes must match species count")
            if any(v <= 0 for v in vols):
                raise ValueError("reference volumes must be positive")

    @property
    def n_species(self) -> int:
        return len(self.molecular_masses)


class PowerLaw:
    """Pressure law G(s) = c0 * s**alpha with c0 > 0 and alpha >= 1.

    alpha >= 1 keeps s -> s G'(s) smooth up to s = 0, which the implicit
    diffusion solve relies on; alpha < 1 is therefore rejected outright.
    """

    def __init__(self, c0: float = 1.0, alpha: float = 1.0):
        if c0 <= 0:
            raise ValueError(f"pressure coefficient c0 must be positive, got {c0}")
        if alpha < 1.0:
            raise ValueError(
                f"pressure exponent alpha must be >= 1 (s*G'(s) must remain "
                f"smooth and increasing down to s=0), got {alpha}"
            )
        self.c0 = float(c0)
        self.alpha = float(alpha)

    def __repr__(self):
        return f"PowerLaw(c0={self.c0}, alpha={self.alpha})"

    def g(self, s):
        return self.c0 * np.power(s, self.alpha)

    def dg(self, s):
        return self.c0 * self.alpha * np.power(s, self.alpha - 1.0)

    def d2g(self, s):
        a = self.alpha
        return self.c0 * a * (a - 1.0) * np.power(s, a - 2.0)

    def g_inv(self, p):
        return np.power(np.asarray(p, dtype=float) / self.c0, 1.0 / self.alpha)

    def free_energy_integral(self, s, s0):
        """Closed form of int_{s0}^{s} G(t)/t^2 dt."""
        a = self.alpha
        s = np.asarray(s, dtype=float)
        if a == 1.0:
            return self.c0 * np.log(s / s0)
        return self.c0 * (np.power(s, a - 1.0) - s0 ** (a - 1.0)) / (a - 1.0)


def _quad_free_energy_integral(law, s, s0):
    # adaptive Gauss-Kronrod fallback for laws without a closed form
    def f(t):
        return law.g(t) / t**2

    flat = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.array([quad(f, s0, si, epsabs=1e-12, epsrel=1e-12)[0] for si in flat])
    return out.reshape(np.shape(s))


# ---------------------------------------------------------------------------
# volume extensions


class LinearCombination:
    """L(rho) = sum_i c_i rho_i with positive coefficients."""

    is_linear = True

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size < 1:
            raise ValueError("coefficient vector must be 1D and nonempty")
        if np.any(self.coeffs <= 0):
            raise ValueError(f"extension coefficients must be positive, got {self.coeffs}")

    @property
    def n_species(self) -> int:
        return self.coeffs.size

    def __repr__(self):
        return f"LinearCombination({list(self.coeffs)})"

    def value(self, rho):
        return np.tensordot(self.coeffs, rho, axes=(0, 0))

    def gradient(self, rho):
        rho = np.asarray(rho, dtype=float)
        shape = (self.coeffs.size,) + rho.shape[1:]
        return np.broadcast_to(self.coeffs.reshape((-1,) + (1,) * (rho.ndim - 1)), shape).copy()

    def sandwich_bounds(self):
        n = self.coeffs.size
        return float(np.min(self.coeffs)), float(np.max(self.coeffs) * np.sqrt(n))


class NumberDensityForm:
    """L(rho) = n_tot * H(X) expressed through n_i = rho_i / m_i.

    h_kind selects H: "unit" (H == 1, so L = n_tot), "linear" (H = sum V_i X_i)
    or "power_mean" (H = (sum X_i**a)**(1/a), a >= 1), the last giving
    L(rho) = ||n||_a, the a-norm of the number densities.
    """

    def __init__(self, masses, h_kind="unit", volumes=None, alpha_h=None):
        self.masses = np.asarray(masses, dtype=float)
        if np.any(self.masses <= 0):
            raise ValueError("molecular masses must be positive")
        self.h_kind = h_kind
        if h_kind == "unit":
            self._coeffs = 1.0 / self.masses
        elif h_kind == "linear":
            if volumes is None:
                raise ValueError("linear H needs reference volumes")
            vols = np.asarray(volumes, dtype=float)
            if vols.shape != self.masses.shape or np.any(vols <= 0):
                raise ValueError("reference volumes must be positive, one per species")
            self.volumes = vols
            self._coeffs = vols / self.masses
        elif h_kind == "power_mean":
            if alpha_h is None or alpha_h < 1.0:
                raise ValueError("power-mean exponent must be >= 1")
            self.alpha_h = float(alpha_h)
            self._coeffs = None
        else:
            raise ValueError(f"unknown H kind {h_kind!r}")

    @property
    def is_linear(self) -> bool:
        return self.h_kind in ("unit", "linear") or getattr(self, "alpha_h", None) == 1.0

    @property
    def n_species(self) -> int:
        return self.masses.size

    def __repr__(self):
        extra = f", alpha_h={self.alpha_h}" if self.h_kind == "power_mean" else ""
        return f"NumberDensityForm(masses={list(self.masses)}, h_kind={self.h_kind!r}{extra})"

    def _n(self, rho):
        m = self.masses.reshape((-1,) + (1,) * (np.ndim(rho) - 1))
        return np.asarray(rho, dtype=float) / m

    def value(self, rho):
        if self._coeffs is not None:
            return np.tensordot(self._coeffs, rho, axes=(0, 0))
        n = self._n(rho)
        a = self.alpha_h
        if a == 1.0:
            return np.sum(n, axis=0)
        return np.power(np.sum(np.power(n, a), axis=0), 1.0 / a)

    def gradient(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self._coeffs is not None:
            shape = (self.masses.size,) + rho.shape[1:]
            return np.broadcast_to(
                self._coeffs.reshape((-1,) + (1,) * (rho.ndim - 1)), shape
            ).copy()
        if np.any(rho <= 0):
            raise ValueError(
                "power-mean extension is not differentiable where a component vanishes"
            )
        a = self.alpha_h
        n = self._n(rho)
        if a == 1.0:
            return self.gradient_linear_like(rho)
        lam = np.power(np.sum(np.power(n, a), axis=0), 1.0 / a)
        m = self.masses.reshape((-1,) + (1,) * (rho.ndim - 1))
        return np.power(n / lam, a - 1.0) / m

    def gradient_linear_like(self, rho):
        shape = (self.masses.size,) + np.asarray(rho).shape[1:]
        c = 1.0 / self.masses
        return np.broadcast_to(c.reshape((-1,) + (1,) * (len(shape) - 1)), shape).copy()

    def sandwich_bounds(self):
        N = self.masses.size
        if self._coeffs is not None:
            c = self._coeffs
            return float(np.min(c)), float(np.max(c) * np.sqrt(N))
        a = self.alpha_h
        r0 = N ** (1.0 / a - 1.0) / float(np.max(self.masses))
        r1 = np.sqrt(N) / float(np.min(self.masses))
        return float(r0), float(r1)


# ---------------------------------------------------------------------------
# porosity models


class ConstantKappa:
    depends_on_w = False

    def __init__(self, value: float = 1.0):
        if value <= 0:
            raise ValueError(f"porosity must be positive, got {value}")
        self.value = float(value)

    def __call__(self, w):
        return np.full_like(np.asarray(w, dtype=float), self.value) if np.ndim(w) else self.value

    def __repr__(self):
        return f"ConstantKappa({self.value})"


class PowerLawKappa:
    """kappa(w) = coeff * w**exponent, positive on w > 0."""

    depends_on_w = True

    def __init__(self, coeff: float, exponent: float):
        if coeff <= 0:
            raise ValueError("porosity coefficient must be positive")
        self.coeff = float(coeff)
        self.exponent = float(exponent)

    def __call__(self, w):
        return self.coeff * np.power(w, self.exponent)

    def __repr__(self):
        return f"PowerLawKappa({self.coeff}, {self.exponent})"


class TabulatedKappa:
    """Piecewise-linear kappa(w) from a strictly increasing table."""

    depends_on_w = True

    def __init__(self, w_points, k_points):
        self.w_points = np.asarray(w_points, dtype=float)
        self.k_points = np.asarray(k_points, dtype=float)
        if self.w_points.ndim != 1 or self.w_points.size < 2:
            raise ValueError("need at least two table points")
        if np.any(np.diff(self.w_points) <= 0):
            raise ValueError("table abscissae must be strictly increasing")
        if np.any(self.k_points <= 0):
            raise ValueError("tabulated porosity values must be positive")

    def __call__(self, w):
        return np.interp(w, self.w_points, self.k_points)

    def __repr__(self):
        return f"TabulatedKappa({list(self.w_points)}, {list(self.k_points)})"


# ---------------------------------------------------------------------------


class MixtureModel:
    """Bundle of species data, pressure law, volume extension and porosity.

    Immutable after construction; every method is a pure function of its
    arguments, so instances are safe to share across threads.
    """

    def __init__(self, species, pressure, extension, kappa=None, s0=1.0, h_const=0.0):
        if isinstance(species, (list, tuple)):
            species = SpeciesSet(tuple(species))
        self.species = species
        self.pressure_law = pressure
        self.extension = extension
        self.kappa = kappa if kappa is not None else ConstantKappa(1.0)
        if s0 <= 0:
            raise ValueError(f"free-energy reference point s0 must be positive, got {s0}")
        self.s0 = float(s0)
        self.h_const = float(h_const)
        if extension.n_species != species.n_species:
            raise ValueError(
                f"extension is for {extension.n_species} species, "
                f"species set has {species.n_species}"
            )

    @property
    def n_species(self) -> int:
        return self.species.n_species

    @property
    def lambda_is_linear(self) -> bool:
        return self.extension.is_linear

    def __repr__(self):
        return (
            f"MixtureModel(N={self.n_species}, G={self.pressure_law!r}, "
            f"L={self.extension!r}, kappa={self.kappa!r})"
        )

    # -- volume extension ---------------------------------------------------

    def _check_rho(self, rho, positive=False):
        rho = np.asarray(rho, dtype=float)
        if rho.shape[0] != self.n_species:
            raise ValueError(
                f"state has {rho.shape[0]} components, model has {self.n_species} species"
            )
        if positive:
            if np.any(rho <= 0):
                raise ValueError("state must be strictly positive componentwise")
        elif np.any(rho < 0):
            raise ValueError("state has a negative component")
        return rho

    def eval_lambda(self, rho):
        """Volume extension L(rho); homogeneous of degree one in rho."""
        rho = self._check_rho(rho)
        return self.extension.value(rho)

    def grad_lambda(self, rho):
        """Analytic gradient dL/drho_i; satisfies grad.rho = L exactly."""
        rho = self._check_rho(rho)
        return self.extension.gradient(rho)

    def sandwich_bounds(self):
        """Constants (r0, r1) with r0*|rho| <= L(rho) <= r1*|rho|."""
        return self.extension.sandwich_bounds()

    # -- pressure and free energy -------------------------------------------

    def pressure(self, rho):
        """p = G(L(rho))."""
        return self.pressure_law.g(self.eval_lambda(rho))

    def pressure_of_w(self, w):
        return self.pressure_law.g(w)

    def _fe_integral(self, s):
        law = self.pressure_law
        if hasattr(law, "free_energy_integral"):
            return law.free_energy_integral(s, self.s0)
        return _quad_free_energy_integral(law, s, self.s0)

    def h_of_w(self, s):
        """Mixing free energy h_M(s) = s * int_{s0}^{s} G/t^2 + h_const."""
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("free energy needs a positive volume extension")
        return s * self._fe_integral(s) + self.h_const

    def dh_of_w(self, s):
        """h_M'(s) = int_{s0}^{s} G/t^2 + G(s)/s."""
        s = np.asarray(s, dtype=float)
        return self._fe_integral(s) + self.pressure_law.g(s) / s

    def free_energy_density(self, rho):
        """h(rho) = h_M(L(rho))."""
        return self.h_of_w(self.eval_lambda(rho))

    def chemical_potentials(self, rho):
        """mu_i = h_M'(L(rho)) * dL/drho_i, defined for strictly positive rho."""
        rho = self._check_rho(rho, positive=True)
        lam = self.extension.value(rho)
        return self.dh_of_w(lam) * self.extension.gradient(rho)

    def gibbs_duhem_residual(self, rho):
        """|G(L) + h - sum_i rho_i mu_i| / max(1, |G(L)|) at a positive state.

        The identity p = -h + sum rho_i mu_i holds exactly when h carries no
        additive offset; a nonzero h_const shifts the residual by |h_const|.
        """
        rho = self._check_rho(rho, positive=True)
        lam = self.extension.value(rho)
        p = self.pressure_law.g(lam)
        h = self.h_of_w(lam)
        mu = self.chemical_potentials(rho)
        resid = np.abs(p + h - np.sum(rho * mu, axis=0))
        return resid / np.maximum(1.0, np.abs(p))

    # -- kinetics -------------------------------------------------------------

    def mobility_matrix(self, rho, w=None):
        """Rank-one mobility kappa * rho rho^T (single state only)."""
        rho = self._check_rho(np.asarray(rho, dtype=float))
        if rho.ndim != 1:
            raise ValueError("mobility matrix is defined for a single state")
        if self.kappa.depends_on_w:
            if w is None:
                raise ValueError("this porosity model needs the w argument")
            kap = float(self.kappa(w))
        else:
            kap = self.kappa.value
        return kap * np.outer(rho, rho)

    def diffusion_coefficient(self, w):
        """a(w) = kappa(w) * w * G'(w), the coefficient of the w-equation."""
        w = np.asarray(w, dtype=float)
        return self.kappa(w) * w * self.pressure_law.dg(w)


def ideal_gas_mixture(n_species: int = 1, masses=None, c0: float = 1.0,
                      alpha: float = 1.0, kappa: float = 1.0) -> MixtureModel:
    """Convenience constructor: G = c0 s^alpha with L = total number density."""
    masses = tuple(masses) if masses is not None else (1.0,) * n_species
    species = SpeciesSet(masses)
    ext = NumberDensityForm(masses, h_kind="unit")
    return MixtureModel(species, PowerLaw(c0, alpha), ext, ConstantKappa(kappa))
