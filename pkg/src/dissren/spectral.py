"""Coupling spectra, memory kernels and the renormalization constants.

Every frequency integral in the package goes through this module, using the
isotropic measure ``dk -> 4 pi w^2 dw``.  Other modules never rebuild the
measure themselves; they ask for :func:`spectral_weights` instead.
"""
from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigurationError, DomainError, IterationError, SingularityError

FOUR_PI = 4.0 * np.pi


@lru_cache(maxsize=32)
def legendre_rule(n: int):
    """Gauss-Legendre nodes and weights on [-1, 1], cached (large n is slow)."""
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


class Family(str, Enum):
    LORENTZIAN = "Lorentzian"
    OHMIC_EXP_CUTOFF = "OhmicExpCutoff"
    FLAT_WINDOW = "FlatWindow"
    TABULATED = "Tabulated"


class GridScheme(str, Enum):
    GAUSS_LEGENDRE = "GaussLegendre"
    TRAPEZOID = "Trapezoid"


class Convention(str, Enum):
    """How a decay constant handed to the dynamics routines is read.

    ``HALF_WIDTH``: b + b* = 2 gamma and the excited population decays as
    exp(-2 gamma t).  ``RESCALED``: the constant is the population decay rate
    itself, so b + b* = gamma.
    """

    HALF_WIDTH = "HalfWidth"
    RESCALED = "Rescaled"


def half_width_gamma(gamma, convention=Convention.HALF_WIDTH):
    """Convert a decay constant given in ``convention`` to the half-width one."""
    if Convention(convention) is Convention.RESCALED:
        return 0.5 * gamma
    return gamma


@dataclass(frozen=True)
class CouplingModel:
    """Coupling function f(w) of the atom to the field mode of frequency w.

    Families (A = amplitude, c = center, W = width_or_cutoff):

    * Lorentzian:      f = A W^2 / ((w - c)^2 + W^2)
    * OhmicExpCutoff:  f = A sqrt(w / W) exp(-w / (2 W)), so |f|^2 is ohmic
    * FlatWindow:      f = A on |w - c| <= W, zero elsewhere
    * Tabulated:       linear interpolation of ``table``, zero outside it
    """

    family: Family
    amplitude: float
    center: float
    width_or_cutoff: float
    table: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.width_or_cutoff > 0:
            raise ConfigurationError("width_or_cutoff must be positive")
        if not self.amplitude >= 0:
            raise ConfigurationError("amplitude must be non-negative")
        if self.family is Family.TABULATED:
            if not self.table or len(self.table) < 2:
                raise ConfigurationError("Tabulated model needs at least two table rows")
            rows = tuple((float(w), complex(v)) for w, v in self.table)
            ws = np.array([r[0] for r in rows])
            if np.any(ws < 0) or np.any(np.diff(ws) <= 0):
                raise ConfigurationError("table frequencies must be >= 0 and strictly increasing")
            object.__setattr__(self, "table", rows)
        elif self.table is not None:
            raise ConfigurationError("table is only allowed for the Tabulated family")

    def support_max(self):
        if self.family is Family.TABULATED:
            return self.table[-1][0]
        return self.center + 20.0 * self.width_or_cutoff


def coupling_values(model: CouplingModel, omega) -> np.ndarray:
    """Vectorised f(w); raises for negative frequencies."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("coupling is only defined for omega >= 0")
    a, c, width = model.amplitude, model.center, model.width_or_cutoff
    fam = model.family
    if fam is Family.LORENTZIAN:
        out = a * width**2 / ((w - c) ** 2 + width**2)
    elif fam is Family.OHMIC_EXP_CUTOFF:
        out = a * np.sqrt(w / width) * np.exp(-w / (2.0 * width))
    elif fam is Family.FLAT_WINDOW:
        out = np.where(np.abs(w - c) <= width, a, 0.0)
    else:
        tw = np.array([r[0] for r in model.table])
        tv = np.array([r[1] for r in model.table])
        re = np.interp(w, tw, tv.real, left=0.0, right=0.0)
        im = np.interp(w, tw, tv.imag, left=0.0, right=0.0)
        return (re + 1j * im) * a
    return np.asarray(out, dtype=complex)


def eval_coupling(model: CouplingModel, omega: float) -> complex:
    if omega < 0:
        raise DomainError(f"negative frequency {omega!r}")
    return complex(coupling_values(model, np.array([omega]))[0])


def spectral_density(model: CouplingModel, omega) -> np.ndarray:
    """g(w) = 4 pi w^2 |f(w)|^2, the coupling spectrum with the 3D measure folded in."""
    w = np.asarray(omega, dtype=float)
    f = coupling_values(model, w)
    return FOUR_PI * w**2 * (f.real**2 + f.imag**2)


@dataclass(frozen=True)
class FrequencyGrid:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: GridScheme
    omega_max: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.size == 0:
            raise ConfigurationError("empty frequency grid")
        if nodes.shape != weights.shape:
            raise ConfigurationError("nodes and weights differ in length")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > self.omega_max * (1 + 1e-14):
            raise ConfigurationError("grid nodes must increase strictly inside [0, omega_max]")
        if np.any(weights <= 0):
            raise ConfigurationError("grid weights must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "scheme", GridScheme(self.scheme))

    @property
    def n_nodes(self):
        return int(self.nodes.size)

    @classmethod
    def build(cls, scheme, n_nodes: int, omega_max: float) -> "FrequencyGrid":
        scheme = GridScheme(scheme)
        if n_nodes < 2 or not omega_max > 0:
            raise ConfigurationError("grid needs n_nodes >= 2 and omega_max > 0")
        if scheme is GridScheme.GAUSS_LEGENDRE:
            x, w = legendre_rule(n_nodes)
            nodes = 0.5 * omega_max * (x + 1.0)
            weights = 0.5 * omega_max * w
        else:
            h = omega_max / (n_nodes - 1)
            nodes = np.linspace(0.0, omega_max, n_nodes)
            weights = np.full(n_nodes, h)
            weights[0] = weights[-1] = 0.5 * h
        return cls(nodes, weights, scheme, float(omega_max))

    def refined(self, factor: int) -> "FrequencyGrid":
        if self.scheme is GridScheme.GAUSS_LEGENDRE:
            n = self.n_nodes * factor
        else:
            n = (self.n_nodes - 1) * factor + 1
        return FrequencyGrid.build(self.scheme, n, self.omega_max)


def default_grid(model: CouplingModel, n_nodes: int = 2000) -> FrequencyGrid:
    return FrequencyGrid.build(GridScheme.GAUSS_LEGENDRE, n_nodes, model.support_max())


def spectral_weights(model: CouplingModel, grid: FrequencyGrid) -> np.ndarray:
    """Quadrature weights w_j g(w_j) representing the measure in all integrals."""
    return grid.weights * spectral_density(model, grid.nodes)


def mode_coupling(model: CouplingModel, grid: FrequencyGrid) -> np.ndarray:
    """Coupling per unit frequency, sqrt(4 pi) w f(w), so that |.|^2 = g(w).

    Field amplitudes (coherent profiles, noise samples) live on the plain
    frequency weights; this factor carries the measure into the drives."""
    return np.sqrt(FOUR_PI) * grid.nodes * coupling_values(model, grid.nodes)


@dataclass(frozen=True)
class RenormConstants:
    """Decay rate ``gamma`` (half-width convention) and Lamb shift ``delta_omega``."""

    gamma: float
    delta_omega: float
    omega0: float
    iterations: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")

    @property
    def omega_A(self) -> float:
        return self.omega0 + self.delta_omega

    @property
    def b(self) -> complex:
        return complex(self.gamma, self.delta_omega)

    @property
    def Omega(self) -> complex:
        return complex(self.omega_A, -self.gamma)

    def gamma_in(self, convention) -> float:
        return 2.0 * self.gamma if Convention(convention) is Convention.RESCALED else self.gamma

    def as_dict(self):
        return {"gamma": self.gamma, "delta_omega": self.delta_omega, "omega0": self.omega0,
                "omega_A": self.omega_A, "b_re": self.b.real, "b_im": self.b.imag}


def bare_constants(omega0: float) -> RenormConstants:
    return RenormConstants(0.0, 0.0, omega0)


def _time_chunks(t, size=256):
    for start in range(0, t.size, size):
        yield slice(start, start + size)


def memory_kernel(model: CouplingModel, grid: FrequencyGrid, t):
    """F(t) = sum_j w_j g(w_j) exp(-i w_j t); accepts scalars or arrays."""
    if grid.n_nodes == 0:
        raise ConfigurationError("empty frequency grid")
    return kernel_from_weights(spectral_weights(model, grid), grid.nodes, t)


def kernel_from_weights(wg, nodes, t):
    tt = np.asarray(t, dtype=float)
    flat = tt.ravel()
    out = np.empty(flat.size, dtype=complex)
    for sl in _time_chunks(flat):
        out[sl] = np.exp(-1j * np.outer(flat[sl], nodes)) @ wg
    if tt.ndim == 0:
        return complex(out[0])
    return out.reshape(tt.shape)


def renorm_memory_kernel(model, grid, constants: RenormConstants, t):
    """F^r(t) = exp(i Omega t) F(t) with Omega = omega_A - i gamma."""
    return np.exp(1j * constants.Omega * np.asarray(t)) * memory_kernel(model, grid, t)


@dataclass(frozen=True)
class KernelValue:
    value: complex
    continued: bool  # True when Re z <= gamma: evaluated outside the convergence half-plane


def laplace_sum(wg, nodes, z, shift):
    """sum_j wg_j / (z + i w_j - shift) for an array of z, with the pole guard."""
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty(zz.size, dtype=complex)
    flat = zz.ravel()
    for sl in _time_chunks(flat, 128):
        den = flat[sl, None] + 1j * nodes[None, :] - shift
        if np.any(np.abs(den) < 1e-12):
            raise SingularityError("Laplace contour hits a pole on a grid node")
        out[sl] = (1.0 / den) @ wg
    return out.reshape(zz.shape)


def laplace_kernel(model, grid, z: complex, gamma: float, omega_A: float) -> KernelValue:
    """Renormalized kernel in the Laplace domain,
    int dw g(w) / (z + i (w - omega_A) - gamma)."""
    wg = spectral_weights(model, grid)
    val = laplace_sum(wg, grid.nodes, np.array([z]), gamma + 1j * omega_A)[0]
    return KernelValue(complex(val), bool(np.real(z) <= gamma))


# -- renormalization constants ------------------------------------------------

def _gl(a, b, n):
    x, w = legendre_rule(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _round64(n):
    return 64 * int(np.ceil(n / 64.0))


def principal_value(g, center: float, lower: float, upper: float, n_nodes: int) -> float:
    """PV int_lower^upper g(w) / (center - w) dw by symmetric subtraction.

    The window [center - L, center + L] is the largest symmetric interval that
    fits; there the integrand [g(w) - g(center)] / (center - w) is regular and is
    integrated on Gauss nodes placed symmetrically about ``center``.  The
    subtracted piece integrates to log((center - a) / (b - center)) over the
    window [a, b], which is zero by symmetry and kept for clarity.  The rest of
    the range is regular and gets its own Gauss rule.
    """
    if not lower < center < upper:
        raise DomainError("principal value center must lie strictly inside the range")
    half = min(center - lower, upper - center)
    a, b = center - half, center + half
    rest = (upper - lower) - 2 * half
    # counts rounded up to multiples of 64 (even, so no node lands on the
    # center) so fixed-point iterations reuse the cached rules
    n_win = max(64, _round64(n_nodes * 2 * half / (upper - lower)))
    w, q = _gl(a, b, n_win)
    g0 = g(np.array([center]))[0]
    total = np.sum(q * (g(w) - g0) / (center - w))
    total += g0 * np.log((center - a) / (b - center))
    if rest > 0:
        lo, hi = (b, upper) if upper - b > 0 else (lower, a)
        n_rest = max(64, _round64(n_nodes - n_win))
        w, q = _gl(lo, hi, n_rest)
        total += np.sum(q * g(w) / (center - w))
    return float(total)


@dataclass(frozen=True)
class RenormOptions:
    fixed_point: bool = False
    tol: float = 1e-10
    max_iter: int = 100


def _constants_at(model, grid, omega_A):
    g = lambda w: spectral_density(model, w)
    gamma = float(np.pi * g(np.array([omega_A]))[0])
    dw = principal_value(g, omega_A, 0.0, grid.omega_max, grid.n_nodes)
    return gamma, dw


def compute_renorm_constants(model, grid, omega0: float, options: RenormOptions | None = None) -> RenormConstants:
    """gamma = pi g(omega_A) and delta_omega = PV int g(w) / (omega_A - w) dw.

    Single pass evaluates both at omega_A = omega0.  The fixed-point mode solves
    omega_A = omega0 + delta_omega(omega_A) and reports gamma at the solution.
    """
    options = options or RenormOptions()
    if not 0 < omega0 < grid.omega_max:
        raise DomainError("omega0 must lie inside the grid support")
    if model.amplitude == 0:
        return RenormConstants(0.0, 0.0, omega0)
    gamma, dw = _constants_at(model, grid, omega0)
    if not options.fixed_point:
        return RenormConstants(gamma, dw, omega0, iterations=1)
    for it in range(1, options.max_iter + 1):
        wa = omega0 + dw
        if not 0 < wa < grid.omega_max:
            raise IterationError("omega_A left the grid support", RenormConstants(gamma, dw, omega0, it))
        gamma, dw_new = _constants_at(model, grid, wa)
        if abs(dw_new - dw) <= options.tol * max(1.0, abs(dw)):
            return RenormConstants(gamma, dw_new, omega0, iterations=it)
        dw = dw_new
    raise IterationError("fixed-point iteration for omega_A did not converge",
                         RenormConstants(gamma, dw, omega0, options.max_iter))


# -- JSON interchange -------------------------------------------------------------

def model_to_dict(model: CouplingModel) -> dict:
    d = {"family": model.family.value, "amplitude": model.amplitude,
         "center": model.center, "width_or_cutoff": model.width_or_cutoff}
    if model.table is not None:
        d["table"] = [[w, v.real, v.imag] for w, v in model.table]
    return d


def model_from_dict(d: dict) -> CouplingModel:
    allowed = {"family", "amplitude", "center", "width_or_cutoff", "table"}
    extra = set(d) - allowed
    if extra:
        raise ConfigurationError(f"unknown model key(s): {sorted(extra)}")
    missing = {"family", "amplitude", "center", "width_or_cutoff"} - set(d)
    if missing:
        raise ConfigurationError(f"missing model key(s): {sorted(missing)}")
    try:
        family = Family(d["family"])
    except ValueError:
        raise ConfigurationError(f"model.family: unknown family {d['family']!r}") from None
    table = None
    if "table" in d:
        table = tuple((row[0], complex(row[1], row[2] if len(row) > 2 else 0.0)) for row in d["table"])
    return CouplingModel(family, float(d["amplitude"]), float(d["center"]), float(d["width_or_cutoff"]), table)


def grid_to_dict(grid: FrequencyGrid) -> dict:
    return {"scheme": grid.scheme.value, "n_nodes": grid.n_nodes, "omega_max": grid.omega_max}


def grid_from_dict(d: dict) -> FrequencyGrid:
    extra = set(d) - {"scheme", "n_nodes", "omega_max"}
    if extra:
        raise ConfigurationError(f"unknown grid key(s): {sorted(extra)}")
    try:
        return FrequencyGrid.build(d["scheme"], int(d["n_nodes"]), float(d["omega_max"]))
    except KeyError as exc:
        raise ConfigurationError(f"missing grid key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigurationError(f"grid.scheme: {exc}") from None


def model_hash(model: CouplingModel, grid: FrequencyGrid | None = None) -> str:
    payload = {"model": model_to_dict(model)}
    if grid is not None:
        payload["grid"] = grid_to_dict(grid)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
