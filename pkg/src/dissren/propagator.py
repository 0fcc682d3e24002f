"""Coherent-state propagator of the renormalized atom-field problem.

For field coherent states |alpha>, |beta> on a frequency grid the partial
matrix element <beta| S(t) |alpha> is a 2x2 matrix obeying

    dS/dt = -i (A_alpha(t) s+ + A'_beta(t) s-) S,   S(0) = <beta|alpha> I,

with A_alpha(t) = exp(i Omega t) f_alpha(t), A'_beta(t) = exp(-i Omega t)
conj(f_beta(t)).  Basis order is (|0>, |1>) and s+ = |1><0|.

Field amplitudes alpha(w) are densities per unit frequency: the overlap uses
the plain grid weights and the drive picks up sqrt(4 pi) w f(w)
(:func:`spectral.mode_coupling`).
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from . import spectral
from .errors import ConfigurationError, StiffnessError
from .spectral import FrequencyGrid, RenormConstants
from .timequad import exp_integrals

RTOL = 1e-10
ATOL = 1e-12


class Picture(str, Enum):
    RENORM_INTERACTION = "RenormInteraction"
    SCHRODINGER = "Schrodinger"


@dataclass(frozen=True)
class CoherentProfile:
    grid: FrequencyGrid
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=complex)
        if a.shape != self.grid.nodes.shape:
            raise ConfigurationError("profile must have one amplitude per grid node")
        if not np.all(np.isfinite(a)):
            raise ConfigurationError("profile amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.n_nodes, dtype=complex))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.asarray(fn(grid.nodes), dtype=complex))

    def norm2(self) -> float:
        return float(np.sum(self.grid.weights * np.abs(self.alpha) ** 2))

    def is_zero(self) -> bool:
        return not np.any(self.alpha)


@dataclass
class PropagatorBlock:
    t: float
    matrix: np.ndarray
    picture: Picture
    overlap: complex


@dataclass
class QubitState:
    c0: complex
    c1: complex

    def vector(self):
        return np.array([self.c0, self.c1], dtype=complex)

    @classmethod
    def from_vector(cls, v):
        return cls(complex(v[0]), complex(v[1]))

    def norm(self) -> float:
        return float(np.sqrt(abs(self.c0) ** 2 + abs(self.c1) ** 2))


SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()
P1 = np.diag([0.0, 1.0]).astype(complex)


def _same_grid(a: FrequencyGrid, b: FrequencyGrid) -> bool:
    return a is b or (a.nodes.shape == b.nodes.shape and np.array_equal(a.nodes, b.nodes)
                      and np.array_equal(a.weights, b.weights))


class DriveFunction:
    """f_alpha(t) = sum_j w_j sqrt(4 pi) w_j f(w_j) alpha_j exp(-i w_j t)."""

    def __init__(self, profile: CoherentProfile, model, grid: FrequencyGrid):
        if not _same_grid(profile.grid, grid):
            raise ConfigurationError("coherent profile and quadrature grid differ")
        self.nodes = grid.nodes
        self.coef = grid.weights * spectral.mode_coupling(model, grid) * profile.alpha
        keep = self.coef != 0
        self.nodes, self.coef = self.nodes[keep], self.coef[keep]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if not self.coef.size:
            return np.zeros(t.shape, dtype=complex)
        return np.exp(-1j * np.multiply.outer(t, self.nodes)) @ self.coef

    def bound(self) -> float:
        return float(np.sum(np.abs(self.coef)))


def coherent_drive(profile: CoherentProfile, model, grid, t):
    return DriveFunction(profile, model, grid)(t)


def overlap(beta: CoherentProfile, alpha: CoherentProfile) -> complex:
    """<beta|alpha> = exp(sum_j w_j [conj(beta) alpha - |alpha|^2/2 - |beta|^2/2])."""
    if not _same_grid(beta.grid, alpha.grid):
        raise ConfigurationError("profiles live on different grids")
    w = alpha.grid.weights
    a, b = alpha.alpha, beta.alpha
    return complex(np.exp(np.sum(w * (np.conj(b) * a - 0.5 * np.abs(a) ** 2 - 0.5 * np.abs(b) ** 2))))


def field_phase(beta: CoherentProfile, alpha: CoherentProfile) -> complex:
    """Theta = sum_j w_j w_j conj(beta_j) alpha_j."""
    g = alpha.grid
    return complex(np.sum(g.weights * g.nodes * np.conj(beta.alpha) * alpha.alpha))


def _check_t_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ConfigurationError("t_grid must be strictly increasing and start at 0")
    return t


def _integrate(rhs, y0, t, what, drive_scale, gamma):
    """RK45 on the real and imaginary parts of the complex state."""
    n = y0.size

    def real_rhs(s, y):
        d = rhs(s, y[:n] + 1j * y[n:])
        return np.concatenate([d.real, d.imag])

    y0r = np.concatenate([y0.real, y0.imag])
    if t[-1] == 0.0:
        return y0[:, None].copy()
    sol = solve_ivp(real_rhs, (0.0, t[-1]), y0r, method="RK45", t_eval=t, rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        h = float(np.min(np.diff(sol.t))) if sol.t.size > 1 else 0.0
        raise StiffnessError(f"{what}: integration failed ({sol.message}); gamma*h = {gamma * h:.3g}, "
                             f"drive magnitude <= {drive_scale:.3g}")
    return sol.y[:n] + 1j * sol.y[n:]


def evolve_block(alpha: CoherentProfile, beta: CoherentProfile, model, grid, constants: RenormConstants,
                 t_grid) -> list:
    """Renormalized interaction-picture blocks <beta|S(t)|alpha> on t_grid."""
    t = _check_t_grid(t_grid)
    n0 = overlap(beta, alpha)
    fa = DriveFunction(alpha, model, grid)
    fb = DriveFunction(beta, model, grid)
    Om = constants.Omega

    def rhs(s, y):
        S = y.reshape(2, 2)
        a_s = np.exp(1j * Om * s) * fa(s)
        b_s = np.exp(-1j * Om * s) * np.conj(fb(s))
        # (a s+ + b s-) S: row 1 gets a * row 0, row 0 gets b * row 1
        return -1j * np.array([b_s * S[1], a_s * S[0]]).ravel()

    y0 = (n0 * np.eye(2, dtype=complex)).ravel()
    scale = max(fa.bound(), fb.bound()) * float(np.exp(abs(constants.gamma) * t[-1]))
    ys = _integrate(rhs, y0, t, "evolve_block", scale, constants.gamma)
    return [PropagatorBlock(float(tk), ys[:, k].reshape(2, 2), Picture.RENORM_INTERACTION, n0)
            for k, tk in enumerate(t)]


def schrodinger_factors(t, constants: RenormConstants, theta: complex):
    """Row factors exp(-l gamma t) exp(-i (l omega_A + Theta) t), l = 0, 1."""
    l = np.array([0.0, 1.0])
    return np.exp(-l * constants.gamma * t) * np.exp(-1j * (l * constants.omega_A + theta) * t)


def to_schrodinger(block: PropagatorBlock, constants: RenormConstants, beta: CoherentProfile,
                   alpha: CoherentProfile, grid=None) -> PropagatorBlock:
    if block.picture is not Picture.RENORM_INTERACTION:
        raise ConfigurationError("block is already in the Schrodinger picture")
    fac = schrodinger_factors(block.t, constants, field_phase(beta, alpha))
    return PropagatorBlock(block.t, fac[:, None] * block.matrix, Picture.SCHRODINGER, block.overlap)


def from_schrodinger(block: PropagatorBlock, constants, beta, alpha) -> PropagatorBlock:
    fac = schrodinger_factors(block.t, constants, field_phase(beta, alpha))
    return PropagatorBlock(block.t, block.matrix / fac[:, None], Picture.RENORM_INTERACTION, block.overlap)


def semiclassical_evolve(alpha: CoherentProfile, model, grid, constants: RenormConstants,
                         psi0: QubitState, t_grid) -> list:
    """psi' = -i [(omega_A - i gamma) P1 + f_alpha s+ + conj(f_alpha) s-] psi."""
    t = _check_t_grid(t_grid)
    fa = DriveFunction(alpha, model, grid)
    Om = constants.Omega

    def rhs(s, y):
        f = fa(s)
        return -1j * np.array([np.conj(f) * y[1], Om * y[1] + f * y[0]])

    ys = _integrate(rhs, psi0.vector(), t, "semiclassical_evolve", fa.bound(), constants.gamma)
    return [QubitState.from_vector(ys[:, k]) for k in range(t.size)]


def vacuum_norm_check(model, grid, constants: RenormConstants, t_grid) -> np.ndarray:
    """<psi(t)|psi(t)> = exp(-2 gamma t) + D(t) for the excited atom in vacuum,
    D(t) = sum_j w_j g_j |int_0^t exp((-gamma - i (w_j - omega_A)) s) ds|^2."""
    t = np.asarray(t_grid, dtype=float)
    wg = spectral.spectral_weights(model, grid)
    keep = wg > 0
    rates = -constants.gamma - 1j * (grid.nodes[keep] - constants.omega_A)
    I = exp_integrals(rates, t)
    D = wg[keep] @ (np.abs(I) ** 2)
    return np.exp(-2.0 * constants.gamma * t) + D


def husimi_q(mixture, beta: CoherentProfile, model, grid, constants, psi0: QubitState, t_grid) -> list:
    """Q_t(beta) = <beta| rho(t) |beta> for rho(0) = sum_k p_k |psi0><psi0| x |alpha_k><alpha_k|.

    ``mixture`` is a list of (p_k, alpha_k).  Each entry contributes
    B_k psi0 psi0^+ B_k^+ with B_k the Schrodinger-picture block for
    (beta, alpha_k)."""
    t = _check_t_grid(t_grid)
    v = psi0.vector()
    out = [np.zeros((2, 2), dtype=complex) for _ in t]
    for p, alpha in mixture:
        blocks = evolve_block(alpha, beta, model, grid, constants, t)
        for k, blk in enumerate(blocks):
            m = to_schrodinger(blk, constants, beta, alpha).matrix @ v
            out[k] += p * np.outer(m, m.conj())
    return out


def blocks_csv(blocks, norms=None) -> str:
    buf = io.StringIO()
    buf.write("t,re_s00,im_s00,re_s01,im_s01,re_s10,im_s10,re_s11,im_s11,norm\n")
    for k, b in enumerate(blocks):
        m = b.matrix
        nrm = norms[k] if norms is not None else np.linalg.norm(m)
        vals = [b.t] + [x for e in (m[0, 0], m[0, 1], m[1, 0], m[1, 1]) for x in (e.real, e.imag)] + [nrm]
        buf.write(",".join(format(float(x), ".17g") for x in vals) + "\n")
    return buf.getvalue()
