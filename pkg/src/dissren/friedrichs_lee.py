"""Single-excitation (Friedrichs-Lee) sector: survival amplitudes.

Two independent routes to the excited-state amplitude:

* time domain: trapezoidal marching of the coupled Volterra pair (K, M);
* Laplace domain: the resolvent built from :func:`spectral.laplace_sum`,
  inverted numerically on a Talbot-type contour (or a Bromwich line).

On a finite frequency grid the resolvent is a rational function whose poles
sit on a vertical segment (at Re z = 0 for the bare picture, Re z = gamma for
the renormalized one), so the contour can always be evaluated, including to
the left of the naive convergence abscissa.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import spectral
from .errors import ConfigurationError, SingularityError
from .spectral import RenormConstants


@dataclass(frozen=True)
class AmplitudePair:
    t_grid: np.ndarray
    K: np.ndarray
    M: np.ndarray


class LaplaceMethod(str, Enum):
    TALBOT = "TalbotContour"
    BROMWICH = "BromwichTrapezoid"


@dataclass(frozen=True)
class LaplaceSolverConfig:
    """Inversion settings.

    ``n_nodes`` is the minimum node count; the Talbot rule adds nodes when the
    pole segment is tall compared with 1/t (about ``density`` nodes per radian
    of e^{zt} phase along the contour).  ``shift`` is added to the abscissa of
    the singularities.  ``bromwich_tail`` sets how far the Bromwich line is
    followed beyond the pole segment.
    """

    method: LaplaceMethod = LaplaceMethod.TALBOT
    n_nodes: int = 64
    shift: float = 0.0
    mu_scale: float = 10.0
    crossing_angle: float = 1.2
    density: float = 1.6
    bromwich_tail: float = 2000.0

    def __post_init__(self):
        object.__setattr__(self, "method", LaplaceMethod(self.method))
        if self.n_nodes < 16:
            raise ConfigurationError("LaplaceSolverConfig.n_nodes must be >= 16")


# -- time domain ----------------------------------------------------------------

def _check_time_grid(t_grid, omega_max):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
        raise ConfigurationError("t_grid must be a 1-d grid starting at 0")
    h = t[1] - t[0]
    if h <= 0 or not np.allclose(np.diff(t), h, rtol=1e-9, atol=0):
        raise ConfigurationError("t_grid must be uniform and increasing")
    if omega_max * h >= 0.5:
        raise ConfigurationError(f"time step too coarse: omega_max*h = {omega_max * h:.3g} >= 0.5")
    return t, h


def _march(kernel, p, q, b, h):
    """Trapezoidal marching of
        K(t) = 1 - i int_0^t p(s) M(s) ds + b int_0^t K(s) ds
        M(t) = -i int_0^t q(s) F(t - s) K(s) ds
    on a uniform grid; ``kernel``, ``p`` and ``q`` are sampled on it.
    The endpoint values K_j, M_j enter with weight h/2, so each step solves
    a 2x2 linear system in closed form.
    """
    n = kernel.size
    K = np.empty(n, dtype=complex)
    M = np.empty(n, dtype=complex)
    K[0], M[0] = 1.0, 0.0
    y = np.empty(n, dtype=complex)  # trapezoid-weighted q K history
    y[0] = 0.5 * q[0] * K[0]
    rev = kernel[::-1].copy()  # rev[n-1-k] = F_k
    half = 0.5 * h
    s_pm = 0.5 * p[0] * M[0]
    s_k = 0.5 * K[0]
    for j in range(1, n):
        a_j = -1j * h * np.dot(rev[n - 1 - j:n - 1], y[:j])
        alpha = -1j * half * q[j] * kernel[0]
        rhs = 1.0 - 1j * h * s_pm + b * h * s_k
        coef = 1.0 - b * half + 1j * half * p[j] * alpha
        K[j] = (rhs - 1j * half * p[j] * a_j) / coef
        M[j] = a_j + alpha * K[j]
        y[j] = q[j] * K[j]
        s_pm += p[j] * M[j]
        s_k += K[j]
    return K, M


def solve_volterra_bare(model, grid, omega0, t_grid) -> AmplitudePair:
    """Interaction-picture amplitudes K(t), M(t) of the bare problem."""
    t, h = _check_time_grid(t_grid, grid.omega_max)
    F = spectral.memory_kernel(model, grid, t)
    p = np.exp(1j * omega0 * t)
    K, M = _march(F, p, p.conj(), 0.0, h)
    return AmplitudePair(t, K, M)


def solve_volterra_renormalized(model, grid, constants: RenormConstants, t_grid) -> AmplitudePair:
    """K^r(t), M^r(t): same pair with the complex frequency Omega and the
    counter-term b int K^r."""
    t, h = _check_time_grid(t_grid, grid.omega_max)
    F = spectral.memory_kernel(model, grid, t)
    p = np.exp(1j * constants.Omega * t)
    q = np.exp(-1j * constants.Omega * t)
    K, M = _march(F, p, q, constants.b, h)
    return AmplitudePair(t, K, M)


def richardson(solver, *args, t_grid) -> AmplitudePair:
    """Combine the trapezoid solution on t_grid with the one at half the step,
    (4 K_{h/2} - K_h) / 3, cancelling the O(h^2) error of the marching."""
    t = np.asarray(t_grid, dtype=float)
    fine = np.linspace(0.0, t[-1], 2 * (t.size - 1) + 1)
    coarse, half = solver(*args, t), solver(*args, fine)
    return AmplitudePair(coarse.t_grid, (4 * half.K[::2] - coarse.K) / 3, (4 * half.M[::2] - coarse.M) / 3)


def full_amplitude_bare(pair: AmplitudePair, omega0) -> np.ndarray:
    return np.exp(-1j * omega0 * pair.t_grid) * pair.K


def full_amplitude_renormalized(pair: AmplitudePair, constants: RenormConstants) -> np.ndarray:
    return np.exp(-1j * constants.Omega * pair.t_grid) * pair.K


# -- Laplace domain ---------------------------------------------------------------

@dataclass(frozen=True)
class Resolvent:
    """A resolvent R(z) = 1 / (z + kernel(z) - c) with poles on the segment
    Re z = abscissa, Im z in [y_lo, y_hi]."""

    kernel: object
    counter: complex
    abscissa: float
    y_lo: float
    y_hi: float
    moment: complex | None = None  # kernel(z) ~ moment / z at large z; None if unknown

    def __call__(self, z):
        den = z + self.kernel(z) - self.counter
        if np.any(np.abs(den) < 1e-300):
            raise SingularityError("contour node hits a pole of the resolvent")
        return 1.0 / den


def bare_resolvent(model, grid, omega0) -> Resolvent:
    wg = spectral.spectral_weights(model, grid)
    nodes = grid.nodes
    kernel = lambda z: spectral.laplace_sum(wg, nodes, z, 1j * omega0)
    return Resolvent(kernel, 0.0, 0.0, *_pole_band(wg, nodes, omega0), complex(np.sum(wg)))


def renormalized_resolvent(model, grid, constants: RenormConstants, kernel=None) -> Resolvent:
    """``kernel`` overrides the quadrature kernel F^r(z), e.g. by the constant
    b to study the exactly cancelling case."""
    wa, gamma = constants.omega_A, constants.gamma
    if kernel is None:
        wg = spectral.spectral_weights(model, grid)
        nodes = grid.nodes
        kernel = lambda z: spectral.laplace_sum(wg, nodes, z, gamma + 1j * wa)
        lo, hi = _pole_band(wg, nodes, constants.omega0)
        m0 = complex(np.sum(wg))
    else:
        lo, hi = -1.0, 1.0
        m0 = None
    # K^r(z) = K(z - i delta_omega - gamma): the bare band moved by gamma + i delta_omega
    return Resolvent(kernel, constants.b, gamma, lo + constants.delta_omega, hi + constants.delta_omega, m0)


def _pole_band(wg, nodes, omega0):
    # eigenvalues of the single-excitation Hamiltonian lie inside
    # [min(nodes, omega0) - r, max(nodes, omega0) + r] with r = sqrt(sum wg)
    r = float(np.sqrt(np.sum(wg)))
    lo = min(nodes[0], omega0) - r
    hi = max(nodes[-1], omega0) + r
    # pole at z = -i(lambda - omega0)
    return -(hi - omega0), -(lo - omega0)


def _talbot(res: Resolvent, t: float, cfg: LaplaceSolverConfig) -> complex:
    yc = 0.5 * (res.y_lo + res.y_hi)
    half_height = 0.5 * (res.y_hi - res.y_lo) + 1.0 / t
    mu = cfg.mu_scale / t
    nu = max(1.0, half_height / (mu * cfg.crossing_angle))
    n = max(cfg.n_nodes, int(np.ceil(cfg.density * 2.0 * nu * mu * t)))
    n += n % 2
    theta = -np.pi + (np.arange(n) + 0.5) * (2.0 * np.pi / n)
    cot = np.cos(theta) / np.sin(theta)
    z = res.abscissa + cfg.shift + 1j * yc + mu * (theta * cot + 1j * nu * theta)
    dz = mu * (cot - theta / np.sin(theta) ** 2 + 1j * nu)
    vals = np.exp(z * t) * res(z) * dz
    return complex(_pairwise(vals) / (1j * n))


def _bromwich(res: Resolvent, t: float, cfg: LaplaceSolverConfig) -> complex:
    # f(t) = g(t) + (e^{s t} / 2 pi) int dy e^{i y t} [R(s + i y) - G(s + i y)]
    # with G = 1/z + c/z^2 + (c^2 - m0)/z^3 the large-z expansion of R, whose
    # inverse is g(t) = 1 + c t + (c^2 - m0) t^2 / 2, so the truncated tail
    # decays like 1/y^4.  The offset 3.75/t and the step pi/(4t) keep the
    # aliased copies at f(t + 8t) e^{-30} and resolve the poles lying 3.75/t
    # off the line.
    if res.moment is None:
        c1 = c2 = 0.0
    else:
        c1 = res.counter
        c2 = res.counter**2 - res.moment
    s = res.abscissa + cfg.shift + 3.75 / t
    dy = np.pi / (4.0 * t)
    yc = 0.5 * (res.y_hi + res.y_lo)
    span = 0.5 * (res.y_hi - res.y_lo)
    scale = 1.0 + abs(c2) + abs(c1) ** 2
    limit = span + 1.0 + cfg.bromwich_tail * scale ** (1.0 / 3.0)
    n = max(cfg.n_nodes, 2 * int(np.ceil(limit / dy)))
    y = yc + (np.arange(n) - 0.5 * (n - 1)) * dy
    vals = np.empty(n, dtype=complex)
    for lo in range(0, n, 8192):
        z = s + 1j * y[lo:lo + 8192]
        vals[lo:lo + 8192] = (res(z) - 1.0 / z - c1 / z**2 - c2 / z**3) * np.exp(1j * y[lo:lo + 8192] * t)
    g = 1.0 + c1 * t + 0.5 * c2 * t * t
    return complex(g + np.exp(s * t) * _pairwise(vals) * dy / (2 * np.pi))


def _pairwise(v):
    v = np.asarray(v)
    while v.size > 1:
        if v.size % 2:
            v = np.concatenate([v, [0.0]])
        v = v[0::2] + v[1::2]
    return v[0]


def invert(res: Resolvent, t, cfg: LaplaceSolverConfig | None = None):
    cfg = cfg or LaplaceSolverConfig()
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(tt <= 0):
        raise ConfigurationError("Laplace inversion needs t > 0")
    fn = _talbot if cfg.method is LaplaceMethod.TALBOT else _bromwich
    out = np.array([fn(res, float(x), cfg) for x in tt])
    return out[0] if np.ndim(t) == 0 else out


def survival_laplace_bare(model, grid, omega0, cfg=None, t=1.0):
    """K(t) in the bare interaction picture by inverting 1 / (z + F(z - i omega0))."""
    return invert(bare_resolvent(model, grid, omega0), t, cfg)


def survival_renormalized(model, grid, constants, cfg=None, t=1.0, kernel=None):
    """Full survival amplitude exp((-i omega_A - gamma) t) K^r(t)."""
    kr = invert(renormalized_resolvent(model, grid, constants, kernel), t, cfg)
    return np.exp(-1j * constants.Omega * np.asarray(t, dtype=float)) * kr


def renormalized_interaction_amplitude(model, grid, constants, cfg=None, t=1.0, kernel=None):
    return invert(renormalized_resolvent(model, grid, constants, kernel), t, cfg)


def laplace_kernel_is_continued(cfg: LaplaceSolverConfig) -> bool:
    """Contour nodes left of Re z = gamma evaluate the kernel by continuation
    of the quadrature formula; Talbot contours always do."""
    return cfg.method is LaplaceMethod.TALBOT or cfg.shift <= 0


# -- output -----------------------------------------------------------------------

def survival_csv(t, K, amplitude, header: dict) -> str:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in header.items()) + "\n")
    buf.write("t,re_K,im_K,abs_amplitude\n")
    for ti, ki, ai in zip(t, K, amplitude):
        buf.write(f"{_fmt(ti)},{_fmt(ki.real)},{_fmt(ki.imag)},{_fmt(abs(ai))}\n")
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")
