"""Reduced atom dynamics: vacuum chi(t), GKSL evolution and the driven map.

Decay conventions: with ``Convention.HalfWidth`` a decay constant gamma
gives population decay exp(-2 gamma t); with ``Convention.Rescaled`` the
population decays as exp(-gamma t).  Internally everything is converted to
the population rate ``rate``.
"""
from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.linalg import expm
from scipy.stats import t as student_t

from . import spectral
from .errors import DomainError, IntegratorError, VerificationFailure
from .propagator import P1, SIGMA_MINUS, SIGMA_PLUS, CoherentProfile, DriveFunction
from .spectral import Convention, RenormConstants, half_width_gamma
from .timequad import exp_integrals, simpson_weights

RTOL = 1e-10
ATOL = 1e-12
HERMITIAN_TOL = 1e-8


def population_rate(gamma, convention=Convention.HALF_WIDTH) -> float:
    return 2.0 * half_width_gamma(gamma, convention)


@dataclass
class QubitDensity:
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=complex).reshape(2, 2)

    @classmethod
    def pure(cls, c0, c1):
        v = np.array([c0, c1], dtype=complex)
        return cls(np.outer(v, v.conj()))

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.rho + self.rho.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def is_valid(self, tol=1e-10) -> bool:
        return (self.hermiticity_error() <= tol and abs(self.trace - 1.0) <= tol
                and self.min_eigenvalue() >= -tol)


# -- vacuum chi(t) ---------------------------------------------------------------------

def chi_analytic(t, gamma, convention=Convention.HALF_WIDTH):
    """1 - exp(-2 gamma t) in the half-width convention."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("chi is defined for t >= 0")
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    out = -np.expm1(-population_rate(gamma, convention) * t)
    return float(out) if out.ndim == 0 else out


def _h_vectors(model, grid, constants, t):
    """v[j, k] with h_xi(t_k) = sum_j conj(zeta_j) v[j, k] for standard complex
    Gaussian zeta_j = sqrt(w_j) xi_j."""
    f = spectral.mode_coupling(model, grid)
    rates = 1j * (grid.nodes - constants.omega_A) - constants.gamma
    I = exp_integrals(rates, t)
    return (np.sqrt(grid.weights) * np.conj(f))[:, None] * I


def chi_quadrature(model, grid, constants: RenormConstants, t):
    """Exact mean of |h_xi(t)|^2 on the grid: sum_j w_j g_j |int_0^t e^{(i(w_j - w_A) - gamma)s} ds|^2."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.sum(np.abs(_h_vectors(model, grid, constants, t)) ** 2, axis=0)


@dataclass(frozen=True)
class NoiseSample:
    xi: np.ndarray
    seed_path: tuple


def standard_noise(seed: int, sample: int, n_modes: int) -> np.ndarray:
    """Standard complex Gaussians zeta_j (E|zeta|^2 = 1) for one sample.

    Counter-based: the Philox key is the seed and the sample index selects the
    counter block, so the value for (seed, sample, mode) never depends on how
    samples are scheduled."""
    bitgen = np.random.Philox(key=int(seed) & ((1 << 128) - 1), counter=[0, 0, int(sample), 0])
    z = np.random.Generator(bitgen).standard_normal(2 * n_modes)
    return (z[0::2] + 1j * z[1::2]) / np.sqrt(2.0)


def noise_sample(grid, seed: int, sample: int) -> NoiseSample:
    """xi_j = zeta_j / sqrt(w_j): the discretized Gaussian measure exp(-sum_j w_j |xi_j|^2)."""
    z = standard_noise(seed, sample, grid.n_nodes)
    return NoiseSample(z / np.sqrt(grid.weights), (int(seed), int(sample)))


def _pairwise(v):
    v = np.asarray(v)
    while v.shape[0] > 1:
        if v.shape[0] % 2:
            v = np.concatenate([v, np.zeros((1,) + v.shape[1:], dtype=v.dtype)])
        v = v[0::2] + v[1::2]
    return v[0]


@dataclass
class ChiEstimate:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    first_moment: np.ndarray
    first_moment_stderr: np.ndarray
    n_samples: int
    seed: int


BLOCK = 256


def _block_values(seed, start, stop, v):
    n_modes = v.shape[0]
    h = np.empty((stop - start, v.shape[1]), dtype=complex)
    for r, s in enumerate(range(start, stop)):
        zc = np.conj(standard_noise(seed, s, n_modes))
        h[r] = np.sum(zc[:, None] * v, axis=0)
    return h


def chi_montecarlo_many(model, grid, constants, t, n_samples: int, seed: int, threads: int = 1) -> ChiEstimate:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if n_samples < 2:
        raise ValueError("need at least two samples")
    v = _h_vectors(model, grid, constants, t)
    starts = list(range(0, n_samples, BLOCK))
    jobs = [(s, min(s + BLOCK, n_samples)) for s in starts]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: _block_values(seed, j[0], j[1], v), jobs))
    else:
        parts = [_block_values(seed, a, b, v) for a, b in jobs]
    h = np.concatenate(parts, axis=0)
    a2 = np.abs(h) ** 2
    mean = _pairwise(a2) / n_samples
    var = _pairwise((a2 - mean) ** 2) / (n_samples - 1)
    m1 = _pairwise(h) / n_samples
    var1 = _pairwise(np.abs(h - m1) ** 2) / (n_samples - 1)
    return ChiEstimate(t, mean, np.sqrt(var / n_samples), m1, np.sqrt(var1 / n_samples), n_samples, seed)


def chi_montecarlo(model, grid, constants, t, n_samples: int, seed: int, threads: int = 1):
    """(mean, stderr) of |h_xi(t)|^2 over Gaussian field noise."""
    est = chi_montecarlo_many(model, grid, constants, [t], n_samples, seed, threads)
    return float(est.mean[0]), float(est.stderr[0])


# -- vacuum master equation ---------------------------------------------------------------

def _lindbladian(H, rate):
    """Superoperator on column-stacked rho for
    -i[H, rho] - (rate/2){P1, rho} + rate s- rho s+."""
    I = np.eye(2)
    L = -1j * (np.kron(I, H) - np.kron(H.T, I))
    L += -0.5 * rate * (np.kron(I, P1) + np.kron(P1.T, I))
    L += rate * np.kron(SIGMA_PLUS.T, SIGMA_MINUS)
    return L


def _vec(m):
    return m.reshape(-1, order="F")


def _unvec(v):
    return v.reshape(2, 2, order="F")


def _check_density(rho: QubitDensity, what: str, tol=1e-10):
    if rho.hermiticity_error() > tol:
        raise IntegratorError(f"{what}: Hermiticity violated by {rho.hermiticity_error():.3g}")
    if abs(rho.trace - 1.0) > tol:
        raise IntegratorError(f"{what}: trace drifted to {rho.trace!r}")
    if rho.min_eigenvalue() < -tol:
        raise IntegratorError(f"{what}: negative eigenvalue {rho.min_eigenvalue():.3g}")


def integrate_master_vacuum(rho0: QubitDensity, omega_A, gamma, t_grid, convention=Convention.HALF_WIDTH) -> list:
    """-i[w_A P1, rho] - gamma{P1, rho} + 2 gamma s- rho s+ (half-width gamma),
    propagated exactly by the matrix exponential of the generator."""
    _check_density(rho0, "initial state", 1e-10)
    L = _lindbladian(omega_A * P1, population_rate(gamma, convention))
    v0 = _vec(rho0.rho)
    out = []
    for t in np.asarray(t_grid, dtype=float):
        r = QubitDensity(_unvec(expm(L * t) @ v0))
        _check_density(r, f"vacuum master equation at t={t}", 1e-9)
        out.append(r)
    return out


# -- driven case ----------------------------------------------------------------------------

def _h_alpha(f, omega_A):
    return omega_A * P1 + f * SIGMA_PLUS + np.conj(f) * SIGMA_MINUS


def _unitaries(drive, omega_A, s_grid):
    """U_alpha(s, 0) = T exp(-i int H_alpha) on s_grid."""
    s = np.asarray(s_grid, dtype=float)

    def rhs(tt, y):
        U = (y[:4] + 1j * y[4:]).reshape(2, 2)
        d = (-1j * _h_alpha(drive(tt), omega_A) @ U).ravel()
        return np.concatenate([d.real, d.imag])

    y0 = np.concatenate([np.eye(2).ravel(), np.zeros(4)])
    if s[-1] == 0.0:
        return np.eye(2, dtype=complex)[None].repeat(s.size, axis=0)
    sol = solve_ivp(rhs, (0.0, s[-1]), y0, method="RK45", t_eval=s, rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        raise IntegratorError(f"unitary propagation failed: {sol.message}")
    return (sol.y[:4] + 1j * sol.y[4:]).T.reshape(-1, 2, 2)


@dataclass
class Frames:
    """Interaction-picture operators tilde X(s) = U^-1(s) X U(s) on a uniform grid."""

    s: np.ndarray
    U: np.ndarray
    P: np.ndarray
    Sm: np.ndarray
    Sp: np.ndarray

    @property
    def h(self):
        return self.s[1] - self.s[0]


def interaction_frames(drive, omega_A, t, n_quad=2001) -> Frames:
    if n_quad % 2 == 0:
        n_quad += 1
    s = np.linspace(0.0, t, n_quad)
    U = _unitaries(drive, omega_A, s)
    Ui = np.linalg.inv(U)
    P = Ui @ P1 @ U
    Sm = Ui @ SIGMA_MINUS @ U
    Sp = Ui @ SIGMA_PLUS @ U
    return Frames(s, U, P, Sm, Sp)


def _simpson(frames, y):
    w = simpson_weights(frames.s.size, frames.h)
    return np.tensordot(w, y, axes=(0, 0))


def _cumulative(frames, y):
    # scipy's cumulative Simpson rule is real-only
    re = cumulative_simpson(y.real, dx=frames.h, axis=0, initial=0.0)
    im = cumulative_simpson(y.imag, dx=frames.h, axis=0, initial=0.0)
    return re + 1j * im


def _first_order_bracket(fr: Frames, rho, rate):
    anti = fr.P @ rho + rho @ fr.P
    jump = fr.Sm @ rho @ fr.Sp
    return _simpson(fr, -0.5 * rate * anti + rate * jump)


def _nearest_unitary(U):
    w, _, vh = np.linalg.svd(U)
    return w @ vh


def _to_lab(fr: Frames, x):
    U = _nearest_unitary(fr.U[-1])
    return U @ x @ U.conj().T


def drive_rate_ratio(alpha, model, grid, constants, convention=Convention.HALF_WIDTH) -> float:
    """Upper bound of |f_alpha| over the population rate; reported, not enforced."""
    rate = population_rate(constants.gamma, convention)
    b = DriveFunction(alpha, model, grid).bound()
    return b / rate if rate > 0 else float("inf") if b > 0 else 0.0


def driven_map_first_order(alpha: CoherentProfile, model, grid, constants: RenormConstants, rho0: QubitDensity,
                           t, convention=Convention.HALF_WIDTH, n_quad=2001) -> QubitDensity:
    """U [rho0 - (rate/2) int {P(s), rho0} ds + rate int s-(s) rho0 s+(s) ds] U^+."""
    rate = population_rate(constants.gamma, convention)
    fr = interaction_frames(DriveFunction(alpha, model, grid), constants.omega_A, t, n_quad)
    out = QubitDensity(_to_lab(fr, rho0.rho + _first_order_bracket(fr, rho0.rho, rate)))
    if out.hermiticity_error() > HERMITIAN_TOL:
        raise IntegratorError(f"first-order map lost Hermiticity ({out.hermiticity_error():.3g})")
    return out


def driven_lindblad_integrate(alpha: CoherentProfile, model, grid, constants: RenormConstants, rho0: QubitDensity,
                              t_grid, convention=Convention.HALF_WIDTH) -> list:
    """Integrate d rho~/dt = -(rate/2){P(t), rho~} + rate s-(t) rho~ s+(t) together
    with U_alpha, and return U rho~ U^+ on t_grid."""
    rate = population_rate(constants.gamma, convention)
    drive = DriveFunction(alpha, model, grid)
    wa = constants.omega_A
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing and start at 0")

    def rhs(tt, y):
        z = y[:8] + 1j * y[8:]
        U, r = z[:4].reshape(2, 2), z[4:].reshape(2, 2)
        # U^-1 rather than U^+ keeps the generator exactly trace preserving
        Ui = np.linalg.inv(U)
        P = Ui @ P1 @ U
        Sm = Ui @ SIGMA_MINUS @ U
        Sp = Ui @ SIGMA_PLUS @ U
        dU = -1j * _h_alpha(drive(tt), wa) @ U
        dr = -0.5 * rate * (P @ r + r @ P) + rate * Sm @ r @ Sp
        d = np.concatenate([dU.ravel(), dr.ravel()])
        return np.concatenate([d.real, d.imag])

    z0 = np.concatenate([np.eye(2, dtype=complex).ravel(), rho0.rho.ravel()])
    if t[-1] == 0.0:
        return [QubitDensity(rho0.rho.copy())]
    sol = solve_ivp(rhs, (0.0, t[-1]), np.concatenate([z0.real, z0.imag]), method="RK45",
                    t_eval=t, rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        raise IntegratorError(f"driven integration failed: {sol.message}")
    out = []
    for k in range(t.size):
        z = sol.y[:8, k] + 1j * sol.y[8:, k]
        U, r = _nearest_unitary(z[:4].reshape(2, 2)), z[4:].reshape(2, 2)
        rho = QubitDensity(U @ r @ U.conj().T)
        _check_density(rho, f"driven integration at t={t[k]}", 1e-8)
        out.append(rho)
    return out


# -- second-order check -----------------------------------------------------------------------

def second_order_generator(fr: Frames, rho, rate):
    """Second Dyson term of the conjectured generator,
    int_0^t ds2 L(s2) int_0^{s2} ds1 L(s1) rho, with L(s)X = -(rate/2){P(s), X} + rate s-(s) X s+(s)."""
    L1 = -0.5 * rate * (fr.P @ rho + rho @ fr.P) + rate * fr.Sm @ rho @ fr.Sp
    Y = _cumulative(fr, L1)
    L2 = -0.5 * rate * (fr.P @ Y + Y @ fr.P) + rate * fr.Sm @ Y @ fr.Sp
    return _simpson(fr, L2)


def second_order_reduced(fr: Frames, rho, rate):
    """Second-order terms of the Gaussian-averaged reduced dynamics after the
    Markov rule, grouped term by term:

        (r^2/4) [int P] rho [int P]
      + (r^2/4) int ds [rho Q(s) P(s) + P(s) Q(s) rho]
      - (r^2/2) int ds [J(s) P(s) + P(s) J(s)]
      - (r^2/2) int ds s-(s) [rho Q(s) + Q(s) rho] s+(s)
      + r^2 int ds s-(s) J(s) s+(s)

    with Q(s) = int_0^s P and J(s) = int_0^s s- rho s+."""
    P, Sm, Sp = fr.P, fr.Sm, fr.Sp
    Q = _cumulative(fr, P)
    J = _cumulative(fr, Sm @ rho @ Sp)
    Pint = _simpson(fr, P)
    t1 = 0.25 * Pint @ rho @ Pint
    t2 = 0.25 * _simpson(fr, rho @ Q @ P + P @ Q @ rho)
    t3 = -0.5 * _simpson(fr, J @ P + P @ J)
    t4 = -0.5 * _simpson(fr, Sm @ (rho @ Q + Q @ rho) @ Sp)
    t5 = _simpson(fr, Sm @ J @ Sp)
    return rate**2 * (t1 + t2 + t3 + t4 + t5)


def symmetrization_gap(fr: Frames, rho) -> float:
    """max |2 int_0^t ds2 int_0^{s2} ds1 P(s1) rho P(s2) - int_0^t int_0^t P(s1) rho P(s2)|."""
    Q = _cumulative(fr, fr.P)
    tri = 2.0 * _simpson(fr, Q @ rho @ fr.P)
    Pint = _simpson(fr, fr.P)
    return float(np.max(np.abs(tri - Pint @ rho @ Pint)))


@dataclass
class SecondOrderReport:
    t: float
    gammas: list
    expansion_gap: list        # max |reduced - generator| per gamma
    residual: list             # max |exact - second-order expansion| per gamma
    first_order_residual: list
    exponent: float
    exponent_ci95: float
    extrapolated_exponent: float
    first_order_exponent: float
    symmetrization_gap: float
    drive_ratio: float
    passed: bool = field(default=False)

    def reaches(self, target=3.0) -> bool:
        """Fitted exponent is at least ``target`` within its 95% interval."""
        return self.exponent + self.exponent_ci95 >= target

    def as_dict(self):
        return {k: (list(map(float, v)) if isinstance(v, list) else v) for k, v in self.__dict__.items()}


def _fit_exponent(gammas, values):
    """Least-squares slope of log(values) against log(gammas) and its 95%
    confidence half-width (Student t with n - 2 degrees of freedom)."""
    x, y = np.log(np.asarray(gammas)), np.log(np.asarray(values))
    slope, icpt = np.polyfit(x, y, 1)
    dof = x.size - 2
    if dof < 1:
        return float(slope), 0.0
    resid = y - (slope * x + icpt)
    se = np.sqrt(np.sum(resid**2) / dof / np.sum((x - x.mean()) ** 2))
    return float(slope), float(student_t.ppf(0.975, dof) * se)


def _extrapolated_exponent(gammas, values):
    """Local slopes between neighbours, extrapolated linearly in gamma to 0."""
    x, y = np.log(np.asarray(gammas)), np.log(np.asarray(values))
    local = np.diff(y) / np.diff(x)
    mid = np.sqrt(np.asarray(gammas[:-1]) * np.asarray(gammas[1:]))
    if local.size < 2:
        return float(local[0])
    k, c = np.polyfit(mid, local, 1)
    return float(c)


def verify_second_order(alpha, model, grid, constants: RenormConstants, rho0: QubitDensity, t, gamma_list,
                        convention=Convention.HALF_WIDTH, n_quad=2001, min_exponent=2.5,
                        raise_on_failure=False) -> SecondOrderReport:
    """Compare the two second-order expansions of the driven map at each gamma
    and fit how the exact conjectured dynamics departs from them."""
    gammas = [float(g) for g in gamma_list]
    if len(gammas) < 3 or any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gamma_list needs at least three strictly decreasing values")
    fr = interaction_frames(DriveFunction(alpha, model, grid), constants.omega_A, t, n_quad)
    rho = rho0.rho
    gaps, res, res1 = [], [], []
    for g in gammas:
        c = replace(constants, gamma=g)
        rate = population_rate(g, convention)
        first = rho + _first_order_bracket(fr, rho, rate)
        gen = second_order_generator(fr, rho, rate)
        red = second_order_reduced(fr, rho, rate)
        exact = driven_lindblad_integrate(alpha, model, grid, c, rho0, [0.0, t], convention)[-1].rho
        gaps.append(float(np.max(np.abs(gen - red))))
        res.append(float(np.max(np.abs(exact - _to_lab(fr, first + red)))))
        res1.append(float(np.max(np.abs(exact - _to_lab(fr, first)))))
    slope, err = _fit_exponent(gammas, res)
    slope1, _ = _fit_exponent(gammas, res1)
    report = SecondOrderReport(float(t), gammas, gaps, res, res1, slope, err,
                               _extrapolated_exponent(gammas, res), slope1,
                               symmetrization_gap(fr, rho), drive_rate_ratio(alpha, model, grid, constants, convention))
    report.passed = slope >= min_exponent
    if raise_on_failure and not report.passed:
        raise VerificationFailure(f"second-order residual exponent {slope:.3f} < {min_exponent}", report)
    return report


# -- output -------------------------------------------------------------------------------------

def density_csv(t, states) -> str:
    buf = io.StringIO()
    buf.write("t,rho00,re_rho01,im_rho01,rho11,trace,min_eig\n")
    for tk, s in zip(t, states):
        r = s.rho
        vals = [tk, r[0, 0].real, r[0, 1].real, r[0, 1].imag, r[1, 1].real, s.trace, s.min_eigenvalue()]
        buf.write(",".join(format(float(x), ".17g") for x in vals) + "\n")
    return buf.getvalue()
