"""Radial solver for the polaron-type variational problems in d = 3 and d = 5.

    P_d = sup_{||f||_2 = 1} [ a(f) - b(f) ],
    a(f) = int int f(x)^2 f(y)^2 w_d(|x - y|) dx dy,   b(f) = int |grad f|^2,

with w_3(r) = 1/(4 pi r) (Green kernel of -Lap in R^3) and
w_5(r) = 1/(16 pi^2 r) (Green kernel of Lap^2 in R^5).  Since
a(f_s) = s a(f) and b(f_s) = s^2 b(f) for f_s(x) = s^(d/2) f(s x), the
supremum equals sup_f a^2/(4b), which is what the solver maximises.

Profiles live on a uniform radial grid.  The Coulomb term is evaluated by
the shell theorem (cumulative sums, O(N)), and for d = 5 by two successive
Newton-potential solves.  All discrete formulas are homogeneous in the grid
spacing, so rescaling a profile is exact on the grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import isotonic_regression
from scipy.special import gamma as gamma_fn

from .moments import jackknife_log_mean_exp

__all__ = [
    "RadialProfile",
    "functional_value",
    "solve_variational",
    "VariationalResult",
    "gaussian_profile",
    "gaussian_terms",
    "theta_estimate",
    "ThetaEstimate",
    "sphere_area",
    "scale_free_value",
]


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


@dataclass
class RadialProfile:
    """f(r_i) on r_i = i*h, i = 0..N, with f(r_N) = 0."""

    values: np.ndarray
    h: float
    d: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.d not in (3, 5):
            raise ValueError("only d = 3 and d = 5 are supported")
        if self.values.ndim != 1 or self.values.size < 3:
            raise ValueError("profile needs at least three grid points")
        if np.any(self.values < 0):
            raise ValueError("profile values must be nonnegative")

    @property
    def N(self) -> int:
        return self.values.size - 1

    @property
    def r(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)

    @property
    def r_max(self) -> float:
        return self.h * self.N

    def cell_weights(self) -> np.ndarray:
        """int r^(d-1) dr over the cell of each node (half cells at both ends)."""
        r, h, d = self.r, self.h, self.d
        hi = np.minimum(r + h / 2, self.r_max)
        lo = np.maximum(r - h / 2, 0.0)
        return (hi**d - lo**d) / d

    def norm2(self) -> float:
        return sphere_area(self.d) * float(np.dot(self.cell_weights(), self.values**2))

    def normalized(self) -> "RadialProfile":
        v = self.values.copy()
        v[-1] = 0.0
        out = RadialProfile(v, self.h, self.d)
        return RadialProfile(v / math.sqrt(out.norm2()), self.h, self.d)

    def scaled(self, s: float) -> "RadialProfile":
        """f_s(x) = s^(d/2) f(s x), represented on the grid of spacing h/s."""
        return RadialProfile(self.values * s ** (self.d / 2), self.h / s, self.d)

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "f"])
        for r, f in zip(self.r, self.values):
            writer.writerow([f"{r:.10g}", f"{f:.10g}"])


def gaussian_profile(d: int, sigma: float, N: int = 400, r_max: float | None = None) -> RadialProfile:
    """Normalised profile whose square is the N(0, sigma^2 I_d) density."""
    r_max = r_max or 12 * sigma
    h = r_max / N
    r = h * np.arange(N + 1)
    f = (2 * math.pi * sigma**2) ** (-d / 4) * np.exp(-(r**2) / (4 * sigma**2))
    return RadialProfile(f, h, d).normalized()


def gaussian_terms(d: int, sigma: float) -> tuple[float, float]:
    """Exact (a, b) for the Gaussian profile of width sigma."""
    s = math.sqrt(2) * sigma  # |X - Y| for independent N(0, sigma^2) points
    inv_mean = math.gamma((d - 1) / 2) / (math.sqrt(2) * s * math.gamma(d / 2))
    weight = 1 / (4 * math.pi) if d == 3 else 1 / (16 * math.pi**2)
    return weight * inv_mean, d / (4 * sigma**2)


# ---------------------------------------------------------------------------
# discrete functionals


def _newton(profile_r: np.ndarray, h: float, d: int, w: np.ndarray, density: np.ndarray) -> np.ndarray:
    """Potential of a radial density for the -Lap Green kernel, by the shell theorem.

    K(r, s) = 1 / ((d-2) S_d max(r, s)^(d-2)); mass in node j is S_d w_j rho_j.
    The self-cell at the origin uses the centre potential of a uniform ball.
    """
    S = sphere_area(d)
    mass = S * w * density
    r_eff = profile_r.copy()
    r_eff[0] = 0.5 * h * (2.0 / d) ** (1.0 / (d - 2))
    inv = r_eff ** (2 - d) / ((d - 2) * S)
    inner = np.cumsum(mass)  # j <= i
    outer = np.concatenate([np.cumsum((mass * inv)[::-1])[::-1][1:], [0.0]])  # j > i
    return inv * inner + outer


def _potential(profile: RadialProfile) -> np.ndarray:
    """Interaction potential (w_d * f^2)(r_i) on the grid."""
    d, h, r = profile.d, profile.h, profile.r
    w = profile.cell_weights()
    rho = profile.values**2
    psi = _newton(r, h, d, w, rho)
    if d == 3:
        return psi
    # d = 5: Lap^2 kernel = (-Lap)^-1 applied twice; psi has an r^-3 tail beyond R
    S = sphere_area(d)
    total = S * float(np.dot(w, rho))
    phi = _newton(r, h, d, w, psi)
    R = profile.r_max
    return phi + total / ((d - 2) ** 2 * S * (d - 4) * R ** (d - 4))


def _gradient_energy(profile: RadialProfile) -> float:
    f, h, d = profile.values, profile.h, profile.d
    r = profile.r
    shell = (r[1:] ** d - r[:-1] ** d) / d
    return sphere_area(d) * float(np.sum(((f[1:] - f[:-1]) / h) ** 2 * shell))


def functional_value(profile: RadialProfile, *, tol: float = 1e-10) -> tuple[float, float, float]:
    """Return (a, b, a - b) for a normalised profile."""
    m = profile.norm2()
    if abs(m - 1.0) > tol:
        raise ValueError(f"profile is not normalised (||f||^2 = {m:.12g})")
    if profile.values[-1] != 0.0:
        raise ValueError("profile must vanish at r_max")
    S = sphere_area(profile.d)
    a = S * float(np.dot(profile.cell_weights() * profile.values**2, _potential(profile)))
    b = _gradient_energy(profile)
    return a, b, a - b


def scale_free_value(profile: RadialProfile) -> float:
    a, b, _ = functional_value(profile, tol=1e-8)
    return a * a / (4 * b)


# ---------------------------------------------------------------------------
# solver


@dataclass
class VariationalResult:
    d: int
    value: float
    profile: RadialProfile
    work_profile: RadialProfile
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)
    projections: int = 0

    @property
    def lam(self) -> float:
        """Scale factor taking the working profile to the maximiser of a - b."""
        return self.work_profile.h / self.profile.h


def _coupling_for_width(d: int, sigma: float) -> float:
    """Coupling c for which the Gaussian optimum of c*a - b has width sigma."""
    A, B = gaussian_terms(d, 1.0)
    B = d / 4
    return 2 * B / (A * sigma)


def solve_variational(
    d: int,
    N: int = 400,
    r_max: float = 20.0,
    *,
    start: str = "gaussian",
    mixing: float = 0.5,
    tol: float = 1e-10,
    max_sweeps: int = 500,
) -> VariationalResult:
    """Maximise a^2/(4b) over normalised radial profiles.

    Self-consistent iteration on the Euler-Lagrange equation of c*a - b:
    the new profile is the ground state of -Lap - 2c*phi_f on the grid
    (Dirichlet at r_max), densities are mixed, and a monotone projection
    is applied whenever the ground state is not radially non-increasing.
    The coupling c only sets the working length scale; the returned
    profile is rescaled to the maximiser of a - b.
    """
    if d not in (3, 5):
        raise ValueError("d must be 3 or 5")
    if N < 200 or r_max < 20:
        raise ValueError("need N >= 200 and r_max >= 20")
    c = _coupling_for_width(d, r_max / 10)
    h = r_max / N
    r = h * np.arange(N + 1)
    if start == "gaussian":
        f0 = np.exp(-(r**2) / (4 * (r_max / 10) ** 2))
    elif start == "compact":
        f0 = np.clip(1 - r / (r_max / 3), 0, None) ** 2
    else:
        raise ValueError(f"unknown start {start!r}")
    prof = RadialProfile(f0, h, d).normalized()
    w = prof.cell_weights()[:-1]
    shell = (r[1:] ** d - r[:-1] ** d) / (d * h * h)
    # stiffness D (nodes 0..N-1, f_N = 0): b = S_d f^T D f
    diag = shell.copy()
    diag[1:] += shell[:-1]
    off = -shell[:-1]
    sq = np.sqrt(w)
    rho = prof.values[:-1] ** 2
    history = []
    prev = -math.inf
    converged = False
    projections = 0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        cur = RadialProfile(np.append(np.sqrt(rho), 0.0), h, d).normalized()
        phi = _potential(cur)[:-1]
        dd = diag / w - 2 * c * phi
        ee = off / (sq[:-1] * sq[1:])
        _, vec = eigh_tridiagonal(dd, ee, select="i", select_range=(0, 0))
        g = np.abs(vec[:, 0]) / sq
        if np.any(np.diff(g) > 1e-14 * g.max()):
            g = isotonic_regression(g, weights=w, increasing=False).x
            projections += 1
        new = RadialProfile(np.append(g, 0.0), h, d).normalized()
        rho = (1 - mixing) * rho + mixing * new.values[:-1] ** 2
        val = scale_free_value(RadialProfile(np.append(np.sqrt(rho), 0.0), h, d).normalized())
        history.append(val)
        if abs(val - prev) < tol * abs(val):
            converged = True
            break
        prev = val
    work = RadialProfile(np.append(np.sqrt(rho), 0.0), h, d).normalized()
    a, b, _ = functional_value(work, tol=1e-8)
    value = a * a / (4 * b)
    lam = a / (2 * b)
    return VariationalResult(d, value, work.scaled(lam), work, sweeps, converged, history, projections)


# ---------------------------------------------------------------------------
# Brownian functional


@dataclass
class ThetaEstimate:
    t: float
    alpha: float
    value: float
    stderr: float
    n_paths: int
    n_steps: int


@numba.njit(cache=True)
def _double_integrals(n_paths, n_steps, dt, seed):
    np.random.seed(seed)
    out = np.empty(n_paths)
    pos = np.empty((n_steps + 1, 3))
    mid = np.empty((n_steps, 3))
    sd = math.sqrt(dt)
    for k in range(n_paths):
        pos[0, :] = 0.0
        for i in range(n_steps):
            for c in range(3):
                pos[i + 1, c] = pos[i, c] + sd * np.random.standard_normal()
        for i in range(n_steps):
            for c in range(3):
                mid[i, c] = 0.5 * (pos[i, c] + pos[i + 1, c])
        acc = 0.0
        for i in range(n_steps):
            for j in range(i + 1, n_steps):
                lag = (j - i) * dt
                if lag > 40.0:
                    break
                dx = mid[j, 0] - mid[i, 0]
                dy = mid[j, 1] - mid[i, 1]
                dz = mid[j, 2] - mid[i, 2]
                acc += math.exp(-lag) / math.sqrt(dx * dx + dy * dy + dz * dz)
        out[k] = acc * dt * dt
    return out


def _mean_kernel(v):
    # E exp(-v)/|B(u) - B(s)| for u - s = v in three dimensions
    return math.exp(-v) * math.sqrt(2.0 / (math.pi * v))


def _cell_corrections(n_steps: int, dt: float) -> float:
    """Expected gap between the exact double integral and the midpoint sum.

    Diagonal cells are dropped by the midpoint sum; off-diagonal cells at
    lag m see |m_l - m_k| with variance (m - 1/2) dt per coordinate.  Adding
    the difference of expectations removes the leading discretisation bias.
    """
    total = n_steps * quad(lambda z: (dt - z) * _mean_kernel(z), 0, dt)[0]
    for m in range(1, min(n_steps, int(40.0 / dt) + 1)):
        exact = quad(lambda z: (dt - abs(z)) * _mean_kernel(m * dt + z), -dt, dt, points=[0.0])[0]
        approx = dt * dt * math.exp(-m * dt) * math.sqrt(2.0 / (math.pi * (m - 0.5) * dt))
        total += (n_steps - m) * (exact - approx)
    return total


def theta_estimate(t: float, alpha: float, n_paths: int, seed=0, *, n_steps: int | None = None) -> ThetaEstimate:
    """Monte Carlo estimate of (1/(alpha^2 t)) log E exp(alpha * I_t).

    I_t = int_0^t ds int_s^t du exp(-(u-s)) / |B(u) - B(s)| for 3-d Brownian
    motion, discretised with midpoint cells plus an expectation correction
    for the near-diagonal cells.
    High variance; a qualitative demonstration only.
    """
    if t <= 0 or alpha <= 0:
        raise ValueError("t and alpha must be positive")
    n_steps = n_steps or max(10, int(math.ceil(t / 0.01)))
    rng = np.random.default_rng(seed)
    dt = t / n_steps
    ints = _double_integrals(int(n_paths), int(n_steps), dt, int(rng.integers(2**31 - 1)))
    ints += _cell_corrections(int(n_steps), dt)
    est, se, _ = jackknife_log_mean_exp(alpha * ints)
    scale = 1.0 / (alpha**2 * t)
    return ThetaEstimate(t, alpha, float(est[0] * scale), float(se[0] * scale), int(n_paths), int(n_steps))
