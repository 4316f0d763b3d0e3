"""Torus geometry, random-walk kernels and lattice Green constants.

Simulations run on the discrete torus (Z/LZ)^d.  The Green constants

    G_d  = int_0^inf p_t(0,0) dt,       G*_d = int_0^inf t p_t(0,0) dt

are infinite-volume objects and are computed on Z^d directly, either by
Fourier quadrature of (2pi)^-d int dk / (1 - phi(k))^m or, for the simple
random walk, by integrating the Bessel factorisation of p_t(0,0) in time.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

__all__ = [
    "ExtendedReal",
    "LatticeSpec",
    "KernelSpec",
    "laplacian_apply",
    "heat_kernel_origin",
    "heat_kernel_origin_fourier",
    "torus_heat_kernel",
    "green_function",
    "green_star",
]


@dataclass(frozen=True)
class ExtendedReal:
    """A real number or an explicit +infinity tag.

    ``float(x)`` gives ``math.inf`` for the tagged value, so arithmetic
    stays possible, but the tag is what callers should test.
    """

    value: float = math.nan
    infinite: bool = False
    method: str = ""
    tolerance: float = 0.0

    @classmethod
    def inf(cls, method: str = "") -> "ExtendedReal":
        return cls(math.inf, True, method)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        return math.inf if self.infinite else float(self.value)

    def __str__(self) -> str:
        return "inf" if self.infinite else f"{self.value:.10g}"


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic box of side ``L`` in ``d`` dimensions, row-major indexing.

    ``L == 2`` is accepted but each neighbour then appears twice in the
    neighbour table (doubled bond multiplicity); see ``flagged``.
    """

    d: int
    L: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"torus side must be an integer >= 2, got {self.L!r}")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def flagged(self) -> bool:
        """True when neighbours are not distinct (L == 2)."""
        return self.L == 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    def index(self, coords) -> np.ndarray | int:
        c = np.mod(np.asarray(coords, dtype=np.int64), self.L)
        if c.shape[-1] != self.d:
            raise ValueError(f"coordinates need a trailing axis of length {self.d}")
        idx = np.ravel_multi_index(np.moveaxis(c, -1, 0), self.shape)
        return int(idx) if np.ndim(idx) == 0 else idx

    def coords(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n_sites):
            raise ValueError("site index out of range")
        return np.stack(np.unravel_index(idx, self.shape), axis=-1)

    def shift_table(self, offsets) -> np.ndarray:
        """Return ``T[x, j]`` = index of site ``x + offsets[j]`` (periodic)."""
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.int64))
        grid = self.coords(np.arange(self.n_sites))
        table = np.empty((self.n_sites, len(offsets)), dtype=np.int64)
        for j, off in enumerate(offsets):
            table[:, j] = self.index(grid + off)
        return table

    @cached_property
    def neighbors(self) -> np.ndarray:
        """Nearest-neighbour table of shape (n_sites, 2d)."""
        return self.shift_table(_unit_offsets(self.d))

    @property
    def origin(self) -> int:
        return 0


def _unit_offsets(d: int) -> np.ndarray:
    offs = []
    for i in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        offs.extend([e, -e])
    return np.array(offs)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Symmetric, finite-range random-walk kernel p(x, x + offset) = weight."""

    offsets: np.ndarray
    weights: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        offs = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "weights", w)
        if len(offs) != len(w):
            raise ValueError("offsets and weights differ in length")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("kernel weights must be nonnegative and sum to 1")
        if np.any(np.all(offs == 0, axis=1)):
            raise ValueError("kernel may not contain the zero offset")
        table = {tuple(o): wi for o, wi in zip(offs.tolist(), w)}
        if len(table) != len(offs):
            raise ValueError("duplicate offsets in kernel")
        for o, wi in table.items():
            if not math.isclose(table.get(tuple(-x for x in o), -1.0), wi, abs_tol=1e-15):
                raise ValueError(f"kernel is not symmetric at offset {o}")
        if not _generates_lattice(offs[w > 0]):
            raise ValueError("kernel is not irreducible on Z^d")

    @classmethod
    def simple(cls, d: int) -> "KernelSpec":
        """Simple random walk: weight 1/2d on each nearest neighbour."""
        offs = _unit_offsets(d)
        return cls(offs, np.full(len(offs), 1.0 / (2 * d)), name="srw")

    @property
    def d(self) -> int:
        return self.offsets.shape[1]

    @property
    def is_simple(self) -> bool:
        return self.name == "srw" or (
            len(self.offsets) == 2 * self.d
            and np.all(np.abs(self.offsets).sum(axis=1) == 1)
            and np.allclose(self.weights, 1.0 / (2 * self.d))
        )

    @property
    def recurrent(self) -> bool:
        # finite range and symmetric => finite variance => recurrent iff d <= 2
        return self.d <= 2

    @property
    def reflection_symmetric(self) -> bool:
        table = {tuple(o): wi for o, wi in zip(self.offsets.tolist(), self.weights)}
        for o, wi in table.items():
            for axis in range(self.d):
                r = list(o)
                r[axis] = -r[axis]
                if not math.isclose(table.get(tuple(r), -1.0), wi, abs_tol=1e-15):
                    return False
        return True

    def phi(self, k: np.ndarray) -> np.ndarray:
        """Characteristic function sum_o w_o cos(k . o); ``k`` has trailing axis d."""
        return np.tensordot(np.cos(k @ self.offsets.T.astype(float)), self.weights, axes=1)

    def one_minus_phi(self, k: np.ndarray) -> np.ndarray:
        # 2 sin^2(x/2) avoids cancellation near k = 0
        s = np.sin(0.5 * (k @ self.offsets.T.astype(float)))
        return np.tensordot(2.0 * s * s, self.weights, axes=1)

    def matrix(self, lattice: LatticeSpec):
        """Sparse transition matrix of the kernel on the torus."""
        from scipy import sparse

        if lattice.d != self.d:
            raise ValueError("kernel and lattice dimensions differ")
        table = lattice.shift_table(self.offsets)
        n = lattice.n_sites
        rows = np.repeat(np.arange(n), len(self.weights))
        P = sparse.csr_matrix(
            (np.tile(self.weights, n), (rows, table.ravel())), shape=(n, n)
        )
        P.sum_duplicates()
        return P


def _generates_lattice(offsets: np.ndarray) -> bool:
    d = offsets.shape[1]
    if len(offsets) < d:
        return False
    g = 0
    for rows in itertools.combinations(range(len(offsets)), d):
        det = int(round(np.linalg.det(offsets[list(rows)].astype(float))))
        g = math.gcd(g, abs(det))
        if g == 1:
            return True
    return False


# ---------------------------------------------------------------------------
# operators


def laplacian_apply(field: np.ndarray, lattice: LatticeSpec) -> np.ndarray:
    """Discrete Laplacian sum_{|y-x|=1} [f(y) - f(x)] with periodic wrap."""
    f = np.asarray(field, dtype=float)
    if f.shape != (lattice.n_sites,):
        raise ValueError(f"field has shape {f.shape}, expected ({lattice.n_sites},)")
    nb = lattice.neighbors
    return f[nb].sum(axis=1) - nb.shape[1] * f


def heat_kernel_origin(t: float, d: int) -> float:
    """Return p_t(0,0) for the rate-1 simple random walk on Z^d.

    Uses the coordinate factorisation [exp(-t/d) I_0(t/d)]^d.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    return float(special.ive(0, t / d) ** d)


def heat_kernel_origin_fourier(t: float, d: int, n: int | None = None, kernel: KernelSpec | None = None) -> float:
    """p_t(0,0) from the full d-dimensional Fourier integral.

    The integrand exp(-t(1 - phi(k))) is smooth and periodic, so an
    ``n**d`` uniform grid converges geometrically.  No factorisation is
    used; this is the independent route for checking the Bessel formula.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    kernel = kernel or KernelSpec.simple(d)
    n = n or {4: 32, 5: 20}.get(d, 48 if d < 4 else 12)
    k1 = -np.pi + 2 * np.pi * np.arange(n) / n
    total = 0.0
    # chunk over the first axis to cap memory at n**(d-1) points
    rest = np.stack(np.meshgrid(*([k1] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1) if d > 1 else np.zeros((1, 0))
    for k0 in k1:
        k = np.concatenate([np.full((len(rest), 1), k0), rest], axis=1)
        total += np.exp(-t * kernel.one_minus_phi(k)).sum()
    return float(total / n**d)


def torus_heat_kernel(t: float, lattice: LatticeSpec, kernel: KernelSpec | None = None) -> np.ndarray:
    """Transition probabilities p_t(0, x) of the rate-1 walk on the torus."""
    kernel = kernel or KernelSpec.simple(lattice.d)
    k1 = 2 * np.pi * np.fft.fftfreq(lattice.L)
    k = np.stack(np.meshgrid(*([k1] * lattice.d), indexing="ij"), axis=-1)
    spectrum = np.exp(-t * kernel.one_minus_phi(k))
    p = np.real(np.fft.ifftn(spectrum))
    return p.reshape(-1)


# ---------------------------------------------------------------------------
# Green constants


def _fourier_singular_integral(kernel: KernelSpec, power: int, n: int) -> float:
    """(2pi)^-d int_{[-pi,pi]^d} (1 - phi(k))^-power dk.

    The cube is split into orthants and each orthant into d pyramids
    (largest coordinate fixed).  In pyramid coordinates k = pi*u*(s, 1)
    the Jacobian u^(d-1) absorbs the |k|^(-2*power) singularity, leaving an
    analytic integrand for Gauss-Legendre in every direction.
    """
    d = kernel.d
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if d > 1:
        s = np.stack(np.meshgrid(*([x] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
        ws = np.prod(np.stack(np.meshgrid(*([w] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1), axis=1)
    else:
        s = np.zeros((1, 0))
        ws = np.ones(1)
    if kernel.reflection_symmetric:
        signs = [np.ones(d)]
    else:
        signs = [np.array(sg, dtype=float) for sg in itertools.product((1.0, -1.0), repeat=d)]
    total = 0.0
    for sg in signs:
        for axis in range(d):
            for u, wu in zip(x, w):
                k = np.insert(u * s, axis, u, axis=1) * np.pi * sg
                vals = u ** (d - 1) / kernel.one_minus_phi(k) ** power
                total += wu * np.dot(ws, vals)
    # (2pi)^-d * pi^d per orthant; orthants counted explicitly or by symmetry
    scale = 1.0 if len(signs) > 1 else 2.0**d
    return float(total * scale / 2.0**d)


def _srw_time_integral(d: int, moment: int, horizon: float) -> tuple[float, float]:
    """int_0^horizon t^moment p_t(0,0) dt plus asymptotic tail beyond horizon.

    The second value is the size of the last tail correction, a
    conservative bound on the truncation error.
    """
    edges = np.concatenate([[0.0], np.geomspace(1e-2, horizon, 40)])
    x, w = np.polynomial.legendre.leggauss(40)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        t = 0.5 * (b - a) * x + 0.5 * (b + a)
        total += 0.5 * (b - a) * np.dot(w, t**moment * special.ive(0, t / d) ** d)
    # p_t ~ (d/(2 pi t))^(d/2) * (1 + d^2/(8t)) for large t
    c = (d / (2 * np.pi)) ** (d / 2)
    e0 = d / 2 - moment
    correction = c * d**2 / 8 * horizon ** (-e0) / e0
    tail = c * horizon ** (1 - e0) / (e0 - 1) + correction
    return float(total + tail), abs(correction)


def _check_kernel(d: int, kernel: KernelSpec | None) -> KernelSpec:
    kernel = kernel or KernelSpec.simple(d)
    if kernel.d != d:
        raise ValueError(f"kernel dimension {kernel.d} does not match d={d}")
    return kernel


def _fourier_with_error(kernel: KernelSpec, power: int, n: int) -> ExtendedReal:
    # error estimate: change against a run at two thirds of the resolution
    fine = _fourier_singular_integral(kernel, power, n)
    coarse = _fourier_singular_integral(kernel, power, max(4, (2 * n) // 3))
    return ExtendedReal(fine, method="fourier", tolerance=abs(fine - coarse))


def green_function(
    d: int,
    kernel: KernelSpec | None = None,
    *,
    method: str = "fourier",
    n: int | None = None,
    horizon: float = 1e4,
) -> ExtendedReal:
    """Green function at the origin, G_d = int_0^inf p_t(0,0) dt.

    ``method="fourier"`` integrates 1/(1 - phi) over the Brillouin zone;
    ``method="time"`` integrates the Bessel factorisation to ``horizon``
    with an analytic t^(-d/2) tail (simple random walk only).
    Returns the +inf tag for recurrent dimensions.
    """
    kernel = _check_kernel(d, kernel)
    if d <= 2:
        return ExtendedReal.inf(method)
    if method == "fourier":
        n = n or {3: 24, 4: 16, 5: 12}.get(d, 10)
        return _fourier_with_error(kernel, 1, n)
    if method == "time":
        if not kernel.is_simple:
            raise ValueError("time-domain route needs the simple random walk")
        value, err = _srw_time_integral(d, 0, horizon)
        return ExtendedReal(value, method="time", tolerance=err)
    raise ValueError(f"unknown method {method!r}")


def green_star(
    d: int,
    kernel: KernelSpec | None = None,
    *,
    method: str = "fourier",
    n: int | None = None,
    horizon: float = 1e4,
) -> ExtendedReal:
    """G*_d = int_0^inf t p_t(0,0) dt; finite only for d >= 5."""
    kernel = _check_kernel(d, kernel)
    if d <= 4:
        return ExtendedReal.inf(method)
    if method == "fourier":
        n = n or {5: 12, 6: 10}.get(d, 8)
        if d > 6:
            warnings.warn("Fourier quadrature above d=6 is slow and coarse", stacklevel=2)
        return _fourier_with_error(kernel, 2, n)
    if method == "time":
        if not kernel.is_simple:
            raise ValueError("time-domain route needs the simple random walk")
        value, err = _srw_time_integral(d, 1, horizon)
        return ExtendedReal(value, method="time", tolerance=err)
    raise ValueError(f"unknown method {method!r}")


def green_star_integrand(t: float, d: int) -> float:
    """t * p_t(0,0) for the simple random walk."""
    return t * heat_kernel_origin(t, d)
