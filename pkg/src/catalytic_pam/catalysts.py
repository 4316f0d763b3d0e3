"""Exact event-driven simulation of the three catalyst dynamics.

Each catalyst is run with a constant total event rate, so a segment of
length ``dt`` carries Poisson(rate * dt) events at uniform order-statistic
times.  The per-event choices are drawn in bulk from a numpy Generator and
applied by a jitted loop:

* ISRW  -- rate = number of particles; a uniform particle steps to a
  uniform nearest neighbour.
* SEP   -- rate = n_sites / 2; a uniform site x and a kernel offset pick the
  bond {x, x+o}, whose contents are swapped (stirring).
* SVM   -- rate = n_sites; a uniform site y copies the opinion of y + o.

A realisation is stored as a :class:`CatalystPath`: the initial state plus
an event log, with per-site change lists built on first use for fast
``query`` and occupation-time lookups.
"""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy import stats

from .lattice import KernelSpec, LatticeSpec

__all__ = [
    "Kind",
    "CatalystModel",
    "CatalystState",
    "CatalystPath",
    "sample_initial",
    "evolve",
    "simulate_path",
    "query",
    "stationarity_check",
    "StationarityReport",
    "write_path",
    "read_path",
]


class Kind(str, enum.Enum):
    ISRW = "ISRW"
    SEP = "SEP"
    SVM = "SVM"


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class CatalystModel:
    kind: Kind
    rho: float
    kernel: KernelSpec | None = None
    start: str = "product"
    burn_in: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.ISRW:
            if not self.rho > 0 or not np.isfinite(self.rho):
                raise ValueError("ρ ∈ (0,∞) required for ISRW")
        elif not 0 < self.rho < 1:
            raise ValueError(f"ρ ∈ (0,1) required for {self.kind.value}")
        if self.start not in ("product", "burned-in"):
            raise ValueError(f"unknown start {self.start!r}")
        if self.start == "burned-in" and self.kind is not Kind.SVM:
            raise ValueError("burned-in start is only defined for SVM")

    def kernel_for(self, lattice: LatticeSpec) -> KernelSpec:
        if self.kind is Kind.ISRW or self.kernel is None:
            return KernelSpec.simple(lattice.d)
        if self.kernel.d != lattice.d:
            raise ValueError("kernel and lattice dimensions differ")
        return self.kernel

    def total_rate(self, state: "CatalystState") -> float:
        n = state.values.size
        if self.kind is Kind.ISRW:
            return float(len(state.positions))
        if self.kind is Kind.SEP:
            return 0.5 * n
        return float(n)

    def xi_bound(self) -> float | None:
        """Pathwise upper bound of xi, or None if unbounded."""
        return None if self.kind is Kind.ISRW else 1.0


@dataclass
class CatalystState:
    """Catalyst configuration at time ``clock``.

    ``values`` holds counts (ISRW) or bits (SEP/SVM); ``positions`` is the
    ISRW particle list (site of each particle), empty otherwise.
    """

    kind: Kind
    lattice: LatticeSpec
    values: np.ndarray
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    clock: float = 0.0

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.values = np.asarray(self.values, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.values.shape != (self.lattice.n_sites,):
            raise ValueError("state size does not match lattice")
        if self.kind is Kind.ISRW:
            if self.values.sum() != len(self.positions):
                raise ValueError("particle counts disagree with particle list")
        elif np.any((self.values != 0) & (self.values != 1)):
            raise ValueError("exclusion/voter states must be 0/1")

    def copy(self) -> "CatalystState":
        return CatalystState(self.kind, self.lattice, self.values.copy(), self.positions.copy(), self.clock)


# ---------------------------------------------------------------------------
# jitted kernels


@numba.njit(cache=True)
def _run_isrw(counts, positions, nbr, pidx, dirs, ev_a, ev_b, ev_va, ev_vb):
    for k in range(len(pidx)):
        i = pidx[k]
        a = positions[i]
        b = nbr[a, dirs[k]]
        counts[a] -= 1
        counts[b] += 1
        positions[i] = b
        ev_a[k] = a
        ev_b[k] = b
        ev_va[k] = counts[a]
        ev_vb[k] = counts[b]


@numba.njit(cache=True)
def _run_sep(vals, table, sites, offs, ev_a, ev_b, ev_va, ev_vb):
    for k in range(len(sites)):
        a = sites[k]
        b = table[a, offs[k]]
        va = vals[a]
        vals[a] = vals[b]
        vals[b] = va
        ev_a[k] = a
        ev_b[k] = b
        ev_va[k] = vals[a]
        ev_vb[k] = vals[b]


@numba.njit(cache=True)
def _run_svm(vals, table, sites, offs, ev_a, ev_b, ev_va, ev_vb):
    for k in range(len(sites)):
        y = sites[k]
        x = table[y, offs[k]]
        vals[y] = vals[x]
        ev_a[k] = y
        ev_b[k] = x
        ev_va[k] = vals[y]
        ev_vb[k] = vals[x]


@numba.njit(cache=True)
def _replay(vals, ev_a, ev_b, ev_va, ev_vb):
    for k in range(len(ev_a)):
        vals[ev_a[k]] = ev_va[k]
        vals[ev_b[k]] = ev_vb[k]


@numba.njit(cache=True)
def _build_changes(init, t0, ev_t, ev_a, ev_b, ev_va, ev_vb):
    """Per-site change lists in CSR form with running occupation integrals."""
    n = len(init)
    cnt = np.zeros(n + 1, dtype=np.int64)
    cur = init.copy()
    for k in range(len(ev_t)):
        a = ev_a[k]
        if ev_va[k] != cur[a]:
            cnt[a + 1] += 1
            cur[a] = ev_va[k]
        b = ev_b[k]
        if ev_vb[k] != cur[b]:
            cnt[b + 1] += 1
            cur[b] = ev_vb[k]
    ptr = np.cumsum(cnt)
    m = ptr[-1]
    ch_t = np.empty(m)
    ch_v = np.empty(m, dtype=np.int64)
    ch_c = np.empty(m)
    fill = ptr[:-1].copy()
    cur = init.copy()
    last_t = np.full(n, t0)
    acc = np.zeros(n)
    for k in range(len(ev_t)):
        t = ev_t[k]
        for side in range(2):
            s = ev_a[k] if side == 0 else ev_b[k]
            v = ev_va[k] if side == 0 else ev_vb[k]
            if v != cur[s]:
                acc[s] += cur[s] * (t - last_t[s])
                last_t[s] = t
                cur[s] = v
                j = fill[s]
                ch_t[j] = t
                ch_v[j] = v
                ch_c[j] = acc[s]
                fill[s] += 1
    return ptr, ch_t, ch_v, ch_c


@numba.njit(cache=True)
def _occupation(x, s, init, t0, ptr, ch_t, ch_v, ch_c):
    """int_{t0}^{s} xi(x, r) dr from the CSR change list of site x."""
    lo = ptr[x]
    hi = ptr[x + 1]
    j = np.searchsorted(ch_t[lo:hi], s, side="right") - 1
    if j < 0:
        return init[x] * (s - t0)
    return ch_c[lo + j] + ch_v[lo + j] * (s - ch_t[lo + j])


@numba.njit(cache=True)
def _value(x, s, init, ptr, ch_t, ch_v):
    lo = ptr[x]
    hi = ptr[x + 1]
    j = np.searchsorted(ch_t[lo:hi], s, side="right") - 1
    if j < 0:
        return init[x]
    return ch_v[lo + j]


# ---------------------------------------------------------------------------
# path container


@dataclass(frozen=True, eq=False)
class CatalystPath:
    """Immutable realisation of xi on [start, horizon]."""

    initial: CatalystState
    times: np.ndarray
    site_a: np.ndarray
    site_b: np.ndarray
    value_a: np.ndarray
    value_b: np.ndarray
    horizon: float
    final: CatalystState
    seed: object = None

    def __post_init__(self):
        for name in ("times", "site_a", "site_b", "value_a", "value_b"):
            getattr(self, name).setflags(write=False)

    @property
    def kind(self) -> Kind:
        return self.initial.kind

    @property
    def lattice(self) -> LatticeSpec:
        return self.initial.lattice

    @property
    def start(self) -> float:
        return self.initial.clock

    @property
    def n_events(self) -> int:
        return len(self.times)

    @cached_property
    def changes(self):
        ptr, ch_t, ch_v, ch_c = _build_changes(
            self.initial.values, self.start, self.times, self.site_a, self.site_b, self.value_a, self.value_b
        )
        for arr in (ptr, ch_t, ch_v, ch_c):
            arr.setflags(write=False)
        return ptr, ch_t, ch_v, ch_c

    @cached_property
    def xi_max(self) -> int:
        """Largest value of xi anywhere on the path."""
        m = int(self.initial.values.max(initial=0))
        if self.n_events:
            m = max(m, int(self.value_a.max()), int(self.value_b.max()))
        return m

    def _check_time(self, s: float):
        if not self.start <= s <= self.horizon:
            raise ValueError(f"time {s} outside path window [{self.start}, {self.horizon}]")

    def value(self, x: int, s: float) -> int:
        self._check_time(s)
        ptr, ch_t, ch_v, _ = self.changes
        return int(_value(int(x), float(s), self.initial.values, ptr, ch_t, ch_v))

    def occupation(self, x: int, s: float) -> float:
        """int_start^s xi(x, r) dr."""
        self._check_time(s)
        ptr, ch_t, ch_v, ch_c = self.changes
        return float(_occupation(int(x), float(s), self.initial.values, self.start, ptr, ch_t, ch_v, ch_c))

    def field_at(self, s: float) -> np.ndarray:
        """Full configuration at time s by replaying the log."""
        self._check_time(s)
        k = int(np.searchsorted(self.times, s, side="right"))
        vals = self.initial.values.copy()
        _replay(vals, self.site_a[:k], self.site_b[:k], self.value_a[:k], self.value_b[:k])
        return vals


def query(path: CatalystPath, x: int, s: float) -> int:
    """Value of xi(x, s) on a stored path."""
    return path.value(x, s)


# ---------------------------------------------------------------------------
# sampling and evolution


def sample_initial(model: CatalystModel, lattice: LatticeSpec, seed=None) -> CatalystState:
    """Product initial law: Poisson(rho) counts (ISRW) or Bernoulli(rho) bits."""
    rng = as_rng(seed)
    n = lattice.n_sites
    if model.kind is Kind.ISRW:
        counts = rng.poisson(model.rho, size=n).astype(np.int64)
        positions = np.repeat(np.arange(n, dtype=np.int64), counts)
        return CatalystState(model.kind, lattice, counts, positions)
    bits = (rng.random(n) < model.rho).astype(np.int64)
    return CatalystState(model.kind, lattice, bits)


def evolve(state: CatalystState, model: CatalystModel, dt: float, seed=None) -> CatalystPath:
    """Run the catalyst dynamics for time ``dt`` starting from ``state``."""
    if not dt > 0:
        raise ValueError("duration must be positive")
    if state.kind is not model.kind:
        raise ValueError("state and model kinds differ")
    rng = as_rng(seed)
    lattice = state.lattice
    cur = state.copy()
    n_ev = int(rng.poisson(model.total_rate(state) * dt))
    times = state.clock + np.sort(rng.uniform(0.0, dt, n_ev))
    ev_a = np.empty(n_ev, dtype=np.int64)
    ev_b = np.empty(n_ev, dtype=np.int64)
    ev_va = np.empty(n_ev, dtype=np.int64)
    ev_vb = np.empty(n_ev, dtype=np.int64)
    if model.kind is Kind.ISRW:
        pidx = rng.integers(0, len(cur.positions), n_ev) if n_ev else np.zeros(0, dtype=np.int64)
        dirs = rng.integers(0, 2 * lattice.d, n_ev)
        _run_isrw(cur.values, cur.positions, lattice.neighbors, pidx, dirs, ev_a, ev_b, ev_va, ev_vb)
    else:
        kernel = model.kernel_for(lattice)
        table = _kernel_table(lattice, kernel)
        sites = rng.integers(0, lattice.n_sites, n_ev)
        offs = rng.choice(len(kernel.weights), size=n_ev, p=kernel.weights)
        run = _run_sep if model.kind is Kind.SEP else _run_svm
        run(cur.values, table, sites, offs, ev_a, ev_b, ev_va, ev_vb)
    cur.clock = state.clock + dt
    return CatalystPath(state.copy(), times, ev_a, ev_b, ev_va, ev_vb, cur.clock, cur)


_TABLES: dict = {}


def _kernel_table(lattice: LatticeSpec, kernel: KernelSpec) -> np.ndarray:
    key = (lattice, kernel.offsets.tobytes(), kernel.offsets.shape)
    table = _TABLES.get(key)
    if table is None:
        table = lattice.shift_table(kernel.offsets)
        table.setflags(write=False)
        if len(_TABLES) > 64:
            _TABLES.clear()
        _TABLES[key] = table
    return table


def simulate_path(model: CatalystModel, lattice: LatticeSpec, horizon: float, seed=None) -> CatalystPath:
    """Sample the initial state (with SVM burn-in if requested) and evolve to ``horizon``."""
    rng = as_rng(seed)
    state = sample_initial(model, lattice, rng)
    if model.start == "burned-in":
        t_burn = model.burn_in if model.burn_in is not None else float(lattice.L**2)
        if t_burn > 0:
            state = evolve(state, model, t_burn, rng).final
            state.clock = 0.0
    if horizon <= 0:
        return CatalystPath(state.copy(), np.zeros(0), *(np.zeros(0, dtype=np.int64) for _ in range(4)), state.clock, state)
    return evolve(state, model, horizon, rng)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class StationarityReport:
    kind: Kind
    t: float
    n: int
    mean: float
    stderr: float
    initial_mean: float
    expected: float
    chi2_pvalue: float | None = None

    @property
    def z(self) -> float:
        return (self.mean - self.expected) / self.stderr if self.stderr > 0 else 0.0


def stationarity_check(model: CatalystModel, lattice: LatticeSpec, t: float, n: int, seed=None) -> StationarityReport:
    """Mean occupancy at time ``t`` over ``n`` independent replicas.

    Each replica contributes its spatial average.  For ISRW the pooled
    per-site counts are also tested against Poisson(rho) by chi-square.
    """
    if n < 100:
        raise ValueError("need at least 100 replicas")
    rng = as_rng(seed)
    means = np.empty(n)
    init_means = np.empty(n)
    pooled = []
    for r in range(n):
        state = sample_initial(model, lattice, rng)
        init_means[r] = state.values.mean()
        final = evolve(state, model, t, rng).final if t > 0 else state
        means[r] = final.values.mean()
        if model.kind is Kind.ISRW:
            pooled.append(final.values)
    pvalue = None
    if model.kind is Kind.ISRW:
        pvalue = _poisson_chi2(np.concatenate(pooled), model.rho)
    return StationarityReport(
        kind=model.kind,
        t=t,
        n=n,
        mean=float(means.mean()),
        stderr=float(means.std(ddof=1) / np.sqrt(n)),
        initial_mean=float(init_means.mean()),
        expected=model.rho,
        chi2_pvalue=pvalue,
    )


def _poisson_chi2(counts: np.ndarray, rho: float) -> float:
    kmax = 0
    while stats.poisson.sf(kmax, rho) * len(counts) >= 5:
        kmax += 1
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax + 1), rho)
    probs[-1] += stats.poisson.sf(kmax, rho)
    return float(stats.chisquare(observed, probs * len(counts)).pvalue)


# ---------------------------------------------------------------------------
# binary dump

_MAGIC = b"CPAMPATH"
_VERSION = 1
_RECORD = np.dtype([("t", "<f8"), ("a", "<i8"), ("b", "<i8"), ("va", "<i8"), ("vb", "<i8")])


def write_path(path: CatalystPath, fh, *, rho: float | None = None, seed=None) -> None:
    """Write a versioned binary dump: magic, header, initial state, event records."""
    lat = path.lattice
    header = {
        "kind": path.kind.value,
        "d": lat.d,
        "L": lat.L,
        "rho": rho,
        "seed": seed if seed is not None else path.seed,
        "start": path.start,
        "horizon": path.horizon,
        "n_events": path.n_events,
        "n_particles": len(path.initial.positions),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    fh.write(_MAGIC + struct.pack("<HI", _VERSION, len(blob)) + blob)
    fh.write(path.initial.values.astype("<i8").tobytes())
    fh.write(path.initial.positions.astype("<i8").tobytes())
    rec = np.empty(path.n_events, dtype=_RECORD)
    rec["t"], rec["a"], rec["b"] = path.times, path.site_a, path.site_b
    rec["va"], rec["vb"] = path.value_a, path.value_b
    fh.write(rec.tobytes())


def read_path(fh) -> tuple[CatalystPath, dict]:
    """Inverse of :func:`write_path`; the final state is rebuilt by replay."""
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("not a catalyst path dump")
    version, hlen = struct.unpack("<HI", fh.read(6))
    if version != _VERSION:
        raise ValueError(f"unsupported dump version {version}")
    header = json.loads(fh.read(hlen))
    lat = LatticeSpec(header["d"], header["L"])
    values = np.frombuffer(fh.read(8 * lat.n_sites), dtype="<i8").astype(np.int64)
    positions = np.frombuffer(fh.read(8 * header["n_particles"]), dtype="<i8").astype(np.int64)
    rec = np.frombuffer(fh.read(_RECORD.itemsize * header["n_events"]), dtype=_RECORD)
    init = CatalystState(header["kind"], lat, values, positions, header["start"])
    path = CatalystPath(
        init,
        rec["t"].copy(),
        rec["a"].astype(np.int64),
        rec["b"].astype(np.int64),
        rec["va"].astype(np.int64),
        rec["vb"].astype(np.int64),
        header["horizon"],
        init,
        header["seed"],
    )
    final_vals = path.field_at(path.horizon)
    final = CatalystState(init.kind, lat, final_vals, _replay_positions(path), path.horizon)
    object.__setattr__(path, "final", final)
    return path, header


def _replay_positions(path: CatalystPath) -> np.ndarray:
    if path.kind is not Kind.ISRW:
        return np.zeros(0, dtype=np.int64)
    # particle identities are not logged; rebuild a canonical sorted list
    vals = path.field_at(path.horizon)
    return np.repeat(np.arange(len(vals), dtype=np.int64), vals)


def dumps_path(path: CatalystPath, **kw) -> bytes:
    buf = io.BytesIO()
    write_path(path, buf, **kw)
    return buf.getvalue()
