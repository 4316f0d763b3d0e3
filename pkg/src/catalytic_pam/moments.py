"""Annealed moments E[u(0,t)^p]: ensemble estimators and exact oracles.

All averages are taken in the log domain.  Replica samples are reduced in
replica-id order, so a fixed master seed gives bit-identical output, and
standard errors come from the leave-one-out jackknife, whose replica-level
values are kept on the series for downstream fits.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply
from scipy.special import logsumexp

from .catalysts import CatalystModel, Kind, simulate_path
from .lattice import ExtendedReal, KernelSpec, LatticeSpec
from .reactant import ModelParams, exact_static_solution, fk_estimate, integrate_pde

__all__ = [
    "MomentSeries",
    "replica_seed",
    "annealed_moment",
    "annealed_moments",
    "log_mean_exp",
    "jackknife_log_mean_exp",
    "exact_moment_small",
    "joint_generator",
    "StateSpaceTooLarge",
    "isrw_lambda0_oracle",
    "isrw_lambda0_series",
    "closed_form_lambda0",
    "torus_size",
]


def replica_seed(master: int, index: int) -> int:
    """Stable 64-bit stream seed for replica ``index`` of a run."""
    h = hashlib.blake2b(f"{int(master)}:{int(index)}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def log_mean_exp(x: np.ndarray, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return logsumexp(x, axis=axis) - math.log(x.shape[axis])


def jackknife_log_mean_exp(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-mean-exp over axis 0 with leave-one-out values and jackknife stderr.

    Leave-one-out sums use prefix/suffix log-sum-exp, so a single dominant
    replica does not cause cancellation.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    est = log_mean_exp(x)
    if n < 2:
        return est, np.zeros_like(est), np.empty((0, x.shape[1]))
    pre = np.logaddexp.accumulate(x, axis=0)
    suf = np.logaddexp.accumulate(x[::-1], axis=0)[::-1]
    loo = np.empty_like(x)
    loo[0] = suf[1]
    loo[-1] = pre[-2]
    if n > 2:
        loo[1:-1] = np.logaddexp(pre[:-2], suf[2:])
    loo -= math.log(n - 1)
    dev = loo - loo.mean(axis=0)
    se = np.sqrt((n - 1) / n * np.sum(dev * dev, axis=0))
    return est, se, loo


@dataclass
class MomentSeries:
    """log E[u(0,t)^p] on a time grid, with jackknife errors."""

    p: int
    t: np.ndarray
    log_moment: np.ndarray
    stderr: np.ndarray
    n_reps: int
    provenance: dict = field(default_factory=dict)
    loo: np.ndarray | None = None
    flags: set = field(default_factory=set)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.log_moment = np.asarray(self.log_moment, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if np.any(self.stderr < 0):
            raise ValueError("standard errors must be nonnegative")
        self.log_moment[self.t == 0] = 0.0

    def lyapunov_function(self) -> np.ndarray:
        """Lambda_p(t) = log E[u^p] / (p t); nan at t = 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.t > 0, self.log_moment / (self.p * self.t), np.nan)

    def lyapunov_stderr(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.t > 0, self.stderr / (self.p * self.t), np.nan)

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "log_moment", "stderr", "n_reps"])
        for t, m, s in zip(self.t, self.log_moment, self.stderr):
            writer.writerow([f"{t:.10g}", f"{m:.10g}", f"{s:.10g}", self.n_reps])

    def manifest(self) -> str:
        doc = {"p": self.p, "n_reps": self.n_reps, "flags": sorted(self.flags), **self.provenance}
        return json.dumps(doc, sort_keys=True, indent=2, default=str)

    @classmethod
    def from_csv(cls, fh, p: int = 1) -> "MomentSeries":
        rows = list(csv.DictReader(fh))
        return cls(
            p=p,
            t=[float(r["t"]) for r in rows],
            log_moment=[float(r["log_moment"]) for r in rows],
            stderr=[float(r["stderr"]) for r in rows],
            n_reps=int(rows[0]["n_reps"]) if rows else 0,
        )


def torus_size(d: int, kappa: float, horizon: float, margin: int = 2) -> int:
    """Heuristic side length 6*ceil(sqrt(max(1, 2d kappa) T)) + margin."""
    return 6 * math.ceil(math.sqrt(max(1.0, 2 * d * kappa) * horizon)) + margin


def _check_params(model: CatalystModel, params: ModelParams):
    if not math.isclose(model.rho, params.rho):
        raise ValueError(f"model density {model.rho} differs from params rho {params.rho}")


def annealed_moment(
    model: CatalystModel,
    params: ModelParams,
    lattice: LatticeSpec,
    t_grid,
    n_reps: int,
    estimator: str = "pde-ensemble",
    seed: int = 0,
    *,
    h_max: float | None = None,
) -> MomentSeries:
    """Estimate log E[u(0,t)^p] over ``n_reps`` independent catalyst paths.

    ``pde-ensemble`` solves the reactant equation per path (exactly per site
    when kappa = 0); ``fk-dual`` uses the product of p fresh Feynman-Kac
    walks per path and time point.  Replica r uses stream seed
    ``replica_seed(seed, r)``.
    """
    return annealed_moments(model, params, lattice, t_grid, n_reps, estimator, seed, [params.p], h_max=h_max)[params.p]


def annealed_moments(
    model: CatalystModel,
    params: ModelParams,
    lattice: LatticeSpec,
    t_grid,
    n_reps: int,
    estimator: str = "pde-ensemble",
    seed: int = 0,
    p_values=None,
    *,
    h_max: float | None = None,
) -> dict[int, MomentSeries]:
    """Moment series for several orders p from one set of catalyst paths.

    With ``pde-ensemble`` every order reuses log u(0,t) of the same path;
    with ``fk-dual`` the first p of max(p) walks are used for order p.
    """
    _check_params(model, params)
    p_values = sorted(set(p_values or [params.p]))
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("t_grid must be strictly increasing and nonnegative")
    if n_reps < 2:
        raise ValueError("need at least two replicas")
    pmax = p_values[-1]
    logs = np.empty((len(p_values), n_reps, t.size))
    run_params = params.replace(p=pmax)
    for r in range(n_reps):
        rng = np.random.default_rng(replica_seed(seed, r))
        path = simulate_path(model, lattice, float(t[-1]), rng)
        if estimator == "pde-ensemble":
            lu = _log_u_origin(path, run_params, t, estimator, rng, h_max)
            for i, p in enumerate(p_values):
                logs[i, r] = p * lu
        elif estimator == "fk-dual":
            for j, s in enumerate(t):
                res = fk_estimate(path, run_params, t=s, n_walks=pmax, seed=rng)
                for i, p in enumerate(p_values):
                    logs[i, r, j] = res.log_power_sample(p)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    out = {}
    for i, p in enumerate(p_values):
        est, se, loo = jackknife_log_mean_exp(logs[i])
        flags = {"degenerate"} if np.all(logs[i] == logs[i, :1]) else set()
        out[p] = MomentSeries(
            p=p,
            t=t,
            log_moment=est,
            stderr=se,
            n_reps=n_reps,
            provenance={
                "estimator": estimator,
                "seed": int(seed),
                "model": model.kind.value,
                "rho": model.rho,
                "d": lattice.d,
                "L": lattice.L,
                "kappa": params.kappa,
                "gamma": params.gamma,
                "delta": params.delta,
            },
            loo=loo,
            flags=flags,
        )
    return out


def _log_u_origin(path, params, t, estimator, rng, h_max) -> np.ndarray:
    """Per-path log u(0,t) (pde) or mean log walk weight over p walks (fk), on grid t."""
    if estimator == "pde-ensemble":
        if params.kappa == 0.0:
            return np.array([exact_static_solution(path, params, 0, s) for s in t])
        fields = integrate_pde(path, params, out_times=t, h_max=h_max)
        return np.array([f.log_value(0) for f in fields])
    out = np.empty(t.size)
    for j, s in enumerate(t):
        res = fk_estimate(path, params, t=s, n_walks=params.p, seed=rng)
        out[j] = res.log_power_sample(params.p) / params.p
    return out


# ---------------------------------------------------------------------------
# exact small-system oracle


class StateSpaceTooLarge(ValueError):
    pass


def _catalyst_states(model: CatalystModel, lattice: LatticeSpec, cap: int) -> tuple[np.ndarray, np.ndarray]:
    n = lattice.n_sites
    levels = 2 if model.kind is Kind.SEP else cap + 1
    states = np.array(list(itertools.product(range(levels), repeat=n)), dtype=np.int64).reshape(-1, n)
    if model.kind is Kind.SEP:
        logw = np.where(states == 1, math.log(model.rho), math.log1p(-model.rho)).sum(axis=1)
    else:
        k = np.arange(levels)
        lp = k * math.log(model.rho) - model.rho - np.array([math.lgamma(i + 1) for i in k])
        lp -= logsumexp(lp)  # truncated Poisson, renormalised per site
        logw = lp[states].sum(axis=1)
    return states, np.exp(logw - logsumexp(logw))


def _catalyst_generator(model: CatalystModel, lattice: LatticeSpec, states: np.ndarray, cap: int):
    n = lattice.n_sites
    levels = 2 if model.kind is Kind.SEP else cap + 1
    radix = levels ** np.arange(n - 1, -1, -1)
    code = states @ radix
    lookup = np.full(levels**n, -1, dtype=np.int64)
    lookup[code] = np.arange(len(states))
    rows, cols, vals = [], [], []
    if model.kind is Kind.SEP:
        kernel = model.kernel_for(lattice)
        table = lattice.shift_table(kernel.offsets)
        for x in range(n):
            for j, w in enumerate(kernel.weights):
                y = table[x, j]
                new = states.copy()
                new[:, x], new[:, y] = states[:, y], states[:, x]
                # each unordered bond is reached from both ends
                rows.append(np.arange(len(states)))
                cols.append(lookup[new @ radix])
                vals.append(np.full(len(states), 0.5 * w))
    else:
        nbr = lattice.neighbors
        for x in range(n):
            for j in range(nbr.shape[1]):
                y = nbr[x, j]
                ok = (states[:, x] > 0) & (states[:, y] < cap) if x != y else np.zeros(len(states), bool)
                idx = np.nonzero(ok)[0]
                new = states[idx].copy()
                new[:, x] -= 1
                new[:, y] += 1
                rows.append(idx)
                cols.append(lookup[new @ radix])
                vals.append(states[idx, x] / nbr.shape[1])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals).astype(float)
    keep = rows != cols
    m = len(states)
    Q = sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(m, m))
    Q = Q - sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def joint_generator(model: CatalystModel, params: ModelParams, lattice: LatticeSpec, *, cap: int = 3, budget: int = 10**6):
    """Generator of (catalyst, p walkers) plus the Feynman-Kac potential.

    Returns ``(Q, weights, start_index)``: v_t = exp(tQ) 1 and the moment is
    sum_eta weights[eta] * v_t[eta, origin, ..., origin].
    """
    _check_params(model, params)
    if model.kind is Kind.SVM:
        raise ValueError("SVM is non-reversible; the forward joint generator does not apply")
    n = lattice.n_sites
    p = params.p
    levels = 2 if model.kind is Kind.SEP else cap + 1
    size = levels**n * n**p
    if size > budget:
        raise StateSpaceTooLarge(
            f"joint state space has {size} states ({levels}^{n} catalyst x {n}^{p} walkers) > budget {budget}"
        )
    states, weights = _catalyst_states(model, lattice, cap)
    Qc = _catalyst_generator(model, lattice, states, cap)
    nbr = lattice.neighbors
    rows = np.repeat(np.arange(n), nbr.shape[1])
    A = sparse.csr_matrix((np.full(rows.size, params.kappa), (rows, nbr.ravel())), shape=(n, n))
    lap = (A - sparse.diags(np.asarray(A.sum(axis=1)).ravel())).tocsr()
    In = sparse.identity(n, format="csr")
    W = sparse.csr_matrix((n**p, n**p))
    for q in range(p):
        factors = [In] * p
        factors[q] = lap
        term = factors[0]
        for f in factors[1:]:
            term = sparse.kron(term, f, format="csr")
        W = W + term
    m = len(states)
    walkers = np.array(list(itertools.product(range(n), repeat=p)), dtype=np.int64).reshape(-1, p)
    occ = states[:, walkers].sum(axis=2)  # (m, n^p): sum_q eta(x_q)
    V = params.gamma * occ.ravel() - p * params.delta
    Q = sparse.kron(Qc, sparse.identity(n**p), format="csr") + sparse.kron(sparse.identity(m), W, format="csr")
    Q = (Q + sparse.diags(V)).tocsr()
    start = np.arange(m) * n**p  # walker tuple (0, ..., 0) has index 0
    return Q, weights, start


def exact_moment_small(
    model: CatalystModel,
    params: ModelParams,
    lattice: LatticeSpec,
    t: float,
    p: int | None = None,
    *,
    cap: int = 3,
    budget: int = 10**6,
) -> float:
    """Exact log E[u(0,t)^p] on a small torus via the joint generator."""
    if p is not None:
        params = params.replace(p=p)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    Q, weights, start = joint_generator(model, params, lattice, cap=cap, budget=budget)
    shift = max(0.0, params.gamma * params.p * (1 if model.kind is Kind.SEP else cap))
    # exp(t(Q - shift)) keeps the iterate bounded; add shift*t back in logs
    v = expm_multiply((Q - shift * sparse.identity(Q.shape[0])) * t, np.ones(Q.shape[0]))
    return float(math.log(np.dot(weights, v[start])) + shift * t)


# ---------------------------------------------------------------------------
# ISRW at kappa = 0


def _walk_generator(lattice: LatticeSpec, kernel: KernelSpec | None = None):
    kernel = kernel or KernelSpec.simple(lattice.d)
    P = kernel.matrix(lattice)
    return (P - sparse.identity(lattice.n_sites)).tocsr()


def isrw_lambda0_series(params: ModelParams, lattice: LatticeSpec, t_grid) -> np.ndarray:
    """log E[u(0,t)^p] for ISRW at kappa = 0 on the torus, at each t in ``t_grid``.

    Poissonisation gives log E[exp(p gamma int_0^t xi(0,s) ds)] =
    rho * sum_x w_t(x), with w = v - 1 and dv/dt = Lwalk v + p gamma 1_0 v.
    """
    if params.kappa != 0:
        raise ValueError("the ISRW closed-form oracle requires kappa = 0")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0) or np.any(t < 0):
        raise ValueError("t_grid must be non-decreasing and nonnegative")
    n = lattice.n_sites
    c = params.p * params.gamma
    A = _walk_generator(lattice).tocsr() + sparse.csr_matrix(([c], ([0], [0])), shape=(n, n))
    # augmented system d/dt [w; 1] = [[A, c e_0], [0, 0]] [w; 1]
    col = sparse.csr_matrix(([c], ([0], [0])), shape=(n, 1))
    B = sparse.bmat([[A, col], [None, sparse.csr_matrix((1, 1))]], format="csr")
    z = np.zeros(n + 1)
    z[n] = 1.0
    out = np.empty(t.size)
    prev = 0.0
    for j, tj in enumerate(t):
        if tj > prev:
            z = expm_multiply(B * (tj - prev), z)
            prev = tj
        out[j] = params.rho * z[:n].sum() - params.p * params.delta * tj
    return out


def isrw_lambda0_oracle(params: ModelParams, lattice: LatticeSpec, t: float) -> float:
    """Finite-volume Lambda_p(t) = (1/pt) log E[u(0,t)^p] for ISRW at kappa = 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    return float(isrw_lambda0_series(params, lattice, [t])[0] / (params.p * t))


def closed_form_lambda0(params: ModelParams, green: float | ExtendedReal) -> ExtendedReal:
    """rho*gamma * (1/G) / (1/G - p*gamma), or +inf when p*gamma >= 1/G."""
    G = float(green)
    if not G > 0:
        raise ValueError("Green constant must be positive")
    if math.isinf(G):
        return ExtendedReal.inf("closed-form")
    inv = 1.0 / G
    if params.p * params.gamma >= inv:
        return ExtendedReal.inf("closed-form")
    return ExtendedReal(params.rho * params.gamma * inv / (inv - params.p * params.gamma), method="closed-form")
