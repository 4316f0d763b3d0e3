"""Lyapunov exponents from moment series, kappa sweeps and regime checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .catalysts import CatalystModel, Kind
from .lattice import ExtendedReal, KernelSpec, LatticeSpec, green_function
from .moments import MomentSeries, annealed_moments
from .reactant import ModelParams

__all__ = [
    "LyapunovEstimate",
    "estimate_lambda",
    "kappa_sweep",
    "GapResult",
    "intermittency_gap",
    "scaling_constant",
    "predicted_regime",
    "DichotomyRow",
    "dichotomy_check",
    "write_sweep_csv",
]


@dataclass
class LyapunovEstimate:
    p: int
    kappa: float
    lam: float
    stderr: float
    t_min: float
    t_max: float
    c: float = 0.0
    residual: float = 0.0
    drift: float = 0.0
    drift_flag: bool = False
    infinite: bool = False
    n_points: int = 0
    info: dict = field(default_factory=dict)

    @property
    def value(self) -> ExtendedReal:
        return ExtendedReal.inf("fit") if self.infinite else ExtendedReal(self.lam, method="fit")


def _fit(t: np.ndarray, y: np.ndarray, w: np.ndarray | None):
    """Weighted least squares for y = lam + c/t; returns (lam, c, cov)."""
    X = np.column_stack([np.ones_like(t), 1.0 / t])
    if w is None:
        w = np.ones_like(t)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    cov = np.linalg.pinv((X * w[:, None]).T @ X)
    return coef[0], coef[1], cov


def estimate_lambda(series: MomentSeries, *, burn_in: float | None = None, min_points: int = 6) -> LyapunovEstimate:
    """Fit Lambda_p(t) = lam + c/t on the points past the burn-in cutoff.

    The error bar is the jackknife over replicas when the series carries
    leave-one-out values, else the weighted least-squares covariance.  The
    drift diagnostic compares fits on the early and late halves of the
    window; a difference above three times its own noise raises
    ``drift_flag``.
    """
    gamma = series.provenance.get("gamma")
    if burn_in is None:
        burn_in = 1.0 / gamma if gamma else 0.0
    sel = (series.t >= burn_in) & (series.t > 0)
    t = series.t[sel]
    if t.size < min_points:
        raise ValueError(f"only {t.size} time points past burn-in {burn_in:g}; need {min_points}")
    common = dict(p=series.p, kappa=float(series.provenance.get("kappa", math.nan)), t_min=float(t[0]), t_max=float(t[-1]), n_points=int(t.size), info=dict(series.provenance))
    lm = series.log_moment[sel]
    if "divergent" in series.flags or np.any(np.isposinf(lm)):
        return LyapunovEstimate(lam=math.inf, stderr=math.inf, infinite=True, **common)
    y = lm / (series.p * t)
    sig = series.stderr[sel] / (series.p * t)
    w = 1.0 / sig**2 if np.all(sig > 0) else None
    lam, c, cov = _fit(t, y, w)
    resid = y - (lam + c / t)
    half = t.size // 2
    early, late = slice(0, t.size - half), slice(t.size - half, None)

    def drift_of(yy):
        le, _, _ = _fit(t[early], yy[early], None if w is None else w[early])
        ll, _, _ = _fit(t[late], yy[late], None if w is None else w[late])
        return ll - le

    drift = drift_of(y)
    if series.loo is not None and series.loo.shape[0] >= 2:
        loo_y = series.loo[:, sel] / (series.p * t)
        n = loo_y.shape[0]
        lams = np.array([_fit(t, row, w)[0] for row in loo_y])
        stderr = math.sqrt((n - 1) / n * np.sum((lams - lams.mean()) ** 2))
        drifts = np.array([drift_of(row) for row in loo_y])
        drift_noise = math.sqrt((n - 1) / n * np.sum((drifts - drifts.mean()) ** 2))
    elif w is not None:
        stderr = math.sqrt(cov[0, 0])
        drift_noise = 2 * stderr
    else:
        stderr = 0.0
        drift_noise = 0.0
    flag = abs(drift) > 3 * drift_noise + 1e-12 * max(1.0, abs(lam))
    rms = float(np.sqrt(np.mean(resid**2 * (w if w is not None else 1.0))))
    return LyapunovEstimate(lam=float(lam), stderr=float(stderr), c=float(c), residual=rms, drift=float(drift), drift_flag=bool(flag), **common)


def kappa_sweep(
    model: CatalystModel,
    params: ModelParams,
    lattice: LatticeSpec,
    kappa_list,
    t_grid,
    n_reps: int,
    seed: int = 0,
    *,
    estimator: str = "pde-ensemble",
    p_values=None,
    burn_in: float | None = None,
    h_max: float | None = None,
) -> list[LyapunovEstimate]:
    """Lyapunov estimates over increasing kappa with common random numbers.

    Every kappa reuses the master seed, so replica r sees the same catalyst
    path at each kappa.  Results are ordered by p, then kappa.
    """
    kappas = [float(k) for k in kappa_list]
    if any(b <= a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappa_list must be strictly increasing")
    by_p: dict[int, list[LyapunovEstimate]] = {}
    for kappa in kappas:
        series = annealed_moments(model, params.replace(kappa=kappa), lattice, t_grid, n_reps, estimator, seed, p_values, h_max=h_max)
        for p, s in series.items():
            by_p.setdefault(p, []).append(estimate_lambda(s, burn_in=burn_in))
    return [e for p in sorted(by_p) for e in by_p[p]]


@dataclass
class GapResult:
    p: int
    gap: float
    stderr: float
    intermittent: bool

    @property
    def verdict(self) -> str:
        return f"{self.p}-intermittent" if self.intermittent else "not resolved"


def intermittency_gap(est_p: LyapunovEstimate, est_prev: LyapunovEstimate) -> GapResult:
    """lam_p - lam_(p-1); p-intermittent when the gap exceeds 2 combined stderr."""
    if est_p.p != est_prev.p + 1:
        raise ValueError(f"need consecutive orders, got p={est_p.p} and p={est_prev.p}")
    keys = ("model", "d", "L", "rho", "gamma")
    if not math.isclose(est_p.kappa, est_prev.kappa, abs_tol=1e-15) and not (math.isnan(est_p.kappa) and math.isnan(est_prev.kappa)):
        raise ValueError("estimates have different kappa")
    for k in keys:
        if est_p.info.get(k) != est_prev.info.get(k):
            raise ValueError(f"estimates differ in {k}: {est_p.info.get(k)!r} vs {est_prev.info.get(k)!r}")
    if est_p.infinite or est_prev.infinite:
        return GapResult(est_p.p, math.nan, math.inf, False)
    gap = est_p.lam - est_prev.lam
    se = math.hypot(est_p.stderr, est_prev.stderr)
    return GapResult(est_p.p, gap, se, bool(gap > 2 * se))


def scaling_constant(
    model,
    d: int,
    rho: float,
    gamma: float,
    p: int,
    G_d: float | ExtendedReal,
    G_d_star: float | ExtendedReal | None = None,
    P_d: float | None = None,
) -> float:
    """Right-hand side of the large-kappa limit of 2d*kappa*(lam_p - rho*gamma).

    ISRW and SEP use G_d (and P_3 when d = 3); the voter model uses
    G*_d / G_d (and P_5 when d = 5).
    """
    kind = Kind(model.kind if isinstance(model, CatalystModel) else model)

    def finite(name, v):
        if v is None or math.isinf(float(v)):
            raise ValueError(f"{name} must be finite for {kind.value} in d={d}")
        return float(v)

    G = finite("G_d", G_d)
    if kind is Kind.ISRW:
        base = rho * gamma**2
        out = base * G
        if d == 3:
            out += (2 * d) ** 3 * (base * p) ** 2 * finite("P_3", P_d)
        return out
    mix = rho * (1 - rho) * gamma**2
    if kind is Kind.SEP:
        out = mix * G
        if d == 3:
            out += (2 * d) ** 3 * (mix * p) ** 2 * finite("P_3", P_d)
        return out
    Gs = finite("G*_d", G_d_star)
    out = mix * Gs / G
    if d == 5:
        out += (2 * d) ** 3 * (mix * p / G) ** 2 * finite("P_5", P_d)
    return out


# ---------------------------------------------------------------------------
# regimes

THEOREM_LABELS = {
    ("ISRW", "divergent"): "ISRW finiteness dichotomy: lam_p < inf iff p < 1/(G_d gamma)",
    ("ISRW", "finite"): "ISRW finiteness dichotomy: lam_p < inf iff p < 1/(G_d gamma)",
    ("SEP", "maximal"): "SEP dichotomy: recurrent kernel => lam_p = gamma",
    ("SEP", "intermediate"): "SEP dichotomy: transient kernel => rho*gamma < lam_p < gamma",
    ("SVM", "maximal"): "voter dichotomy: 1 <= d <= 4 => lam_p = gamma",
    ("SVM", "intermediate"): "voter dichotomy: d >= 5 => rho*gamma < lam_p < gamma",
}


def predicted_regime(model, d: int, kernel: KernelSpec | None, p: int, gamma: float, G_d: float | None = None) -> str:
    """Regime predicted by the dichotomy results for (model, d, kernel, p, gamma)."""
    kind = Kind(model.kind if isinstance(model, CatalystModel) else model)
    kernel = kernel or KernelSpec.simple(d)
    if kind is Kind.ISRW:
        G = float(G_d) if G_d is not None else float(green_function(d))
        return "divergent" if math.isinf(G) or p * gamma >= 1.0 / G else "finite"
    if kind is Kind.SEP:
        return "maximal" if kernel.recurrent else "intermediate"
    return "maximal" if d <= 4 else "intermediate"


@dataclass
class DichotomyRow:
    model: str
    d: int
    p: int
    kappa: float
    lam: float
    stderr: float
    predicted: str
    observed: str
    consistent: bool
    theorem: str


def _observe(kind: Kind, est: LyapunovEstimate, rho: float, gamma: float) -> str:
    if est.infinite:
        return "divergent"
    lo, hi = est.lam - 2 * est.stderr, est.lam + 2 * est.stderr
    upward = est.drift_flag and est.drift > 0
    if kind is Kind.ISRW:
        if upward and est.lam > rho * gamma:
            return "divergent-trend"
        return "finite" if lo > rho * gamma or est.stderr == 0 else "inconclusive"
    if hi >= gamma:
        return "maximal"
    if upward and lo > rho * gamma:
        return "maximal-trend"
    if lo > rho * gamma and hi < gamma:
        return "intermediate"
    return "inconclusive"


def dichotomy_check(model: CatalystModel, d: int, kernel: KernelSpec | None, estimates, *, gamma: float | None = None, G_d: float | None = None) -> list[DichotomyRow]:
    """Compare each estimate's observed regime with the predicted one."""
    rows = []
    for est in estimates:
        g = gamma if gamma is not None else float(est.info.get("gamma"))
        predicted = predicted_regime(model, d, kernel, est.p, g, G_d)
        observed = _observe(model.kind, est, model.rho, g)
        consistent = observed.split("-")[0] == predicted or (predicted == "divergent" and observed == "divergent-trend")
        rows.append(
            DichotomyRow(
                model=model.kind.value,
                d=d,
                p=est.p,
                kappa=est.kappa,
                lam=est.lam,
                stderr=est.stderr,
                predicted=predicted,
                observed=observed,
                consistent=bool(consistent),
                theorem=THEOREM_LABELS[(model.kind.value, predicted)],
            )
        )
    return rows


SWEEP_COLUMNS = ["model", "d", "L", "p", "kappa", "lambda_hat", "stderr", "t_min", "t_max", "drift_flag"]


def write_sweep_csv(estimates, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for e in estimates:
        writer.writerow(
            [
                e.info.get("model", ""),
                e.info.get("d", ""),
                e.info.get("L", ""),
                e.p,
                f"{e.kappa:.10g}",
                "inf" if e.infinite else f"{e.lam:.10g}",
                f"{e.stderr:.10g}",
                f"{e.t_min:.10g}",
                f"{e.t_max:.10g}",
                int(e.drift_flag),
            ]
        )
