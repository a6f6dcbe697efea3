"""Monte Carlo replication harness and variance-curve emission."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import numerical_jacobians, sigma_kmd, sigma_kpml
from .equilibrium import solve_equilibrium
from .estimation import WeightSchedule, k_stage_estimate
from .game import GameSpec
from .sampling import covariance_bundle, draw_dataset

MC_CSV_HEADER = ["estimator", "n", "K", "var_rn", "mse_rn", "var_ec", "mse_ec",
                 "failures"]
CURVE_CSV_HEADER = ["K", "kpml_11", "kpml_22", "kmdopt_11", "kmdopt_22"]

_ESTIMATORS = ("kpml", "kmd-opt", "kmd-custom")


@dataclass(frozen=True)
class McConfig:
    spec: GameSpec
    n: int = 500
    S: int = 1000
    k_list: tuple = (1, 5, 10)
    estimators: tuple = ("kpml", "kmd-opt")
    base_seed: int = 20230815
    custom_weights: tuple | None = None  # matrices for the kmd-custom estimator

    def __post_init__(self):
        if self.S < 1 or self.n < 1:
            raise ValueError("S and n must be at least 1")
        ks = list(self.k_list)
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("k_list must be nonempty and strictly increasing")
        for e in self.estimators:
            if e not in _ESTIMATORS:
                raise ValueError(f"unknown estimator: {e!r}")


@dataclass
class McReport:
    rows: list = field(default_factory=list)  # dicts keyed like MC_CSV_HEADER

    def to_csv(self, path: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MC_CSV_HEADER)
        for r in self.rows:
            w.writerow([r["estimator"], r["n"], r["K"],
                        _fmt(r["var_rn"]), _fmt(r["mse_rn"]),
                        _fmt(r["var_ec"]), _fmt(r["mse_ec"]), r["failures"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _estimator_args(name: str, cfg: McConfig):
    if name == "kpml":
        return "pml", WeightSchedule(mode="pml-equivalent")
    if name == "kmd-opt":
        return "md", WeightSchedule(mode="optimal-each-stage")
    if name == "kmd-custom":
        if cfg.custom_weights is None:
            raise ValueError("kmd-custom requires custom_weights in the config")
        return "md", WeightSchedule(mode="fixed-list",
                                    matrices=list(cfg.custom_weights))
    raise ValueError(f"unknown estimator: {name!r}")


def _run_replication(args):
    """Estimate every configured estimator on one simulated dataset.

    Returns {estimator: list of per-K alpha estimates or None on failure}.
    """
    cfg, p_star, m_star, s_idx = args
    ds = draw_dataset(p_star, m_star, cfg.n, cfg.base_seed ^ s_idx)
    k_max = max(cfg.k_list)
    out = {}
    for name in cfg.estimators:
        criterion, schedule = _estimator_args(name, cfg)
        try:
            trace = k_stage_estimate(ds, k_max, criterion, schedule, cfg.spec)
        except (ValueError, np.linalg.LinAlgError):
            out[name] = None
            continue
        if trace.failed:
            out[name] = None
            continue
        out[name] = [trace.alpha_by_stage[K - 1] for K in cfg.k_list]
    return s_idx, out


def resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("DYNGAME_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_monte_carlo(cfg: McConfig, threads: int | None = None) -> McReport:
    """Run S replications and aggregate scaled moments about the true alpha.

    Every estimator and every K share the same dataset within a replication.
    Scaled variance is n times the empirical variance of the estimates;
    scaled MSE is n times the mean squared deviation from the true alpha.
    """
    sol = solve_equilibrium(cfg.spec)
    alpha_star = cfg.spec.alpha
    jobs = [(cfg, sol.p_star, sol.m_star, s) for s in range(1, cfg.S + 1)]
    nthreads = resolve_threads(threads)
    if nthreads > 1 and cfg.S > 1:
        with ProcessPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(_run_replication, jobs,
                                    chunksize=max(1, cfg.S // (nthreads * 8))))
    else:
        results = [_run_replication(j) for j in jobs]
    results.sort(key=lambda t: t[0])  # deterministic reduction order

    report = McReport()
    for name in cfg.estimators:
        per_rep = [r[1][name] for r in results]
        good = [r for r in per_rep if r is not None]
        failures = len(per_rep) - len(good)
        for i, K in enumerate(cfg.k_list):
            arr = np.array([g[i] for g in good])  # (S_good, d_alpha)
            if arr.size == 0:
                var = mse = np.full(2, np.nan)
            else:
                var = cfg.n * arr.var(axis=0)
                mse = cfg.n * ((arr - alpha_star) ** 2).mean(axis=0)
            report.rows.append({
                "estimator": name, "n": cfg.n, "K": K,
                "var_rn": var[0], "mse_rn": mse[0],
                "var_ec": var[1], "mse_ec": mse[1],
                "failures": failures,
            })
    return report


def variance_curve(spec: GameSpec, k_max: int) -> list[dict]:
    """Asymptotic variance of both estimators as a function of K, at truth."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    sol = solve_equilibrium(spec)
    cov = covariance_bundle(sol.p_star, sol.m_star)
    derivs = numerical_jacobians(spec.alpha, sol.p_star, spec)
    rows = []
    for K in range(1, k_max + 1):
        s_pml = sigma_kpml(derivs, cov, K)
        s_opt = sigma_kmd(derivs, cov, "optimal", K)
        rows.append({"K": K,
                     "kpml_11": s_pml[0, 0], "kpml_22": s_pml[1, 1],
                     "kmdopt_11": s_opt[0, 0], "kmdopt_22": s_opt[1, 1]})
    return rows


def curve_csv(rows: list[dict], path: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_CSV_HEADER)
    for r in rows:
        w.writerow([r["K"], _fmt(r["kpml_11"]), _fmt(r["kpml_22"]),
                    _fmt(r["kmdopt_11"]), _fmt(r["kmdopt_22"])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
