"""Desk-scale reproductions of the two estimation studies, with CSV output.

Study 1 estimates fully visible Boltzmann machines from growing samples with
noise-contrastive estimators (independent Bernoulli and fitted Bernoulli
mixture noise), pseudolikelihood, and ratio matching, tracking the squared
parameter error.  Study 2 fits an over-complete product-of-experts model to
ICA data stagewise and measures how the expert-recovery error grows as fewer
experts are learned jointly.

Everything is driven by a single master seed through per-(purpose, trial)
Philox streams, so CSV output is byte-identical across runs and platforms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .bregman import get_s_pair
from .models import (
    BernoulliNoise,
    BoltzmannModel,
    BoltzmannParams,
    boltzmann_energies,
    boltzmann_exact_log_partition,
    fit_bernoulli_mixture,
    gaussian_noise_from_sample,
    pseudolikelihood_objective,
)
from .objectives import (
    StageFailureError,
    boosting_fit,
    ica_poe_family,
    nce_family_objective,
    ratio_matching_objective,
)
from .optimize import OptimConfig, minimize
from .sampling import RngStream, enumerate_states, sample_discrete_exact, sample_ica

FIG1_METHODS = ("nce_bernoulli", "nce_mixture", "pseudolikelihood", "ratio_matching")

FIG1_HEADER = "method,sample_size,trial,error,status,wall_ms"
FIG1_SUMMARY_HEADER = "method,sample_size,mean_log10_error"
FIG2_HEADER = "group_size,trial,error,status,wall_ms"
FIG2_SUMMARY_HEADER = "group_size,median_error,q1,q3"

_STATUS_FAILED = "line_search_failure"

# purpose codes for stream derivation
_P_PARAMS, _P_DATA, _P_NOISE, _P_EM, _P_MIX_SAMPLE = 0, 1, 2, 3, 4
_P_INIT_BASE = 5


@dataclass
class Fig1Config:
    n: int = 5
    sample_sizes: tuple[int, ...] = (500, 2000, 8000, 32000)
    trials: int = 20
    nu: float = 10.0
    methods: tuple[str, ...] = FIG1_METHODS
    param_std: float = 0.5
    master_seed: int = 0
    mixture_components: int = 4
    optimizer: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        self.sample_sizes = tuple(int(t) for t in self.sample_sizes)
        self.methods = tuple(self.methods)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(b <= a for a, b in zip(self.sample_sizes, self.sample_sizes[1:])):
            raise ValueError("sample_sizes must be strictly increasing")
        unknown = set(self.methods) - set(FIG1_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")


@dataclass
class Fig2Config:
    n: int = 4
    T_d: int = 10000
    total_experts: int = 8
    group_sizes: tuple[int, ...] = (1, 2, 4)
    trials: int = 20
    nu: float = 2.0
    master_seed: int = 0
    max_condition: float = 100.0
    smoothing_eps: float = 1e-8
    optimizer: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        self.group_sizes = tuple(int(m) for m in self.group_sizes)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for m in self.group_sizes:
            if m < 1 or self.total_experts % m != 0:
                raise ValueError(f"group size {m} does not divide {self.total_experts}")


@dataclass
class TrialRecord:
    label: str  # method name (study 1) or group size (study 2)
    sample_size: int
    trial_id: int
    error: float
    status: str
    wall_time_s: float
    norm_ratio: float | None = None  # spurious/matched expert norm ratio (study 2)

    @property
    def usable(self) -> bool:
        return self.status != _STATUS_FAILED and np.isfinite(self.error)


@dataclass
class Fig1Result:
    config: Fig1Config
    records: list[TrialRecord]
    summary: list[tuple[str, int, float]]  # (method, sample_size, mean log10 error)


@dataclass
class Fig2Result:
    config: Fig2Config
    records: list[TrialRecord]
    summary: list[tuple[int, float, float, float]]  # (group_size, median, q1, q3)


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


def param_error_boltzmann(theta_hat: BoltzmannParams, theta_star: BoltzmannParams) -> float:
    """Sum of squared errors over couplings, biases, and the normalization c.

    theta_star must carry the exact negative log partition function as c so
    the metric is meaningful for normalized references.
    """
    if theta_hat.n != theta_star.n:
        raise ValueError("parameter dimensions do not match")
    log_z = boltzmann_exact_log_partition(theta_star.coupling_matrix(), theta_star.b)
    if abs(theta_star.c + log_z) > 1e-6:
        raise ValueError("theta_star.c must equal the exact negative log partition")
    return float(
        np.sum((theta_hat.upper_tri_m - theta_star.upper_tri_m) ** 2)
        + np.sum((theta_hat.b - theta_star.b) ** 2)
        + (theta_hat.c - theta_star.c) ** 2
    )


@dataclass(frozen=True)
class PoeAlignment:
    error: float
    matched_rows: tuple[int, ...]  # row of the estimate assigned to each true expert
    signs: tuple[int, ...]


def poe_alignment(B_hat, B_star) -> PoeAlignment:
    """Best alignment of estimated experts to the true ones.

    Row k of R = B_hat (B_star)^{-T} holds the coordinates of estimated
    expert k in the basis of true expert columns, so R is a signed
    permutation block over zero padding exactly at perfect recovery.  Rows
    are compared against unit vectors after an exhaustive search over which
    rows match which true expert and with which sign; unmatched rows count
    with their full norm.  The error is the Frobenius norm of the aligned
    residual.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B_star = np.asarray(B_star, dtype=float)
    n = B_star.shape[0]
    if B_star.shape != (n, n):
        raise ValueError("B_star must be square")
    if B_hat.ndim != 2 or B_hat.shape[1] != n:
        raise ValueError("B_hat must be (K, n)")
    if B_hat.shape[0] < n:
        raise ValueError("need at least as many estimated experts as true ones")
    if np.linalg.slogdet(B_star)[0] == 0:
        raise ValueError("B_star is singular")

    R = B_hat @ np.linalg.inv(B_star).T
    base = float(np.sum(R * R))
    # assigning row k to expert j with the best sign costs 1 - 2|R[k, j]|
    # beyond the row's base norm contribution
    pick_cost = 1.0 - 2.0 * np.abs(R)
    best = np.inf
    best_rows: tuple[int, ...] = ()
    for rows in permutations(range(B_hat.shape[0]), n):
        total = base + sum(pick_cost[k, j] for j, k in enumerate(rows))
        if total < best:
            best = total
            best_rows = rows
    signs = tuple(1 if R[k, j] >= 0 else -1 for j, k in enumerate(best_rows))
    return PoeAlignment(
        error=float(np.sqrt(max(best, 0.0))), matched_rows=best_rows, signs=signs
    )


def poe_alignment_error(B_hat, B_star) -> float:
    return poe_alignment(B_hat, B_star).error


def _spurious_norm_ratio(experts: np.ndarray, matched_rows) -> float | None:
    """max unmatched-expert norm over min matched-expert norm."""
    norms = np.linalg.norm(experts, axis=1)
    matched = set(matched_rows)
    unmatched = [k for k in range(experts.shape[0]) if k not in matched]
    if not unmatched:
        return None
    return float(np.max(norms[unmatched]) / np.min(norms[list(matched)]))


# ---------------------------------------------------------------------------
# Study 1: Boltzmann machines, four estimators
# ---------------------------------------------------------------------------


def _stream(seed: int, size_idx: int, trial: int, purpose: int) -> RngStream:
    return RngStream(seed, purpose + 16 * (trial + 65536 * size_idx))


def _gaussian_init(model_dim: int, rng: RngStream, scale: float, zero_last: bool):
    theta0 = scale * rng.generator().standard_normal(model_dim)
    if zero_last:
        theta0[-1] = 0.0  # normalization parameter starts at zero
    return theta0


def _fit_fig1_method(method, cfg, model, X, size_idx, trial):
    n = cfg.n
    seed = cfg.master_seed
    nce = get_s_pair("nce")
    T_n = round(cfg.nu * X.shape[0])

    if method in ("nce_bernoulli", "nce_mixture"):
        if method == "nce_bernoulli":
            noise = BernoulliNoise(n, 0.5)
            init_purpose = _P_INIT_BASE
            Y = noise.sample(_stream(seed, size_idx, trial, _P_NOISE), T_n)
        else:
            noise = fit_bernoulli_mixture(
                X, cfg.mixture_components, _stream(seed, size_idx, trial, _P_EM)
            )
            init_purpose = _P_INIT_BASE + 1
            Y = noise.sample(_stream(seed, size_idx, trial, _P_MIX_SAMPLE), T_n)
        objective = nce_family_objective(model, noise, X, Y, nce, cfg.nu)
        theta0 = _gaussian_init(
            model.param_dim,
            _stream(seed, size_idx, trial, init_purpose),
            cfg.optimizer.init_scale,
            zero_last=True,
        )
        result = minimize(objective, theta0, cfg.optimizer)
        return BoltzmannParams.from_vector(n, result.theta), result.status

    if method == "pseudolikelihood":
        objective = pseudolikelihood_objective(X)
        theta0 = _gaussian_init(
            objective.param_dim,
            _stream(seed, size_idx, trial, _P_INIT_BASE + 2),
            cfg.optimizer.init_scale,
            zero_last=False,
        )
        result = minimize(objective, theta0, cfg.optimizer)
        k = n * (n - 1) // 2
        params = BoltzmannParams(result.theta[:k], result.theta[k:], 0.0)
        c_hat = -boltzmann_exact_log_partition(params.coupling_matrix(), params.b)
        return BoltzmannParams(params.upper_tri_m, params.b, c_hat), result.status

    if method == "ratio_matching":
        objective = ratio_matching_objective(model, X)
        theta0 = _gaussian_init(
            model.param_dim,
            _stream(seed, size_idx, trial, _P_INIT_BASE + 3),
            cfg.optimizer.init_scale,
            zero_last=True,
        )
        result = minimize(objective, theta0, cfg.optimizer)
        params = BoltzmannParams.from_vector(n, result.theta)
        # c is not identified by this estimator; fill it with the exact
        # negative log partition of the fit so errors stay comparable
        c_hat = -boltzmann_exact_log_partition(params.coupling_matrix(), params.b)
        return BoltzmannParams(params.upper_tri_m, params.b, c_hat), result.status

    raise ValueError(f"unknown method {method!r}")


def run_fig1(config: Fig1Config | None = None) -> Fig1Result:
    """Run the Boltzmann machine consistency study over sample sizes and trials."""
    cfg = config or Fig1Config()
    n, seed = cfg.n, cfg.master_seed
    model = BoltzmannModel(n)
    states = enumerate_states(n)
    k = n * (n - 1) // 2

    problems: dict[tuple[int, int], tuple[BoltzmannParams, np.ndarray]] = {}
    for size_idx, T_d in enumerate(cfg.sample_sizes):
        for trial in range(cfg.trials):
            gen = _stream(seed, size_idx, trial, _P_PARAMS).generator()
            m_upper = cfg.param_std * gen.standard_normal(k)
            b = cfg.param_std * gen.standard_normal(n)
            params = BoltzmannParams(m_upper, b, 0.0)
            c_star = -boltzmann_exact_log_partition(params.coupling_matrix(), b)
            theta_star = BoltzmannParams(m_upper, b, c_star)
            log_w = boltzmann_energies(params.coupling_matrix(), b, states)
            idx = sample_discrete_exact(
                log_w, _stream(seed, size_idx, trial, _P_DATA), T_d
            )
            problems[(size_idx, trial)] = (theta_star, states[idx])

    records: list[TrialRecord] = []
    for method in cfg.methods:
        for size_idx, T_d in enumerate(cfg.sample_sizes):
            for trial in range(cfg.trials):
                theta_star, X = problems[(size_idx, trial)]
                t0 = time.perf_counter()
                try:
                    theta_hat, status = _fit_fig1_method(
                        method, cfg, model, X, size_idx, trial
                    )
                    error = param_error_boltzmann(theta_hat, theta_star)
                except ValueError:
                    error, status = np.nan, _STATUS_FAILED
                records.append(
                    TrialRecord(
                        label=method,
                        sample_size=T_d,
                        trial_id=trial,
                        error=error,
                        status=status,
                        wall_time_s=time.perf_counter() - t0,
                    )
                )

    summary = []
    for method in cfg.methods:
        for T_d in cfg.sample_sizes:
            errs = [
                r.error
                for r in records
                if r.label == method and r.sample_size == T_d and r.usable
            ]
            mean_log10 = float(np.mean(np.log10(errs))) if errs else np.nan
            summary.append((method, T_d, mean_log10))
    return Fig1Result(config=cfg, records=records, summary=summary)


# ---------------------------------------------------------------------------
# Study 2: boosted product-of-experts
# ---------------------------------------------------------------------------


def _draw_well_conditioned(gen, n: int, max_condition: float) -> np.ndarray:
    while True:
        B = gen.standard_normal((n, n))
        if np.linalg.cond(B) <= max_condition:
            return B


def run_fig2(config: Fig2Config | None = None) -> Fig2Result:
    """Run the stagewise product-of-experts study over group sizes and trials."""
    cfg = config or Fig2Config()
    seed = cfg.master_seed
    family = ica_poe_family(cfg.n, cfg.smoothing_eps)
    nce = get_s_pair("nce")

    records: list[TrialRecord] = []
    for trial in range(cfg.trials):
        gen_b = _stream(seed, 0, trial, _P_PARAMS).generator()
        B_star = _draw_well_conditioned(gen_b, cfg.n, cfg.max_condition)
        X = sample_ica(B_star, _stream(seed, 0, trial, _P_DATA), cfg.T_d)
        noise = gaussian_noise_from_sample(X)
        Y = noise.sample(
            _stream(seed, 0, trial, _P_NOISE), round(cfg.nu * cfg.T_d)
        )
        for arm, m in enumerate(cfg.group_sizes):
            t0 = time.perf_counter()
            norm_ratio = None
            try:
                fitted = boosting_fit(
                    family,
                    X,
                    noise,
                    nce,
                    cfg.nu,
                    cfg.total_experts,
                    m,
                    cfg.optimizer,
                    _stream(seed, 0, trial, _P_INIT_BASE + arm),
                    Y=Y,
                )
                alignment = poe_alignment(fitted.experts, B_star)
                error = alignment.error
                norm_ratio = _spurious_norm_ratio(fitted.experts, alignment.matched_rows)
                status = "converged"
            except StageFailureError:
                error, status = np.nan, _STATUS_FAILED
            records.append(
                TrialRecord(
                    label=str(m),
                    sample_size=cfg.T_d,
                    trial_id=trial,
                    error=error,
                    status=status,
                    wall_time_s=time.perf_counter() - t0,
                    norm_ratio=norm_ratio,
                )
            )

    summary = []
    for m in cfg.group_sizes:
        errs = [r.error for r in records if r.label == str(m) and r.usable]
        if errs:
            q1, med, q3 = np.percentile(errs, [25, 50, 75])
        else:
            q1 = med = q3 = np.nan
        summary.append((m, float(med), float(q1), float(q3)))
    return Fig2Result(config=cfg, records=records, summary=summary)


# ---------------------------------------------------------------------------
# CSV and plot-script output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _wall_ms(record: TrialRecord, timing: bool) -> str:
    # wall_ms is zero unless timing output is requested: measured times would
    # break byte-level reproducibility of the CSV contract
    return _fmt(record.wall_time_s * 1000.0) if timing else "0"


def write_fig1_csv(result: Fig1Result, path, timing: bool = False) -> None:
    lines = [FIG1_HEADER]
    for r in result.records:
        lines.append(
            f"{r.label},{r.sample_size},{r.trial_id},{_fmt(r.error)},{r.status},"
            f"{_wall_ms(r, timing)}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fig1_summary_csv(result: Fig1Result, path) -> None:
    lines = [FIG1_SUMMARY_HEADER]
    for method, T_d, mean_log10 in result.summary:
        lines.append(f"{method},{T_d},{_fmt(mean_log10)}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fig2_csv(result: Fig2Result, path, timing: bool = False) -> None:
    lines = [FIG2_HEADER]
    for r in result.records:
        lines.append(
            f"{r.label},{r.trial_id},{_fmt(r.error)},{r.status},{_wall_ms(r, timing)}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fig2_summary_csv(result: Fig2Result, path) -> None:
    lines = [FIG2_SUMMARY_HEADER]
    for m, med, q1, q3 in result.summary:
        lines.append(f"{m},{_fmt(med)},{_fmt(q1)},{_fmt(q3)}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


_FIG1_PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Plot mean log10 squared parameter error against log10 sample size,
# one line per estimation method.  Reads: {summary_csv}
import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

series = {{}}
with open({summary_csv!r}) as fh:
    for row in csv.DictReader(fh):
        xy = series.setdefault(row["method"], [])
        xy.append((math.log10(float(row["sample_size"])), float(row["mean_log10_error"])))

fig, ax = plt.subplots(figsize=(6, 4))
for method, xy in series.items():
    xy.sort()
    ax.plot([p[0] for p in xy], [p[1] for p in xy], marker="o", label=method)
ax.set_xlabel("log10 sample size")
ax.set_ylabel("log10 squared parameter error")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
print("wrote", {png!r})
"""

_FIG2_PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Box plot of expert-recovery error per number of jointly learned experts.
# Reads: {records_csv}
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

groups = {{}}
with open({records_csv!r}) as fh:
    for row in csv.DictReader(fh):
        if row["status"] == "line_search_failure":
            continue
        groups.setdefault(int(row["group_size"]), []).append(float(row["error"]))

labels = sorted(groups)
fig, ax = plt.subplots(figsize=(6, 4))
ax.boxplot([groups[m] for m in labels], tick_labels=[str(m) for m in labels])
ax.set_xlabel("experts learned jointly per stage")
ax.set_ylabel("alignment error")
ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
print("wrote", {png!r})
"""


def write_fig1_plot_script(summary_csv: str, script_path, png_path: str) -> None:
    with open(script_path, "w") as fh:
        fh.write(_FIG1_PLOT_SCRIPT.format(summary_csv=str(summary_csv), png=str(png_path)))


def write_fig2_plot_script(records_csv: str, script_path, png_path: str) -> None:
    with open(script_path, "w") as fh:
        fh.write(_FIG2_PLOT_SCRIPT.format(records_csv=str(records_csv), png=str(png_path)))
