"""Command line front end: experiment sweeps, generic fitting, self-checks.

Subcommands:
  fig1      Boltzmann machine estimation sweep -> CSV + summary + figure
  fig2      stagewise product-of-experts sweep -> CSV + summary + figure
  fit       fit one model to a data file with a chosen estimator
  validate  run the invariant/oracle suites and print a pass/fail table

Config files use one ``key = value`` per line; explicit command line flags
win over config file entries, which win over defaults.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bregman import get_s_pair
from .checks import run_all_checks
from .experiments import (
    Fig1Config,
    Fig2Config,
    run_fig1,
    run_fig2,
    write_fig1_csv,
    write_fig1_plot_script,
    write_fig1_summary_csv,
    write_fig2_csv,
    write_fig2_plot_script,
    write_fig2_summary_csv,
)
from .models import (
    BernoulliNoise,
    BoltzmannModel,
    BoltzmannParams,
    boltzmann_exact_log_partition,
    fit_bernoulli_mixture,
    gaussian_noise_from_sample,
    pseudolikelihood_objective,
)
from .objectives import (
    boosting_fit,
    direct_matching_objective,
    ica_poe_family,
    nce_family_objective,
    ratio_matching_objective,
)
from .optimize import OptimConfig, minimize
from .sampling import RngStream


def parse_config_file(path) -> dict[str, str]:
    """Read a flat ``key = value`` file; blank lines and # comments allowed."""
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValueError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _coerce_like(name: str, value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"config key {name}: expected boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(v) for v in items)
        return tuple(items)
    return value


def _build_config(cls, file_entries: dict[str, str], overrides: dict):
    kwargs = {}
    field_map = {f.name: f for f in fields(cls)}
    defaults = cls()
    for key, value in file_entries.items():
        if key not in field_map or key == "optimizer":
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce_like(key, value, getattr(defaults, key))
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs)


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _str_tuple(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _out_paths(out: str, default_stem: str):
    base = Path(out) if out else Path(f"{default_stem}.csv")
    if base.suffix != ".csv":
        base = base.with_suffix(".csv")
    stem = base.with_suffix("")
    return {
        "csv": base,
        "summary": Path(f"{stem}_summary.csv"),
        "script": Path(f"{stem}_plot.txt"),
        "png": Path(f"{stem}.png"),
    }


def _cmd_fig1(args) -> int:
    file_entries = parse_config_file(args.config) if args.config else {}
    cfg = _build_config(
        Fig1Config,
        file_entries,
        {
            "master_seed": args.seed,
            "trials": args.trials,
            "sample_sizes": _int_tuple(args.sample_sizes) if args.sample_sizes else None,
            "methods": _str_tuple(args.methods) if args.methods else None,
            "nu": args.nu,
        },
    )
    paths = _out_paths(args.out, "fig1")
    result = run_fig1(cfg)
    write_fig1_csv(result, paths["csv"], timing=args.timing)
    write_fig1_summary_csv(result, paths["summary"])
    write_fig1_plot_script(str(paths["summary"]), paths["script"], str(paths["png"]))
    if not args.no_figures:
        from .plots import render_fig1

        render_fig1(result, paths["png"])
    print(f"wrote {paths['csv']} ({len(result.records)} records)")
    return 0


def _cmd_fig2(args) -> int:
    file_entries = parse_config_file(args.config) if args.config else {}
    cfg = _build_config(
        Fig2Config,
        file_entries,
        {
            "master_seed": args.seed,
            "trials": args.trials,
            "group_sizes": _int_tuple(args.group_sizes) if args.group_sizes else None,
            "nu": args.nu,
            "T_d": args.td,
            "total_experts": args.experts,
        },
    )
    paths = _out_paths(args.out, "fig2")
    result = run_fig2(cfg)
    write_fig2_csv(result, paths["csv"], timing=args.timing)
    write_fig2_summary_csv(result, paths["summary"])
    write_fig2_plot_script(str(paths["csv"]), paths["script"], str(paths["png"]))
    if not args.no_figures:
        from .plots import render_fig2

        render_fig2(result, paths["png"])
    print(f"wrote {paths['csv']} ({len(result.records)} records)")
    return 0


def _load_data(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ValueError(f"cannot read data file {path}: {exc}") from None
    except Exception as exc:
        raise ValueError(f"cannot parse data file {path}: {exc}") from None
    if data.size == 0:
        raise ValueError(f"data file {path} is empty")
    return data


def _fit_boltzmann(args, X, rng: RngStream) -> tuple[BoltzmannParams, str, float]:
    n = X.shape[1]
    model = BoltzmannModel(n)
    optimizer = OptimConfig()
    pair = get_s_pair(args.pair)
    theta0 = optimizer.init_scale * rng.generator().standard_normal(model.param_dim)
    theta0[-1] = 0.0

    if args.estimator in ("nce", "direct"):
        if args.noise == "mixture":
            noise = fit_bernoulli_mixture(X, args.components, RngStream(rng.seed, rng.stream_id + 1))
        else:
            noise = BernoulliNoise(n, 0.5)
        Y = noise.sample(RngStream(rng.seed, rng.stream_id + 2), round(args.nu * X.shape[0]))
        if args.estimator == "nce":
            objective = nce_family_objective(model, noise, X, Y, pair, args.nu)
        else:
            objective = direct_matching_objective(model, noise, X, Y, pair)
        result = minimize(objective, theta0, optimizer)
        return BoltzmannParams.from_vector(n, result.theta), result.status, result.value

    if args.estimator == "ratio_matching":
        result = minimize(ratio_matching_objective(model, X), theta0, optimizer)
        params = BoltzmannParams.from_vector(n, result.theta)
        # c is not identified by ratio matching
        return (
            BoltzmannParams(params.upper_tri_m, params.b, float("nan")),
            result.status,
            result.value,
        )

    if args.estimator == "pseudolikelihood":
        objective = pseudolikelihood_objective(X)
        result = minimize(objective, theta0[:-1], optimizer)
        k = n * (n - 1) // 2
        params = BoltzmannParams(result.theta[:k], result.theta[k:], 0.0)
        c_hat = -boltzmann_exact_log_partition(params.coupling_matrix(), params.b)
        return (
            BoltzmannParams(params.upper_tri_m, params.b, c_hat),
            result.status,
            result.value,
        )

    raise ValueError(f"estimator {args.estimator!r} is not available for boltzmann")


def _cmd_fit(args) -> int:
    X = _load_data(args.data)
    rng = RngStream(args.seed if args.seed is not None else 0, 0)
    lines: list[str]

    if args.model == "boltzmann":
        params, status, value = _fit_boltzmann(args, X, rng)
        lines = [
            f"# model=boltzmann estimator={args.estimator} status={status} objective={value:.6g}",
            "upper_tri_m," + ",".join(f"{v:.12g}" for v in params.upper_tri_m),
            "b," + ",".join(f"{v:.12g}" for v in params.b),
            f"c,{params.c:.12g}",
        ]
    elif args.model == "ica_poe":
        if args.estimator != "nce":
            raise ValueError("ica_poe supports only the nce estimator")
        noise = gaussian_noise_from_sample(X)
        Y = noise.sample(RngStream(rng.seed, rng.stream_id + 2), round(args.nu * X.shape[0]))
        params = boosting_fit(
            ica_poe_family(X.shape[1]),
            X,
            noise,
            get_s_pair(args.pair),
            args.nu,
            args.experts,
            args.group_size if args.group_size else args.experts,
            OptimConfig(),
            rng,
            Y=Y,
        )
        lines = [
            f"# model=ica_poe estimator=nce experts={args.experts}",
            *(
                "b_%d," % k + ",".join(f"{v:.12g}" for v in row)
                for k, row in enumerate(params.experts, start=1)
            ),
            f"c,{params.c:.12g}",
        ]
    else:
        raise ValueError(f"unknown model {args.model!r}")

    text = "\n".join(lines) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise ValueError(f"cannot write {args.out}: {exc}") from None
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_validate(args) -> int:
    results = run_all_checks(args.seed if args.seed is not None else 0)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        failures += not r.ok
        print(f"{r.name:<{width}}  {mark}  {r.detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bregfit",
        description="Estimate unnormalized models with Bregman-divergence cost functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p1 = sub.add_parser("fig1", help="Boltzmann machine estimation sweep")
    p1.add_argument("--seed", type=int, default=None, help="master seed")
    p1.add_argument("--out", default="", help="output CSV path (default fig1.csv)")
    p1.add_argument("--config", default="", help="key = value config file")
    p1.add_argument("--trials", type=int, default=None)
    p1.add_argument("--sample-sizes", default="", help="comma-separated sizes")
    p1.add_argument("--methods", default="", help="comma-separated method names")
    p1.add_argument("--nu", type=float, default=None, help="noise/data sample ratio")
    p1.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p1.add_argument(
        "--timing",
        action="store_true",
        help="write measured wall_ms (breaks byte reproducibility)",
    )
    p1.set_defaults(func=_cmd_fig1)

    p2 = sub.add_parser("fig2", help="stagewise product-of-experts sweep")
    p2.add_argument("--seed", type=int, default=None)
    p2.add_argument("--out", default="", help="output CSV path (default fig2.csv)")
    p2.add_argument("--config", default="")
    p2.add_argument("--trials", type=int, default=None)
    p2.add_argument("--group-sizes", default="", help="comma-separated group sizes")
    p2.add_argument("--nu", type=float, default=None)
    p2.add_argument("--td", type=int, default=None, help="data sample size")
    p2.add_argument("--experts", type=int, default=None, help="total experts fit")
    p2.add_argument("--no-figures", action="store_true")
    p2.add_argument("--timing", action="store_true")
    p2.set_defaults(func=_cmd_fig2)

    pf = sub.add_parser("fit", help="fit a model to a CSV data file")
    pf.add_argument("--model", required=True, choices=("boltzmann", "ica_poe"))
    pf.add_argument(
        "--estimator",
        default="nce",
        choices=("nce", "direct", "ratio_matching", "pseudolikelihood"),
    )
    pf.add_argument("--data", required=True, help="CSV file, one observation per row")
    pf.add_argument("--pair", default="nce", choices=("nce", "quadratic", "log"))
    pf.add_argument("--noise", default="bernoulli", choices=("bernoulli", "mixture"))
    pf.add_argument("--components", type=int, default=4, help="mixture components")
    pf.add_argument("--nu", type=float, default=10.0)
    pf.add_argument("--experts", type=int, default=8, help="experts (ica_poe)")
    pf.add_argument("--group-size", type=int, default=0, help="stage size (ica_poe)")
    pf.add_argument("--seed", type=int, default=None)
    pf.add_argument("--out", default="", help="write fitted parameters here")
    pf.set_defaults(func=_cmd_fit)

    pv = sub.add_parser("validate", help="run invariant and oracle self-checks")
    pv.add_argument("--seed", type=int, default=None)
    pv.set_defaults(func=_cmd_validate)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
