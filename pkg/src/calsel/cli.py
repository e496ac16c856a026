"""Command-line interface.

Subcommands: simulate | forecast | backtest | repro-tables | tau.  Options
resolve in three layers: hard defaults, then a key=value config file given
with --config, then explicit flags (flags win).  Every randomized command
needs a seed; when none is supplied one is generated and printed so the run
can be reproduced.  All artifacts embed the fully resolved configuration,
and a rerun with the same configuration and seed writes byte-identical CSVs.

Exit codes: 0 success, 1 usage problems, 2 data problems, 3 numerical
estimation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .backtests import BacktestInput, run_backtest
from .el import ElProblem, grid_search_tau, max_el_estimate
from .errors import (
    CalselError,
    CapabilityError,
    DataError,
    InitializationError,
    InsufficientDataError,
    ParameterError,
)
from .io import read_forecast_table, read_returns, write_json, write_table
from .montecarlo import (
    ReproConfig,
    TABLE_HEADER,
    tau_sampler,
    render_text_table,
    repro_tables,
    table_rows,
    tau_compare_experiment,
)
from .cals import SieveConfig
from .risks import RollingConfig, rolling_forecast
from .simulate import CASE_PRESETS, GarchParams, dist_from_name, simulate_linear_garch

FORECAST_HEADER = (
    "date_index",
    "realized_return",
    "var_tilde",
    "es_tilde",
    "var_hat",
    "es_hat",
    "tau_hat",
    "mu_hat",
    "sigma_hat",
    "flags",
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _cast_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _cast_refit(text: str):
    lowered = str(text).strip().lower()
    if lowered in ("none", "never", "0"):
        return None
    return int(text)


def _cast_int_list(text: str) -> tuple:
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _cast_str_list(text: str) -> tuple:
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def read_config_file(path: str) -> Dict[str, str]:
    """Plain key=value lines; '#' starts a comment; keys use flag names."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such config file")
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParameterError(
                    f"{path}: line {lineno}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


class _Resolver:
    """Layered option lookup: explicit flag, then config file, then default."""

    def __init__(self, parser: argparse.ArgumentParser,
                 args: argparse.Namespace, config: Dict[str, str]):
        self.parser = parser
        self.args = args
        self.config = dict(config)
        self.resolved: Dict[str, object] = {}

    def get(self, name: str, default=None, cast: Callable = str,
            required: bool = False):
        value = getattr(self.args, name, None)
        if value is None and name in self.config:
            raw = self.config.pop(name)
            try:
                value = cast(raw)
            except (ValueError, TypeError):
                self.parser.error(f"config key {name}: bad value {raw!r}")
        if value is None:
            if required:
                self.parser.error(f"--{name.replace('_', '-')} is required")
            value = default
        self.resolved[name] = value
        return value

    def seed(self) -> int:
        value = self.get("seed", cast=int)
        if value is None:
            value = int(np.random.SeedSequence().entropy % (2 ** 32))
            print(f"seed = {value}")
            self.resolved["seed"] = value
        return value

    def finish(self) -> None:
        if self.config:
            names = ", ".join(sorted(self.config))
            self.parser.error(f"unknown config keys: {names}")

    def provenance(self, command: str) -> dict:
        out = {"command": command, "version": __version__}
        for key, value in self.resolved.items():
            if isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out


def _fig_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".png"


# ---------------------------------------------------------------------------
# simulate


def _resolve_params(res: _Resolver) -> GarchParams:
    def float_list(text: str) -> tuple:
        return tuple(float(x) for x in str(text).split(",") if x.strip())

    case = res.get("case", cast=int)
    beta0 = res.get("beta0", cast=float)
    gammas = res.get("gammas", cast=float_list)
    betas = res.get("betas", cast=float_list)
    if case is not None:
        if case not in CASE_PRESETS:
            res.parser.error(f"unknown case {case}; choose from 1, 2, 3")
        preset = CASE_PRESETS[case]
        return GarchParams(
            beta0 if beta0 is not None else preset.beta0,
            tuple(gammas) if gammas is not None else preset.gammas,
            tuple(betas) if betas is not None else preset.betas,
        )
    if beta0 is None or gammas is None or betas is None:
        res.parser.error("give --case or all of --beta0/--gammas/--betas")
    return GarchParams(beta0, tuple(gammas), tuple(betas))


def cmd_simulate(parser: argparse.ArgumentParser,
                 args: argparse.Namespace) -> int:
    config = read_config_file(args.config) if args.config else {}
    res = _Resolver(parser, args, config)
    params = _resolve_params(res)
    dist = dist_from_name(res.get("dist", default="normal"))
    n = res.get("n", cast=int, required=True)
    burn_in = res.get("burn_in", default=200, cast=int)
    seed = res.seed()
    out = res.get("out", default="simulated.csv")
    res.finish()

    path = simulate_linear_garch(params, dist, n, burn_in=burn_in, seed=seed)
    rows = [
        (t, path.returns[t], path.sigmas[t], path.innovations[t])
        for t in range(n)
    ]
    provenance = res.provenance("simulate")
    provenance["params"] = list(params.as_vector())
    write_table(out, ("index", "return", "sigma", "innovation"), rows,
                provenance)
    print(f"wrote {out} ({n} rows, seed {seed})")
    return 0


# ---------------------------------------------------------------------------
# forecast


def cmd_forecast(parser: argparse.ArgumentParser,
                 args: argparse.Namespace) -> int:
    config = read_config_file(args.config) if args.config else {}
    res = _Resolver(parser, args, config)
    input_path = res.get("input", required=True)
    col = res.get("col", default="return")
    window = res.get("window", default=500, cast=int)
    alpha = res.get("alpha", default=0.05, cast=float)
    tail = res.get("tail", default="lower")
    m = res.get("m", default=13, cast=int)
    p = res.get("p", default=1, cast=int)
    q = res.get("q", default=1, cast=int)
    refit_every = res.get("refit_every", default=1, cast=_cast_refit)
    el_fallback = res.get("el_fallback", default=True, cast=_cast_bool)
    with_stderr = res.get("stderr", default=False, cast=_cast_bool)
    out = res.get("out", default="forecasts.csv")
    no_plot = bool(res.get("no_plot", default=False, cast=_cast_bool))
    res.finish()

    y = read_returns(input_path, col)
    roll = RollingConfig(
        window=window,
        alpha=alpha,
        tail=tail,
        sieve=SieveConfig(m=m),
        p=p,
        q=q,
        refit_every=refit_every,
        el_fallback=el_fallback,
        compute_stderr=with_stderr,
    )
    forecasts, _ = rolling_forecast(y, roll)

    header = FORECAST_HEADER if not with_stderr else FORECAST_HEADER + (
        "stderr_var", "stderr_es")
    rows: List[tuple] = []
    n_skipped = 0
    n_fallback = 0
    for fc in forecasts:
        n_skipped += fc.skipped
        n_fallback += "el_fallback" in fc.flags
        row = (
            fc.date_index,
            y[fc.date_index],
            fc.var_tilde,
            fc.es_tilde,
            fc.var_hat,
            fc.es_hat,
            fc.tau_hat,
            fc.mu_hat,
            fc.sigma_hat,
            ";".join(fc.flags),
        )
        if with_stderr:
            row = row + (fc.stderr_var, fc.stderr_es)
        rows.append(row)

    provenance = res.provenance("forecast")
    write_table(out, header, rows, provenance)

    used = [fc for fc in forecasts if not fc.skipped]
    taus = np.array([fc.tau_hat for fc in used])
    summary = {
        "config": provenance,
        "n_forecasts": len(forecasts),
        "n_skipped": n_skipped,
        "n_el_fallback": n_fallback,
        "tau_mean": float(np.mean(taus)) if taus.size else None,
        "tau_median": float(np.median(taus)) if taus.size else None,
    }
    summary_out = os.path.splitext(out)[0] + "_summary.json"
    write_json(summary_out, summary)
    print(f"wrote {out} ({len(rows)} forecasts, {n_skipped} skipped)")
    print(f"wrote {summary_out}")

    if not no_plot:
        from .figures import save_forecast_figure

        table = {
            "date_index": np.array([r[0] for r in rows]),
            "realized_return": np.array([r[1] for r in rows]),
            "var_tilde": np.array([r[2] for r in rows]),
            "es_tilde": np.array([r[3] for r in rows]),
            "var_hat": np.array([r[4] for r in rows]),
            "es_hat": np.array([r[5] for r in rows]),
            "tau_hat": np.array([r[6] for r in rows]),
        }
        fig = save_forecast_figure(table, _fig_path(out), alpha, tail)
        print(f"wrote {fig}")
    return 0


# ---------------------------------------------------------------------------
# backtest


def _provenance_from_comments(comments: List[str]) -> dict:
    for line in comments:
        body = line.lstrip("#").strip()
        if body.startswith("{"):
            try:
                return json.loads(body)
            except json.JSONDecodeError:
                continue
    return {}


def cmd_backtest(parser: argparse.ArgumentParser,
                 args: argparse.Namespace) -> int:
    config = read_config_file(args.config) if args.config else {}
    res = _Resolver(parser, args, config)
    forecast_path = res.get("forecasts", required=True)
    data_path = res.get("data")
    col = res.get("col", default="return")
    model = res.get("model", default="el2")
    alpha_flag = res.get("alpha", cast=float)
    tail_flag = res.get("tail")
    n_boot = res.get("n_boot", default=5000, cast=int)
    seed = res.seed()
    out = res.get("out", default="backtest.json")
    no_plot = bool(res.get("no_plot", default=False, cast=_cast_bool))
    res.finish()

    if model not in ("el1", "el2"):
        parser.error(f"--model must be el1 or el2, got {model!r}")

    table = read_forecast_table(forecast_path)
    upstream = _provenance_from_comments(table["_comments"])
    alpha = alpha_flag if alpha_flag is not None else upstream.get("alpha")
    tail = tail_flag if tail_flag is not None else upstream.get("tail")
    if alpha is None or tail is None:
        parser.error("--alpha/--tail not given and not found in the "
                     "forecast file's provenance")
    alpha = float(alpha)

    for needed in ("date_index", "var_hat", "es_hat", "realized_return"):
        if needed not in table:
            raise DataError(f"{forecast_path}: missing column {needed!r}")
    date_index = np.asarray(table["date_index"], dtype=float)
    var_col = "var_tilde" if model == "el1" else "var_hat"
    es_col = "es_tilde" if model == "el1" else "es_hat"
    var_f = np.asarray(table[var_col])
    es_f = np.asarray(table[es_col])

    if data_path is not None:
        full = read_returns(data_path, col)
        idx = date_index.astype(int)
        if np.any(idx < 0) or np.any(idx >= len(full)):
            raise DataError(
                f"{forecast_path}: date_index outside {data_path} range")
        realized = full[idx]
        stated = np.asarray(table["realized_return"])
        both = np.isfinite(realized) & np.isfinite(stated)
        if np.any(np.abs(realized[both] - stated[both]) >
                  1e-9 * np.maximum(1.0, np.abs(stated[both]))):
            raise DataError(
                f"{data_path} and {forecast_path} disagree on realized "
                "returns: misaligned files")
    else:
        realized = np.asarray(table["realized_return"])

    sigma = np.asarray(table["sigma_hat"]) if "sigma_hat" in table else None
    keep = np.isfinite(realized) & np.isfinite(var_f) & np.isfinite(es_f)
    if sigma is not None:
        keep &= np.isfinite(sigma) & (sigma > 0)
    n_dropped = int(np.count_nonzero(~keep))

    inp = BacktestInput(
        realized=realized[keep],
        var_forecasts=var_f[keep],
        es_forecasts=es_f[keep],
        alpha=alpha,
        tail=tail,
        sigma_forecasts=sigma[keep] if sigma is not None else None,
    )
    report = run_backtest(inp, n_boot=n_boot, seed=seed)

    provenance = res.provenance("backtest")
    provenance["alpha"] = alpha
    provenance["tail"] = tail
    provenance["n_dropped"] = n_dropped
    payload = report.to_json_dict()
    payload["config"] = provenance
    write_json(out, payload)

    es_p = (f"< 1/{report.es_bootstrap[2]}"
            if "es_p_below_resolution" in report.flags
            else f"{report.es_bootstrap[1]:.4f}")
    print(f"n = {report.n_obs}  exceedances = {report.n_exceedances}  "
          f"(alpha_exc = {report.alpha_exc:g})")
    print(f"coverage rate   {report.coverage_rate:.4f}")
    print(f"kupiec          LR = {report.kupiec[0]:.4f}  p = {report.kupiec[1]:.4f}")
    print(f"dq              stat = {report.dq[0]:.4f}  p = {report.dq[1]:.4f}  "
          f"dof = {report.dq[2]}")
    print(f"es bootstrap    mean excess = {report.es_bootstrap[0]:.5f}  "
          f"p = {es_p}")
    if report.flags:
        print(f"flags: {', '.join(report.flags)}")
    print(f"wrote {out}")

    if not no_plot:
        from .backtests import exceedance_indicator
        from .figures import save_backtest_figure

        fig = save_backtest_figure(
            date_index[keep], realized[keep], var_f[keep],
            exceedance_indicator(inp) > 0, _fig_path(out), es_f[keep])
        print(f"wrote {fig}")
    return 0


# ---------------------------------------------------------------------------
# repro-tables


def cmd_repro_tables(parser: argparse.ArgumentParser,
                     args: argparse.Namespace) -> int:
    config = read_config_file(args.config) if args.config else {}
    res = _Resolver(parser, args, config)
    reps = res.get("reps", cast=int, required=True)
    cases = res.get("case", default=(1,), cast=_cast_int_list)
    dists = res.get("dist", default=("normal",), cast=_cast_str_list)
    alpha = res.get("alpha", default=0.95, cast=float)
    window = res.get("window", default=500, cast=int)
    post = res.get("post", default=50, cast=int)
    m = res.get("m", default=13, cast=int)
    seed = res.seed()
    out = res.get("out", default="repro_tables.csv")
    no_plot = bool(res.get("no_plot", default=False, cast=_cast_bool))
    res.finish()

    if isinstance(cases, str):
        cases = _cast_int_list(cases)
    if isinstance(dists, str):
        dists = _cast_str_list(dists)

    cfg = ReproConfig(
        reps=reps,
        alpha=alpha,
        seed=seed,
        n_in=window,
        n_post=post,
        m=m,
        cases=tuple(cases),
        dists=tuple(dists),
    )
    results = repro_tables(cfg)
    rows = table_rows(results)
    write_table(out, TABLE_HEADER, rows, res.provenance("repro-tables"))
    print(render_text_table(results))
    print(f"wrote {out}")

    if not no_plot:
        from .figures import save_repro_figure

        fig = save_repro_figure(rows, _fig_path(out))
        print(f"wrote {fig}")
    return 0


# ---------------------------------------------------------------------------
# tau


def cmd_tau(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    config = read_config_file(args.config) if args.config else {}
    res = _Resolver(parser, args, config)
    alpha = res.get("alpha", default=0.05, cast=float)
    input_path = res.get("input")
    col = res.get("col", default="return")
    dist_name = res.get("dist")
    n = res.get("n", cast=int)
    compare = bool(res.get("compare", default=False, cast=_cast_bool))
    reps = res.get("reps", cast=int)
    step = res.get("grid_step", default=1e-4, cast=float)
    no_plot = bool(res.get("no_plot", default=False, cast=_cast_bool))

    if compare:
        out = res.get("out", default="tau_compare.csv")
        if dist_name is None or n is None or reps is None:
            parser.error("--compare needs --dist, --n and --reps")
        seed = res.seed()
        res.finish()
        result = tau_compare_experiment(n, dist_name, alpha, reps, seed=seed)
        provenance = res.provenance("tau")
        provenance["tau_true"] = result["tau_true"]
        write_table(
            out,
            ("rep", "tau_el", "tau_grid", "se_el", "se_grid"),
            result["rows"],
            provenance,
        )
        print(f"tau_true = {result['tau_true']:.6f}")
        print(f"median squared error: likelihood {result['median_se_el']:.3e}"
              f"  grid {result['median_se_grid']:.3e}"
              f"  (failed reps: {result['n_failed']})")
        print(f"wrote {out}")
        if not no_plot:
            from .figures import save_tau_compare_figure

            se_el = [r[3] for r in result["rows"]]
            se_grid = [r[4] for r in result["rows"]]
            fig = save_tau_compare_figure(
                se_el, se_grid, _fig_path(out),
                title=f"{dist_name}, n={n}, alpha={alpha:g}")
            print(f"wrote {fig}")
        return 0

    out = res.get("out", default="tau.json")
    if input_path is not None and dist_name is not None:
        parser.error("give either --input or --dist/--n, not both")
    if input_path is not None:
        res.finish()
        data = read_returns(input_path, col)
    else:
        if dist_name is None or n is None:
            parser.error("give --input FILE or --dist NAME with --n COUNT")
        seed = res.seed()
        res.finish()
        rng = np.random.default_rng(seed)
        data = tau_sampler(dist_name, rng, n)

    solution = max_el_estimate(ElProblem(np.asarray(data, dtype=float), alpha))
    grid_tau = grid_search_tau(np.asarray(data, dtype=float), alpha, step=step)
    payload = {
        "config": res.provenance("tau"),
        "el": solution.to_json_dict(),
        "grid_tau": grid_tau,
        "n_obs": int(len(data)),
    }
    write_json(out, payload)
    print(f"tau_el = {solution.tau:.6f}   tau_grid = {grid_tau:.6f}   "
          f"mu = {solution.mu:.6f}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calsel", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"calsel {__version__}")
    sup = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = sup.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key=value config file; flags win")
        sub.add_argument("--seed", type=int, help="RNG seed (generated and "
                         "printed when omitted)")
        sub.add_argument("--out", help="output path")
        return sub

    sim = add("simulate", "generate a conditional-volatility return path")
    sim.add_argument("--case", type=int, help="coefficient preset 1|2|3")
    sim.add_argument("--beta0", type=float)
    sim.add_argument("--gammas", help="comma-separated |Y| lag coefficients")
    sim.add_argument("--betas", help="comma-separated volatility lag coefficients")
    sim.add_argument("--dist", help="normal or t<nu> (default normal)")
    sim.add_argument("--n", type=int, help="observations to emit")
    sim.add_argument("--burn-in", type=int, dest="burn_in")
    sim.set_defaults(run=cmd_simulate)

    fct = add("forecast", "rolling one-step VaR/ES forecasts from a CSV")
    fct.add_argument("--input", help="input CSV with a return column")
    fct.add_argument("--col", help="return column name (default 'return')")
    fct.add_argument("--window", type=int, help="estimation window (default 500)")
    fct.add_argument("--alpha", type=float, help="tail level (default 0.05)")
    fct.add_argument("--tail", choices=("lower", "upper"))
    fct.add_argument("--m", type=int, help="sieve lag count (default 13)")
    fct.add_argument("--p", type=int)
    fct.add_argument("--q", type=int)
    fct.add_argument("--refit-every", dest="refit_every",
                     help="steps between refits; 'none' fits once")
    fct.add_argument("--el-fallback", dest="el_fallback", choices=("on", "off"),
                     help="grid fallback when the likelihood solve fails")
    fct.add_argument("--stderr", choices=("on", "off"),
                     help="append plug-in standard error columns")
    fct.add_argument("--no-plot", dest="no_plot", action="store_const",
                     const=True, help="skip the PNG rendering")
    fct.set_defaults(run=cmd_forecast)

    bt = add("backtest", "coverage and shortfall tests on a forecast file")
    bt.add_argument("--forecasts", help="forecast CSV from the forecast command")
    bt.add_argument("--data", help="optional raw series CSV to re-check "
                    "realized returns against")
    bt.add_argument("--col", help="return column in --data (default 'return')")
    bt.add_argument("--model", choices=("el1", "el2"),
                    help="sieve (el1) or refit (el2) forecasts (default el2)")
    bt.add_argument("--alpha", type=float, help="tail level (defaults to the "
                    "forecast file's provenance)")
    bt.add_argument("--tail", choices=("lower", "upper"))
    bt.add_argument("--n-boot", dest="n_boot", type=int,
                    help="bootstrap resamples (default 5000)")
    bt.add_argument("--no-plot", dest="no_plot", action="store_const",
                    const=True)
    bt.set_defaults(run=cmd_backtest)

    rt = add("repro-tables", "forecast-accuracy table over simulated replications")
    rt.add_argument("--reps", type=int, help="replication count")
    rt.add_argument("--case", help="preset case id or comma list (default 1)")
    rt.add_argument("--dist", help="distribution or comma list (default normal)")
    rt.add_argument("--alpha", type=float, help="tail level (default 0.95)")
    rt.add_argument("--window", type=int, help="in-sample length (default 500)")
    rt.add_argument("--post", type=int, help="post-sample length (default 50)")
    rt.add_argument("--m", type=int, help="sieve lag count (default 13)")
    rt.add_argument("--no-plot", dest="no_plot", action="store_const",
                    const=True)
    rt.set_defaults(run=cmd_repro_tables)

    tau = add("tau", "expectile level matched to a quantile level")
    tau.add_argument("--input", help="CSV of residuals or raw data")
    tau.add_argument("--col", help="column name (default 'return')")
    tau.add_argument("--alpha", type=float, help="quantile level (default 0.05)")
    tau.add_argument("--dist", help="normal, t<nu> or uniform (generated input)")
    tau.add_argument("--n", type=int, help="generated sample size")
    tau.add_argument("--compare", action="store_const", const=True,
                     help="replicate the estimator comparison as CSV")
    tau.add_argument("--reps", type=int, help="replications for --compare")
    tau.add_argument("--grid-step", dest="grid_step", type=float,
                     help="grid resolution (default 1e-4)")
    tau.add_argument("--no-plot", dest="no_plot", action="store_const",
                     const=True)
    tau.set_defaults(run=cmd_tau)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.error("a subcommand is required")
    sub = parser  # usage errors inside commands exit 1 through this parser
    try:
        return args.run(sub, args)
    except (ParameterError, InitializationError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CalselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
