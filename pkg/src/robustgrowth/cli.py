"""Command-line interface: ``robustgrowth <command> [options]``.

Commands: weights, qp, simulate, capcurve, diagnose, lambda.  Options may
also come from a JSON file given with ``--config``; flags on the command
line override file values.  Exit codes: 0 success, 2 configuration error,
3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from . import model as mdl
from . import portfolio as pf
from . import qp as qpm
from . import sim
from .errors import ConfigError, InvalidInput, InvalidParameter, NotGradientError, NumericalError

DEFAULTS = {
    "common": {"seed": 0, "out": "out", "threads": 1, "format": "csv", "plot": False},
    "weights": {"grid": 101, "n_points": 100, "portfolio": "all"},
    "qp": {"M": 25, "K": 100, "N": 100, "tol": 1e-8, "max_iter": 100_000, "n_lambda": 100_000,
           "grid": 101, "scale_spread": 0.0},
    "simulate": {"dt": 1e-3, "T": 100.0, "stride": 100, "x0": None,
                 "portfolios": "market,unconstrained,long_only", "bundle": None},
    "capcurve": {"a": "0.5,1,2", "d": "500,5000", "n_draws": 1000},
    "diagnose": {"n_samples": 20000},
    "lambda": {"n": 100_000},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustgrowth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_model=True):
        sp.add_argument("--config", help="JSON file with option values (flags override it)")
        if needs_model:
            sp.add_argument("--model", help="model JSON file, e.g. "
                            '{"preset": "dirichlet", "d": 2, "a": 3, "b": 1, "sigma2": 0.1}')
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--out", help="output directory (default ./out)")
        sp.add_argument("--threads", type=int, help="worker threads for Monte Carlo assembly")
        sp.add_argument("--format", choices=["csv", "json"], help="table format (default csv)")
        sp.add_argument("--plot", action="store_true", default=None,
                        help="also render a PNG figure next to the data")

    s = sub.add_parser("weights", help="tabulate optimal portfolio weights")
    common(s)
    s.add_argument("--grid", type=int, help="number of interior grid points for d = 2")
    s.add_argument("--n-points", dest="n_points", type=int, help="uniform sample size for d > 2")
    s.add_argument("--portfolio", choices=["all", "unconstrained", "market", "long_only"])

    s = sub.add_parser("qp", help="fit the log-affine mixture portfolio")
    common(s)
    s.add_argument("--M", type=int, help="number of generators")
    s.add_argument("--K", type=int, help="hyperplanes per generator")
    s.add_argument("--N", type=int, help="Monte Carlo samples for Q and r")
    s.add_argument("--tol", type=float, help="Frank-Wolfe gap tolerance")
    s.add_argument("--max-iter", dest="max_iter", type=int)
    s.add_argument("--n-lambda", dest="n_lambda", type=int, help="samples for the growth estimate")
    s.add_argument("--grid", type=int, help="weight-curve points (d = 2) or sample points")
    s.add_argument("--scale-spread", dest="scale_spread", type=float,
                   help="random log-scale of each hyperplane (default 0, the plain family)")

    s = sub.add_parser("simulate", help="simulate one market path and wealth curves")
    common(s)
    s.add_argument("--dt", type=float)
    s.add_argument("--T", type=float)
    s.add_argument("--stride", type=int, help="record every k-th step")
    s.add_argument("--x0", help="comma-separated start point (default barycenter)")
    s.add_argument("--portfolios", help="comma list from market,unconstrained,long_only,qp")
    s.add_argument("--bundle", help="QP bundle JSON for the qp portfolio")

    s = sub.add_parser("capcurve", help="capital distribution curves of Dirichlet draws")
    common(s, needs_model=False)
    s.add_argument("--a", help="comma list of Dirichlet parameters")
    s.add_argument("--d", help="comma list of dimensions")
    s.add_argument("--n-draws", dest="n_draws", type=int)

    s = sub.add_parser("diagnose", help="structural and assumption diagnostics")
    common(s)
    s.add_argument("--n-samples", dest="n_samples", type=int)

    s = sub.add_parser("lambda", help="optimal growth rates")
    common(s)
    s.add_argument("--n", type=int, help="Monte Carlo samples")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags (flags win)."""
    cmd = args.command
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config) as fh:
                filecfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}", key="config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", key="config") from None
        if not isinstance(filecfg, dict):
            raise ConfigError("config file must contain a JSON object", key="config")
        allowed = set(cfg) | {"model"}
        for k, v in filecfg.items():
            if k not in allowed:
                raise ConfigError(f"config key '{k}': not an option of '{cmd}'", key=k)
            cfg[k] = v
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    cfg["command"] = cmd
    return cfg


def _model(cfg, strict=True) -> tuple[mdl.ModelInputs, dict]:
    src = cfg.get("model")
    if src is None:
        raise ConfigError("option 'model': a model file is required", key="model")
    if isinstance(src, dict):
        return mdl.model_from_dict(src, strict=strict), src
    try:
        with open(src) as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"option 'model': file not found: {src}", key="model") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"option 'model': invalid JSON: {exc}", key="model") from None
    return mdl.model_from_dict(spec, strict=strict), spec


def _positive(cfg, *keys, integer=True):
    for k in keys:
        v = cfg[k]
        ok = isinstance(v, int) and not isinstance(v, bool) if integer else isinstance(v, (int, float))
        if not ok or v <= 0:
            raise ConfigError(f"option '{k}': must be a positive {'integer' if integer else 'number'}", key=k)


def _meta(cfg, model_spec=None) -> dict:
    body = {k: v for k, v in cfg.items() if k not in ("out", "threads", "plot", "model")}
    if model_spec is not None:
        body["model"] = model_spec
    return {"command": cfg["command"], "seed": cfg["seed"], "config_hash": io.config_hash(body),
            "config": body}


def _grid_points(m, cfg, key):
    if m.d == 2:
        t = np.linspace(0, 1, cfg[key] + 2)[1:-1]
        return np.stack([t, 1 - t], axis=1)
    from .simplex import sample_dirichlet

    return sample_dirichlet(np.ones(m.d), cfg[key], cfg["seed"])


def _out(cfg, name):
    os.makedirs(cfg["out"], exist_ok=True)
    return os.path.join(cfg["out"], name)


def cmd_weights(cfg) -> list[str]:
    m, spec = _model(cfg)
    _positive(cfg, "grid", "n_points")
    which = cfg["portfolio"]
    if which == "long_only" and m.d != 2:
        raise ConfigError("option 'portfolio': long_only weights need d = 2", key="portfolio")
    x = _grid_points(m, cfg, "grid" if m.d == 2 else "n_points")
    makers = {
        "unconstrained": lambda: pf.unconstrained_optimum(m),
        "market": pf.market_portfolio,
        "long_only": lambda: pf.solve_two_asset_long_only(m),
    }
    names = [which] if which != "all" else ["unconstrained", "market"] + (["long_only"] if m.d == 2 else [])
    meta = _meta(cfg, spec)
    header = [f"x{i + 1}" for i in range(m.d)] + [f"pi{i + 1}" for i in range(m.d)]
    files, curves = [], {}
    for name in names:
        w = makers[name]().weights(x)
        files.append(io.write_table(_out(cfg, f"weights_{name}"), header,
                                    np.hstack([x, w]).tolist(), dict(meta, portfolio=name), cfg["format"]))
        curves[name] = w[:, 0]
    if cfg["plot"] and m.d == 2:
        from .plotting import plot_weights

        files.append(plot_weights(_out(cfg, "weights.png"), x[:, 0], curves, "weights"))
    return files


def cmd_qp(cfg) -> list[str]:
    m, spec = _model(cfg)
    _positive(cfg, "M", "K", "N", "max_iter", "n_lambda", "grid", "threads")
    _positive(cfg, "tol", integer=False)
    if not isinstance(cfg["scale_spread"], (int, float)) or cfg["scale_spread"] < 0:
        raise ConfigError("option 'scale_spread': must be a nonnegative number", key="scale_spread")
    fam, prob, sol, gp, rep = qpm.run_qp(m, cfg["M"], cfg["K"], cfg["N"], cfg["seed"], cfg["tol"],
                                         cfg["max_iter"], cfg["n_lambda"], cfg["threads"],
                                         float(cfg["scale_spread"]))
    meta = _meta(cfg, spec)
    bundle = qpm.bundle_dict(fam, prob, sol, rep, meta)
    if m.preset is not None and m.preset.kind == "dirichlet":
        try:
            bundle["lambda_closed_form"] = pf.lambda_dirichlet_closed_form(m)
        except InvalidParameter:
            pass
    files = [io.write_json(_out(cfg, "qp_bundle.json"), bundle)]
    x = _grid_points(m, cfg, "grid")
    header = [f"x{i + 1}" for i in range(m.d)] + [f"pi{i + 1}" for i in range(m.d)]
    w = gp.weights(x)
    files.append(io.write_table(_out(cfg, "qp_weights"), header, np.hstack([x, w]).tolist(),
                                dict(meta, portfolio="qp"), cfg["format"]))
    if cfg["plot"]:
        from .plotting import plot_mixture, plot_weights

        files.append(plot_mixture(_out(cfg, "qp_mixture.png"), sol.mu_hat))
        if m.d == 2:
            curves = {"qp": w[:, 0]}
            try:
                curves["long_only"] = pf.solve_two_asset_long_only(m).weights(x)[:, 0]
            except (NumericalError, InvalidParameter):
                pass
            files.append(plot_weights(_out(cfg, "qp_weights.png"), x[:, 0], curves, "QP portfolio"))
    return files


def _parse_list(v, cast, key):
    if isinstance(v, (list, tuple)):
        items = v
    else:
        items = [s for s in str(v).split(",") if s.strip()]
    try:
        return [cast(s) for s in items]
    except (TypeError, ValueError):
        raise ConfigError(f"option '{key}': cannot parse {v!r}", key=key) from None


def cmd_simulate(cfg) -> list[str]:
    m, spec = _model(cfg)
    _positive(cfg, "stride")
    for k in ("dt", "T"):
        if not isinstance(cfg[k], (int, float)) or cfg[k] < 0 or (k == "dt" and cfg[k] == 0):
            raise ConfigError(f"option '{k}': must be a positive number", key=k)
    names = _parse_list(cfg["portfolios"], str, "portfolios")
    ports = {}
    for name in names:
        if name == "market":
            ports[name] = pf.market_portfolio()
        elif name == "unconstrained":
            ports[name] = pf.unconstrained_optimum(m)
        elif name == "long_only":
            if m.d != 2:
                raise ConfigError("option 'portfolios': long_only needs d = 2", key="portfolios")
            ports[name] = pf.solve_two_asset_long_only(m)
        elif name == "qp":
            if not cfg["bundle"]:
                raise ConfigError("option 'bundle': required for the qp portfolio", key="bundle")
            try:
                fam, mu, _ = qpm.load_bundle(cfg["bundle"])
            except FileNotFoundError:
                raise ConfigError(f"option 'bundle': file not found: {cfg['bundle']}", key="bundle") from None
            if fam.d != m.d:
                raise ConfigError("option 'bundle': family dimension differs from the model", key="bundle")
            ports[name] = qpm.qp_portfolio(m, fam, mu)
        else:
            raise ConfigError(f"option 'portfolios': unknown portfolio {name!r}", key="portfolios")
    x0 = mdl.barycenter(m.d) if cfg["x0"] is None else np.asarray(_parse_list(cfg["x0"], float, "x0"))
    try:
        x0 = mdl.validate_point(m, x0)
    except InvalidInput as exc:
        raise ConfigError(f"option 'x0': {exc}", key="x0") from None
    meta = _meta(cfg, spec)
    header = ["time"] + [f"x{i + 1}" for i in range(m.d)] + [f"log_V_{n}" for n in ports]
    if cfg["T"] < cfg["dt"]:
        files = [io.write_table(_out(cfg, "simulate"), header, [], meta, cfg["format"]),
                 io.write_table(_out(cfg, "growth"), ["portfolio", "growth", "stderr"], [], meta,
                                cfg["format"])]
        return files
    sc = sim.SimConfig(dt=float(cfg["dt"]), T=float(cfg["T"]), seed=cfg["seed"], record_stride=cfg["stride"])
    res = sim.simulate(m, x0, sc, ports)
    cols = [res.path.times[:, None], res.path.x] + [res.wealth[n].log_V[:, None] for n in ports]
    files = [io.write_table(_out(cfg, "simulate"), header, np.hstack(cols).tolist(), meta, cfg["format"])]
    rows = []
    for n in ports:
        g, se = sim.growth_rate(res.wealth[n])
        rows.append([n, g, se])
    files.append(io.write_table(_out(cfg, "growth"), ["portfolio", "growth", "stderr"], rows, meta,
                                cfg["format"]))
    files.append(io.write_json(_out(cfg, "simulate_meta.json"), dict(
        meta, dt=sc.dt, T=sc.T, model_hash=io.config_hash(spec), boundary_hits=res.path.boundary_hits,
        guard_trips=res.guard_trips)))
    if cfg["plot"]:
        from .plotting import plot_wealth

        files.append(plot_wealth(_out(cfg, "wealth.png"), res.path.times,
                                 {n: res.wealth[n].log_V for n in ports}, "relative wealth"))
    return files


def cmd_capcurve(cfg) -> list[str]:
    avals = _parse_list(cfg["a"], float, "a")
    dvals = _parse_list(cfg["d"], int, "d")
    _positive(cfg, "n_draws")
    if any(a <= 0 for a in avals):
        raise ConfigError("option 'a': values must be positive", key="a")
    if any(d < 2 for d in dvals):
        raise ConfigError("option 'd': values must be >= 2", key="d")
    curves = []
    for i, d in enumerate(dvals):
        for j, a in enumerate(avals):
            seed = int(np.random.SeedSequence([cfg["seed"], i, j]).generate_state(1)[0])
            curves.append(sim.capital_distribution_curve(a, d, cfg["n_draws"], seed))
    keys = sorted(curves[0].quantiles)
    header = ["a", "d", "rank", "mean"] + [f"q{q:g}" for q in keys]
    rows = [r for c in curves for r in c.rows()]
    files = [io.write_table(_out(cfg, "capcurve"), header, rows, _meta(cfg), cfg["format"])]
    if cfg["plot"]:
        from .plotting import plot_capital_curves

        files.append(plot_capital_curves(_out(cfg, "capcurve.png"), curves))
    return files


def cmd_diagnose(cfg) -> list[str]:
    m, spec = _model(cfg, strict=False)
    _positive(cfg, "n_samples")
    bary = mdl.barycenter(m.d)
    graph = mdl.check_graph_connectivity(m, bary)
    rep = mdl.assumption_diagnostics(m, cfg["n_samples"], cfg["seed"])
    conds = mdl.preset_conditions(m)
    rank_conds = mdl.rank_based_conditions(m)
    doc = {
        "meta": _meta(cfg, spec),
        "graph": {"status": graph.describe(), "connected": graph.connected,
                  "components": [[i + 1 for i in c] for c in graph.components],
                  "power_positive": graph.power_positive},
        "preset_conditions": conds,
        "assumptions": rep.to_dict(),
        "rank_based": {"spec": all(rank_conds.values()), "conditions": rank_conds},
    }
    failed = [k for k, v in conds.items() if not v] + rep.failed()
    if not graph.connected:
        failed.append("graph connected")
    doc["passed"] = not failed
    doc["failed"] = failed
    try:
        doc["rank_based"]["unconstrained_optimum"] = pf.is_rank_based_portfolio(
            pf.unconstrained_optimum(m), m.d, 50, cfg["seed"])
    except NotGradientError:
        doc["rank_based"]["unconstrained_optimum"] = None
    return [io.write_json(_out(cfg, "diagnose.json"), doc)]


def cmd_lambda(cfg) -> list[str]:
    m, spec = _model(cfg)
    _positive(cfg, "n")
    closed = None
    if m.preset is not None and m.preset.kind == "dirichlet":
        closed = pf.lambda_dirichlet_closed_form(m)
    rep = pf.lambda_mc(m, pf.unconstrained_optimum(m), cfg["n"], cfg["seed"], closed_form=closed)
    rows = [["lambda", "closed_form", closed if closed is not None else float("nan"), 0.0],
            ["lambda", "monte_carlo", rep.lambda_mc, rep.stderr]]
    if rep.ibp_estimate is not None:
        rows.append(["lambda", "monte_carlo_ibp", rep.ibp_estimate, rep.ibp_stderr])
    if m.d == 2:
        sol = pf.solve_two_asset_long_only(m)
        rows.append(["lambda_long", "quadrature", sol.lambda_long, 0.0])
        rows.append(["lambda", "quadrature", sol.lambda_unconstrained, 0.0])
    return [io.write_table(_out(cfg, "lambda"), ["quantity", "method", "value", "stderr"], rows,
                           _meta(cfg, spec), cfg["format"])]


COMMANDS = {"weights": cmd_weights, "qp": cmd_qp, "simulate": cmd_simulate, "capcurve": cmd_capcurve,
            "diagnose": cmd_diagnose, "lambda": cmd_lambda}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _positive(cfg, "threads")
        if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise ConfigError("option 'seed': must be a nonnegative integer", key="seed")
        if cfg["format"] not in ("csv", "json"):
            raise ConfigError("option 'format': must be csv or json", key="format")
        files = COMMANDS[args.command](cfg)
    except (ConfigError, InvalidParameter, InvalidInput, NotGradientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
