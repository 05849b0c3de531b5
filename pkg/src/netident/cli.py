"""Command-line interface: ``netident <command> ...``.

Commands: analyze, check-spectra, simulate, identify, montecarlo.  Global
flags (accepted before or after the command): --seed, --json, --out-dir,
--grid-size.  Exit status is 0 on success and 1 when an error was reported.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import ConfigError, Orders, load_config
from .graph import (
    NoValidBlockingSetError,
    TargetModuleError,
    algorithm_a,
    build_graph,
    check_property1,
    fmt_set,
    select_blocking_set,
)
from .identify import (
    EstimationOptions,
    build_model_structure,
    estimate,
    excitation_diagnostic,
    extract_module,
    naive_miso_partition,
    whiteness_test,
)
from .immersion import check_zero_blocks, disturbance_spectrum, immerse
from .montecarlo import ExperimentManifest, run_montecarlo
from .report import Report, Table, emit_report, format_value, read_signals, write_signals
from .simulator import SimulationPlan, simulate
from .tf import default_grid, frequency_response

__all__ = ["main", "build_parser"]


class CLIError(Exception):
    pass


def _pair(text: str) -> tuple[int, int]:
    try:
        j, i = (int(x) for x in text.replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'j,i', got {text!r}") from None
    return j, i


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _orders(text: str) -> dict:
    out = {}
    for item in text.replace(" ", "").split(","):
        if not item:
            continue
        key, _, val = item.partition("=")
        if key not in ("nb", "nf", "nk", "nc", "nd") or not val.isdigit():
            raise argparse.ArgumentTypeError(f"bad order item {item!r}; use e.g. nb=1,nf=1,nk=1,nc=1,nd=1")
        out[key] = int(val)
    return out


def _add_common(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master random seed (default 0)")
    p.add_argument("--json", action="store_true", default=d(False), help="print a JSON summary on stdout")
    p.add_argument("--out-dir", default=d(None), help="directory for report, tables and figures")
    p.add_argument("--grid-size", type=int, default=d(256), help="frequency grid points (default 256)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netident", description="Identify modules in dynamic networks with correlated noise.")
    parser.add_argument("--version", action="version", version=f"netident {__version__}")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)

    p = sub.add_parser("analyze", parents=[common], help="select outputs, inputs and blocking nodes for a target")
    p.add_argument("config")
    p.add_argument("--target", type=_pair, required=True, help="target module as j,i")
    p.add_argument("--blocking", type=_int_list, default=None, help="force the blocking set, e.g. 6 or 6,7")

    p = sub.add_parser("check-spectra", parents=[common], help="verify zero blocks of the immersed disturbance spectrum")
    p.add_argument("config")
    p.add_argument("--target", type=_pair, required=True)
    p.add_argument("--blocking", type=_int_list, default=None)

    p = sub.add_parser("simulate", parents=[common], help="simulate node signals")
    p.add_argument("config")
    p.add_argument("-N", type=int, required=True, help="number of samples")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("-o", "--output", required=True, help="signal file to write")

    p = sub.add_parser("identify", parents=[common], help="estimate a target module from a signal file")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("--target", type=_pair, required=True)
    p.add_argument("--criterion", choices=("wls", "mldet"), default="mldet")
    p.add_argument("--orders", type=_orders, default=None, help="e.g. nb=1,nf=1,nk=1,nc=1,nd=1")
    p.add_argument("--setup", choices=("mimo", "miso"), default="mimo")
    p.add_argument("--starts", type=int, default=8)

    p = sub.add_parser("montecarlo", parents=[common], help="consistency experiment, MIMO versus naive MISO")
    p.add_argument("config", nargs="?")
    p.add_argument("--target", type=_pair)
    p.add_argument("-R", "--reps", type=int, default=20)
    p.add_argument("-N", type=_int_list, default=[500, 2000, 8000], help="comma-separated sample sizes")
    p.add_argument("--criterion", choices=("wls", "mldet"), default="mldet")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--manifest", help="re-run from a manifest.toml (other run options are ignored)")
    return parser


# -- commands ---------------------------------------------------------------------

def _criterion(name: str) -> str:
    return "ml_det" if name == "mldet" else name


def _partition(model, target, blocking, trace=None):
    j, i = target
    P0 = algorithm_a(model, j, i)
    if blocking is not None:
        P = P0.with_blocking(blocking)
        return P0, P, check_property1(model, P)
    P = select_blocking_set(model, P0, trace=trace)
    return P0, P, check_property1(model, P)


def _partition_values(rep: Report, P):
    for k, v in P.describe().items():
        rep.values[k] = v


def cmd_analyze(args) -> Report:
    model = load_config(args.config).model
    trace = []
    P0, P, check = _partition(model, args.target, args.blocking, trace)
    rep = Report("analyze")
    rep.values["config"] = args.config
    _partition_values(rep, P)
    rep.values["blocking_forced"] = args.blocking is not None
    rep.values["conditions_passed"] = check.passed
    rep.values["failed_conditions"] = check.failed()

    j, i = args.target
    rep.text += [
        f"target G_{j}{i} in {model.name} ({model.L} nodes)",
        f"Y = {fmt_set(P.Y)}   D = {fmt_set(P.D)}",
        f"Q = {fmt_set(P.Q)}   o = {P.o if P.o is not None else '-'}   A = {fmt_set(P.A)}",
        f"B = {fmt_set(P.B)}   Z = {fmt_set(P.Z)}",
        "",
        "confounders for A -> Y:" if check.confounders else "confounders for A -> Y: none",
    ]
    rep.text += ["  " + c.describe() for c in check.confounders]
    rep.text += ["", f"blocking conditions for B = {fmt_set(P.B)}:"] + ["  " + l for l in check.lines()]
    rejected = [r for r in trace if not r.passed]
    if rejected:
        rep.text += ["", "rejected blocking candidates:"]
        for r in rejected:
            rep.text.append(f"  B = {fmt_set(r.partition.B)} fails {', '.join(r.failed())}")
            rep.text += ["    " + l for l in r.lines() if "FAIL" in l]

    conds = Table(["B", "condition", "applicable", "passed", "witnesses"])
    for r in rejected + [check]:
        for c in r.conditions:
            conds.add(fmt_set(r.partition.B), c.name, c.applicable, c.passed, " ; ".join(c.witnesses))
    confs = Table(["source", "kind", "input", "output", "input_path", "output_path"])
    from .graph import fmt_path
    for c in check.confounders:
        confs.add(f"e{c.e_index}", c.kind, f"w{c.input_witness}", f"w{c.output_witness}",
                  fmt_path(c.input_path), fmt_path(c.output_path))
    rep.tables = {"conditions": conds, "confounders": confs}
    return rep


def cmd_check_spectra(args) -> Report:
    model = load_config(args.config).model
    _, P, check = _partition(model, args.target, args.blocking)
    grid = default_grid(args.grid_size)
    sys_ = immerse(model, P, grid)
    spec = disturbance_spectrum(sys_)
    br = check_zero_blocks(spec)
    rep = Report("check-spectra")
    rep.values["config"] = args.config
    _partition_values(rep, P)
    rep.values["grid_size"] = len(grid)
    rep.values["threshold"] = br.tol
    for k, v in br.ratios.items():
        rep.values[f"max_ratio.{k}"] = v
    rep.values["passed"] = br.passed
    rep.values["blocking_conditions_passed"] = check.passed

    blocks = Table(["block", "max_ratio", "passed"])
    for k, v in br.ratios.items():
        blocks.add(k, v, v < br.tol)
    curves = Table(["omega"] + list(br.per_frequency))
    for m, w in enumerate(grid.frequencies):
        curves.add(float(w), *(float(c[m]) for c in br.per_frequency.values()))
    rep.tables = {"zero_blocks": blocks, "spectrum_blocks": curves}
    rep.figures["spectrum_blocks"] = plotting.spectrum_blocks
    rep.text += [f"disturbance spectrum zero blocks for B = {fmt_set(P.B)} (threshold {br.tol:g}):"]
    rep.text += [f"  {k}: max relative norm {v:.3e}  {'pass' if v < br.tol else 'FAIL'}" for k, v in br.ratios.items()]
    return rep


def cmd_simulate(args) -> Report:
    cfg = load_config(args.config)
    rec = simulate(SimulationPlan(cfg.model, args.N, burn_in=args.burn_in, seed=args.seed))
    try:
        write_signals(rec, args.output)
    except OSError as exc:
        raise CLIError(f"cannot write {args.output}: {exc.strerror}") from None
    rep = Report("simulate")
    rep.values.update({"config": args.config, "N": args.N, "burn_in": args.burn_in, "seed": args.seed,
                       "output": args.output, "channels": rec.names})
    prev = Table(["t"] + [f"w{k}" for k in cfg.model.nodes])
    for t in range(min(rec.N, 500)):
        prev.add(t, *(rec[f"w{k}"][t] for k in cfg.model.nodes))
    rep.tables["signal_preview"] = prev
    rep.figures["signals"] = plotting.signals
    rep.text.append(f"wrote {rec.N} samples of {len(rec.names)} channels to {args.output}")
    return rep


def cmd_identify(args) -> Report:
    cfg = load_config(args.config)
    model = cfg.model
    j, i = args.target
    orders = cfg.orders
    if args.orders:
        orders = Orders(**{**{k: getattr(orders, k) for k in ("nb", "nf", "nk", "nc", "nd")}, **args.orders},
                        per_module=orders.per_module)
    try:
        data = read_signals(args.data)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    if args.setup == "mimo":
        _, P, check = _partition(model, (j, i), None)
        st = build_model_structure(P, model, None, orders)
    else:
        P = naive_miso_partition(model, j, i)
        st = build_model_structure(P, model, np.eye(model.L, dtype=bool), orders)
    missing = [f"w{k}" for k in sorted(P.measured) if f"w{k}" not in data]
    if missing:
        raise CLIError(f"data file lacks channels {', '.join(missing)}")
    crit = _criterion(args.criterion)
    res = estimate(st, data, crit, EstimationOptions(n_starts=args.starts, seed=args.seed))
    grid = default_grid(args.grid_size)
    est = extract_module(res, j, i, grid)
    g0 = frequency_response(model.G(j, i), grid)

    rep = Report("identify")
    rep.values.update({"config": args.config, "data": args.data, "target": [j, i], "setup": args.setup,
                       "criterion": crit, "N": data.N})
    _partition_values(rep, P)
    for k, v in res.summary().items():
        rep.values[k] = v
    rep.values["target_numerator"] = list(est.tf.numerator)
    rep.values["target_denominator"] = list(est.tf.denominator)
    rep.values["target_dead_time"] = est.tf.dead_time
    rep.values["relative_error_vs_config"] = float(np.max(np.abs(est.response - g0)) / np.max(np.abs(g0)))
    white = whiteness_test(res.residuals)
    for name, w in white.items():
        rep.values[f"ljung_box_pvalue.{name}"] = w["pvalue"]
    if args.setup == "mimo" and all(f"e{y}" in data.names for y in st.outputs):
        # simulated data carries the noise, so the excitation condition can be checked
        rep.values["excitation_min_eigenvalue"] = excitation_diagnostic(st, model, data)["min_eigenvalue"]

    coefs = Table(["module", "kind", "index", "value"])
    for s in st.modules:
        tf = res.module(s.row, s.col)
        for k, v in enumerate(tf.numerator):
            coefs.add(f"G{s.row},{s.col}", "num", k, v)
        for k, v in enumerate(tf.denominator):
            coefs.add(f"G{s.row},{s.col}", "den", k, v)
        coefs.add(f"G{s.row},{s.col}", "delay", 0, tf.dead_time)
    resp = Table(["omega", "estimated_mag", "estimated_phase", "true_mag", "true_phase"])
    for m, w in enumerate(grid.frequencies):
        resp.add(float(w), abs(est.response[m]), float(np.angle(est.response[m])), abs(g0[m]), float(np.angle(g0[m])))
    hist = Table(["iteration", "criterion"])
    for k, v in enumerate(res.history):
        hist.add(k, v)
    rep.tables = {"module_coefficients": coefs, "module_response": resp, "criterion_history": hist}
    rep.figures["module_response"] = plotting.module_response
    rep.text += [
        f"{args.setup} setup for G_{j}{i}: outputs {list(st.outputs)}, inputs {list(st.inputs)}, {st.n_params} parameters",
        f"criterion {crit} = {res.value:.6g} after {res.iterations} iterations (best of {res.restarts} starts)",
        f"estimated G_{j}{i} = {est.tf!r}",
        f"relative error against the configured module: {rep.values['relative_error_vs_config']:.4g}",
    ]
    return rep


def cmd_montecarlo(args) -> Report:
    if args.manifest:
        m = ExperimentManifest.load(args.manifest)
        if args.out_dir is not None:
            from dataclasses import replace
            m = replace(m, out_dir=args.out_dir)
    else:
        if args.config is None or args.target is None:
            raise CLIError("montecarlo needs a config and --target (or --manifest)")
        m = ExperimentManifest(config=args.config, target=args.target, N=tuple(args.N), reps=args.reps,
                               seed=args.seed, criterion=_criterion(args.criterion), n_starts=args.starts,
                               burn_in=args.burn_in, grid_size=args.grid_size, baseline=not args.no_baseline,
                               n_jobs=args.jobs, out_dir=args.out_dir)
    res = run_montecarlo(m, emit=True)
    rep = res.report()
    rep.figures = {}    # already written by run_montecarlo
    return rep


COMMANDS = {
    "analyze": cmd_analyze,
    "check-spectra": cmd_check_spectra,
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "montecarlo": cmd_montecarlo,
}


def _json_ready(rep: Report) -> dict:
    def conv(v):
        if isinstance(v, (set, frozenset)):
            return sorted(v)
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, float) and not np.isfinite(v):
            return format_value(v)
        return v
    return {
        "command": rep.command,
        "values": {k: conv(v) for k, v in rep.values.items()},
        "tables": {k: {"columns": t.columns, "rows": len(t.rows)} for k, t in rep.tables.items()},
    }


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rep = COMMANDS[args.command](args)
        if args.out_dir is not None and args.command != "montecarlo":
            emit_report(rep, args.out_dir)
    except (ConfigError, TargetModuleError, NoValidBlockingSetError, CLIError, ValueError, OSError, RuntimeError) as exc:
        print(f"netident {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(_json_ready(rep), indent=2, default=str))
    else:
        print(rep.render_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
