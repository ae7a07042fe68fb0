"""Command-line front end.

Every subcommand writes its outputs plus ``resolved_config.json`` into
``--out``. Exit codes: 0 success (a blow-up is a valid outcome), 2 invalid
input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, grid, io, pde, pdmp, steady
from .errors import NumericError, OutOfRange, ValidationError
from .model import classify, validate

log = logging.getLogger("lifmf")

MODEL_KEYS = ("h", "v_r", "sigma0", "J")

DEFAULTS = {
    "regime": {},
    "simulate-neuron": {"v0": 0.0, "horizon": 1.0, "n_samples": 100, "seed": 0},
    "simulate-network": {"N": 100, "v0": 0.0, "horizon": 1.0, "seed": 0},
    "solve-pde": {"n": 400, "dt": "auto", "t_end": 1.0, "output_times": "", "init": "uniform",
                  "eps_blow": 1e-6, "sigma_cap": 1e8, "scheme": "muscl"},
    "steady-state": {"nodes_per_period": 512, "sigma_min": None, "sigma_max": None, "n_scan": 400,
                     "threads": 1},
    "scan-sigma": {"nodes_per_period": 512, "sigma_min": None, "sigma_max": None, "n_scan": 400,
                   "threads": 1},
    "doeblin-check": {"starts": "0,0.25,0.5,0.75,0.999", "replicas": 200_000, "bins": 5, "seed": 0,
                      "threads": 1},
    "verify-contraction": {"init_a": "dirac:0", "init_b": "dirac:0.999", "n": 400, "dt": "auto",
                           "t_end": 200.0, "n_samples": 400, "scheme": "upwind"},
    "verify-stability": {"init": "uniform", "n": 400, "dt": "auto", "t_end": 200.0, "n_samples": 400,
                         "scheme": "muscl"},
}

HELP = {
    "regime": "evaluate the regime inequalities",
    "simulate-neuron": "event-exact single neuron trajectory",
    "simulate-network": "N-neuron network with cascades",
    "solve-pde": "finite-volume solution of the mean-field equation",
    "steady-state": "steady densities (self-consistent rates when J > 0)",
    "scan-sigma": "scan F - G over sigma and list the roots",
    "doeblin-check": "Monte Carlo check of the minorization condition",
    "verify-contraction": "TV decay of the linear equation against its envelope",
    "verify-stability": "TV decay to the steady state for weak coupling",
}


def _add_model_args(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--h", type=float, default=S, help="jump size in (0, 1)")
    p.add_argument("--v-r", dest="v_r", type=float, default=S, help="reset potential in (0, 1)")
    p.add_argument("--sigma0", type=float, default=S, help="external arrival rate")
    p.add_argument("--J", type=float, default=S, help="coupling (default 0)")
    p.add_argument("--config", default=S, help="flat JSON or key=value file; flags override it")
    p.add_argument("--out", default=S, help="output directory (default ./out)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="lifmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lifmf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name])
        _add_model_args(p)
        for key, value in opts.items():
            flag = "--" + key.replace("_", "-")
            kind = type(value) if isinstance(value, (int, float)) and value is not None else str
            if key in ("sigma_min", "sigma_max"):
                kind = float
            if key == "dt":
                kind = str
            p.add_argument(flag, dest=key, type=kind, default=S)
    return parser


def load_config(path: str) -> dict:
    """Flat JSON object, or ``key=value`` lines with # comments."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise OutOfRange(f"config line without '=': {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                data[key] = json.loads(value)
            except json.JSONDecodeError:
                data[key] = value
    if not isinstance(data, dict):
        raise OutOfRange("config file must hold a flat object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(ns: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags."""
    cfg = {"J": 0.0, "out": "out", **DEFAULTS[ns.command]}
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    if "config" in flags:
        loaded = load_config(flags.pop("config"))
        loaded.pop("warnings", None)  # written by a previous run, not an input
        if loaded.pop("command", ns.command) != ns.command:
            raise OutOfRange("config file was resolved for a different command")
        cfg.update(loaded)
    cfg.update(flags)
    missing = [k for k in MODEL_KEYS if k not in cfg]
    if missing:
        raise OutOfRange(f"missing model parameter(s): {', '.join(missing)}")
    unknown = set(cfg) - set(MODEL_KEYS) - {"out"} - set(DEFAULTS[ns.command])
    if unknown:
        raise OutOfRange(f"unknown option(s) for {ns.command}: {', '.join(sorted(unknown))}")
    if "seed" in cfg and not (isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 2**64):
        raise OutOfRange(f"seed must be an unsigned 64-bit integer, got {cfg['seed']!r}")
    cfg["command"] = ns.command
    return cfg


def parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise OutOfRange(f"expected comma-separated numbers, got {text!r}") from None


def parse_initial(text: str, spec: grid.GridSpec) -> grid.GridDensity:
    """uniform | gaussian[:mean:sd] | dirac:v | indicator:lo:hi."""
    kind, *args = str(text).split(":")
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise OutOfRange(f"bad initial datum {text!r}") from None
    if kind == "uniform" and not vals:
        return grid.uniform(spec)
    if kind == "gaussian" and len(vals) in (0, 2):
        return grid.gaussian(spec, *vals)
    if kind == "dirac" and len(vals) == 1:
        return grid.dirac(spec, vals[0])
    if kind == "indicator" and len(vals) == 2:
        return grid.indicator(spec, *vals)
    raise OutOfRange(f"bad initial datum {text!r}; use uniform, gaussian[:m:s], dirac:v or indicator:lo:hi")


def _dt(value):
    if value == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise OutOfRange(f"dt must be 'auto' or a number, got {value!r}") from None


def _sigma_range(cfg, params):
    lo, hi = cfg["sigma_min"], cfg["sigma_max"]
    if lo is None and hi is None:
        return None
    return (lo if lo is not None else params.sigma0 * (1 + 1e-9), hi if hi is not None else 1e4 * params.sigma0)


def cmd_regime(cfg, params, out: Path):
    report = classify(params).to_dict()
    io.write_json(out / "regime.json", report)
    sys.stdout.write(io.dumps(report))


def cmd_simulate_neuron(cfg, params, out: Path):
    times = np.linspace(0.0, cfg["horizon"], int(cfg["n_samples"]) + 1)
    run = pdmp.simulate_neuron(params, cfg["v0"], cfg["horizon"], cfg["seed"], times)
    io.write_csv(out / "trajectory.csv", ("t", "v"), run.csv_rows())
    io.write_csv(out / "spikes.csv", ("t", "neuron", "cascade"), run.spikes.csv_rows())
    io.write_json(out / "summary.json", {"n_spikes": len(run.spikes), "n_arrivals": run.n_arrivals})


def cmd_simulate_network(cfg, params, out: Path):
    N = int(cfg["N"])
    run = pdmp.simulate_network(params, N, np.full(N, float(cfg["v0"])), cfg["horizon"], cfg["seed"])
    sizes = run.cascade_sizes()
    io.write_csv(out / "spikes.csv", ("t", "neuron", "cascade"), run.spikes.csv_rows())
    io.write_csv(out / "final_state.csv", ("neuron", "v"), enumerate(run.final_v))
    io.write_json(out / "summary.json", {
        "n_spikes": len(run.spikes),
        "n_arrivals": run.n_arrivals,
        "n_cascades": int(sizes.size),
        "max_cascade": int(sizes.max()) if sizes.size else 0,
    })


def cmd_solve_pde(cfg, params, out: Path):
    spec = grid.make_spec(int(cfg["n"]), params.h, params.v_r)
    mu0 = parse_initial(cfg["init"], spec)
    solve_cfg = pde.SolveConfig(n=spec.n, dt=_dt(cfg["dt"]), t_end=float(cfg["t_end"]),
                                output_times=parse_floats(cfg["output_times"]), eps_blow=float(cfg["eps_blow"]),
                                sigma_cap=float(cfg["sigma_cap"]), scheme=cfg["scheme"])
    res = pde.solve(mu0, params, solve_cfg)
    rows = []
    for k, state in enumerate(res.states):
        name = f"density_{k:04d}.csv"
        io.write_csv(out / name, ("v_center", "density"), grid.to_csv_rows(state.g))
        rows.append((k, state.t, int(state.blown_up), name))
    io.write_csv(out / "outputs.csv", ("index", "t", "blown_up", "file"), rows)
    s = res.series
    io.write_csv(out / "series.csv", ("t", "sigma", "r", "tail_mass", "mass"),
                 zip(s["t"], s["sigma"], s["r"], s["tail_mass"], s["mass"]))
    io.write_json(out / "blowup.json", res.blowup.to_dict())
    io.write_json(out / "grid.json", {"n": spec.n, "m_jump": spec.m_jump, "i_reset": spec.i_reset,
                                      "h_effective": spec.h_effective, "reset_offset": spec.reset_offset})
    if res.blowup.blown_up:
        log.warning("blow-up at t=%s (%s)", res.blowup.t_blow, res.blowup.reason)


def _write_scan_roots(scan: steady.SigmaScan, params, out: Path):
    roots = []
    for k, root in enumerate(scan.roots):
        name = f"density_{k}.csv"
        io.write_csv(out / name, ("v", "p", "segment_id"), root.density.csv_rows())
        roots.append({**root.to_dict(), "residual": root.residual(params), "file": name})
    io.write_json(out / "roots.json", roots)
    io.write_json(out / "scan.json", {"multiplicity": scan.multiplicity, "claim": scan.claim, "note": scan.note})
    if scan.note:
        log.warning("%s", scan.note)


def cmd_steady_state(cfg, params, out: Path):
    scan = steady.find_steady_states(params, _sigma_range(cfg, params), int(cfg["n_scan"]),
                                     int(cfg["nodes_per_period"]), int(cfg["threads"]))
    if params.J == 0:
        root = scan.roots[0]
        io.write_csv(out / "density.csv", ("v", "p", "segment_id"), root.density.csv_rows())
        io.write_json(out / "steady.json", {**root.to_dict(), "D": root.density.D})
        return
    _write_scan_roots(scan, params, out)


def cmd_scan_sigma(cfg, params, out: Path):
    if params.J == 0:
        raise OutOfRange("scan-sigma needs J > 0; use steady-state for J = 0")
    scan = steady.find_steady_states(params, _sigma_range(cfg, params), int(cfg["n_scan"]),
                                     int(cfg["nodes_per_period"]), int(cfg["threads"]))
    io.write_csv(out / "scan.csv", ("sigma", "F", "G", "F_minus_G"), scan.csv_rows())
    _write_scan_roots(scan, params, out)


def cmd_doeblin_check(cfg, params, out: Path):
    rep = pdmp.doeblin_check(params, parse_floats(cfg["starts"]), int(cfg["replicas"]), int(cfg["bins"]),
                             cfg["seed"], int(cfg["threads"]))
    io.write_json(out / "doeblin.json", rep.to_dict())


def _write_decay(report: analysis.DecayReport, consts, out: Path):
    io.write_csv(out / "decay.csv", ("t", "tv", "envelope"), report.csv_rows())
    io.write_json(out / "report.json", report.to_dict())
    io.write_json(out / "constants.json", consts.to_dict())


def cmd_verify_contraction(cfg, params, out: Path):
    spec = grid.make_spec(int(cfg["n"]), params.h, params.v_r)
    rep = analysis.verify_linear_contraction(parse_initial(cfg["init_a"], spec), parse_initial(cfg["init_b"], spec),
                                             params, float(cfg["t_end"]), dt=_dt(cfg["dt"]),
                                             n_samples=int(cfg["n_samples"]), scheme=cfg["scheme"],
                                             raise_on_violation=False)
    _write_decay(rep, analysis.constants(params.with_coupling(0.0)), out)
    if rep.max_violation > 0:
        raise analysis.ToleranceExceeded(f"envelope exceeded by {rep.max_violation:.3g}")


def cmd_verify_stability(cfg, params, out: Path):
    spec = grid.make_spec(int(cfg["n"]), params.h, params.v_r)
    rep = analysis.verify_nonlinear_stability(parse_initial(cfg["init"], spec), params, float(cfg["t_end"]),
                                              dt=_dt(cfg["dt"]), n_samples=int(cfg["n_samples"]),
                                              scheme=cfg["scheme"], raise_on_violation=False)
    _write_decay(rep, analysis.constants(params), out)
    if rep.max_violation > 0:
        raise analysis.ToleranceExceeded(f"envelope exceeded by {rep.max_violation:.3g}")


COMMANDS = {
    "regime": cmd_regime,
    "simulate-neuron": cmd_simulate_neuron,
    "simulate-network": cmd_simulate_network,
    "solve-pde": cmd_solve_pde,
    "steady-state": cmd_steady_state,
    "scan-sigma": cmd_scan_sigma,
    "doeblin-check": cmd_doeblin_check,
    "verify-contraction": cmd_verify_contraction,
    "verify-stability": cmd_verify_stability,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(ns)
        params = validate(cfg["h"], cfg["v_r"], cfg["sigma0"], cfg["J"], allow_integer_ratio=True)
        for w in params.warnings:
            log.warning("%s", w)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "resolved_config.json", {**cfg, "warnings": list(params.warnings)})
        COMMANDS[ns.command](cfg, params, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
