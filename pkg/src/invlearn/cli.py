"""``invlearn`` command-line interface.

Verbs: gen-problem, fit, sweep, pkpd-sim, pkpd-fit, report. Exit status is 0
on success, 1 when an experiment fails and 2 on usage errors. Every output
file is written atomically, and failures leave an ``error.json`` next to the
outputs.
"""
import argparse
import copy
import glob
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from . import pkpd
from .errors import FailureRateExceeded
from .rates import ExperimentConfig, Experiment, atomic_write, run_sweep
from .testbed import h_norm_error, problem_from_config, sample_dataset

VERBS = ("gen-problem", "fit", "sweep", "pkpd-sim", "pkpd-fit", "report")
CONFIG_OPTIONAL = ("pkpd-sim", "pkpd-fit", "report")


class UsageError(Exception):
    """Bad invocation; maps to exit status 2."""


class UnknownVerb(UsageError):
    pass


class MissingConfig(UsageError):
    pass


class BadOverride(UsageError):
    pass


class Command:
    def __init__(self, verb, config, out, overrides, threads, target=None):
        self.verb = verb
        self.config = config
        self.out = out
        self.overrides = overrides
        self.threads = threads
        self.target = target

    def __repr__(self):
        return (f"Command(verb={self.verb!r}, config={self.config!r}, out={self.out!r}, "
                f"overrides={self.overrides!r}, threads={self.threads})")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser():
    p = _Parser(prog="invlearn", description="Inverse-learning estimators, rate sweeps and PK/PD fits.")
    p.add_argument("--version", action="version", version=f"invlearn {__version__}")
    p.add_argument("verb", help=" | ".join(VERBS))
    p.add_argument("target", nargs="?", help="results directory (report only)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry; dotted keys reach nested objects")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return p


def parse_invocation(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb not in VERBS:
        raise UnknownVerb(f"unknown verb {args.verb!r}; expected one of {', '.join(VERBS)}\n"
                          f"{parser.format_usage()}")
    if args.config is None and args.verb not in CONFIG_OPTIONAL:
        raise MissingConfig(f"{args.verb} needs --config")
    if args.config is not None and not os.path.isfile(args.config):
        raise MissingConfig(f"config file {args.config!r} does not exist")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    overrides = [parse_override(s) for s in args.overrides]
    target = args.target
    if args.verb == "report":
        target = target or args.out
    elif target is not None:
        raise UsageError(f"unexpected argument {target!r}")
    return Command(args.verb, args.config, args.out, overrides, args.threads, target)


def parse_override(text):
    if "=" not in text:
        raise BadOverride(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key or any(not part for part in key.split(".")):
        raise BadOverride(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for path, value in overrides:
        node = cfg
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise BadOverride(f"cannot set {'.'.join(path)}: {part!r} is not an object")
            node = nxt
        node[path[-1]] = value
    return cfg


def load_config(cmd):
    cfg = {}
    if cmd.config is not None:
        try:
            with open(cmd.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MissingConfig(f"config {cmd.config!r} is not valid JSON: {exc}") from exc
    return apply_overrides(cfg, cmd.overrides)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write(out, name, text):
    os.makedirs(out, exist_ok=True)
    atomic_write(os.path.join(out, name), text)


# verbs ----------------------------------------------------------------------
def cmd_gen_problem(cmd, cfg):
    prob_cfg = cfg.get("problem", cfg)
    problem = problem_from_config(prob_cfg)
    _write(cmd.out, "problem.json", _dump(problem.config()))
    lines = ["j,sigma,ftrue"] + [f"{j + 1},{problem.sigma[j]!r},{problem.ftrue[j]!r}"
                                 for j in range(problem.J)]
    _write(cmd.out, "spectrum.csv", "\n".join(lines) + "\n")
    if "m" in cfg:
        ds = sample_dataset(problem, int(cfg["m"]), int(cfg.get("data_seed", 0)))
        rows = ["x,y"] + [f"{float(x)!r},{float(y)!r}" for x, y in zip(ds.xs, ds.ys)]
        _write(cmd.out, "data.csv", "\n".join(rows) + "\n")
    return 0


def cmd_fit(cmd, cfg):
    exp_cfg = {k: cfg[k] for k in ("problem", "estimator", "selection") if k in cfg}
    exp_cfg.update(experiment_id=cfg.get("experiment_id", "fit"), m_grid=[1, 2, 3, 4], burn_in=0,
                   replicates=10, error_metric=cfg.get("error_metric", "h_norm"))
    exp = Experiment(ExperimentConfig.from_dict(exp_cfg))
    ds = sample_dataset(exp.problem, int(cfg["m"]), int(cfg.get("data_seed", 0)))
    from .linear import EmpiricalOperators
    ops = EmpiricalOperators(exp.problem, ds) if exp.kind != "projection" else None
    lam = exp.choose(ds, ops)
    est = exp.fit(ds, lam, ops)
    _write(cmd.out, "estimate.json", _dump(est.to_json()))
    summary = {"lambda_or_n": float(lam), "h_norm_error": h_norm_error(exp.problem, est),
               "error": exp.error(est), "error_metric": exp.cfg.error_metric, "m": ds.m,
               "data_seed": ds.seed}
    _write(cmd.out, "fit.json", _dump(summary))
    return 0


def cmd_sweep(cmd, cfg):
    config = ExperimentConfig.from_dict(cfg)
    try:
        result = run_sweep(config, threads=cmd.threads)
    except FailureRateExceeded as exc:
        if exc.result is not None:
            _write(cmd.out, f"{config.experiment_id}.csv", exc.result.csv_text())
        raise
    result.write(cmd.out)
    print(f"{config.experiment_id}: {result.verdict}")
    return 0


def _pk_model(cfg):
    return pkpd.CovariateModel(**cfg.get("model", {}))


def _pk_times(cfg):
    if "times" in cfg:
        return np.asarray(cfg["times"], dtype=np.float64)
    return pkpd.default_times(int(cfg.get("q", 6)), cfg.get("t_min", 0.1), cfg.get("t_max", 30.0))


def cmd_pkpd_sim(cmd, cfg):
    data = pkpd.simulate_patients(_pk_model(cfg), int(cfg.get("m", 32)), int(cfg.get("seed", 0)),
                                  _pk_times(cfg), float(cfg.get("noise_sd", 0.0)))
    _write_pk_csv(cmd.out, "patients.csv", data)
    return 0


def _write_pk_csv(out, name, data):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    tmp = path + ".part"
    data.to_csv(tmp)
    os.replace(tmp, path)


def cmd_pkpd_fit(cmd, cfg):
    truth = _pk_model(cfg)
    if "data" in cfg:
        data = pkpd.PKDataset.from_csv(cfg["data"])
    else:
        data = pkpd.simulate_patients(truth, int(cfg.get("m", 32)), int(cfg.get("seed", 0)),
                                      _pk_times(cfg), float(cfg.get("noise_sd", 0.0)))
    prior = pkpd.CovariateModel(**cfg.get("prior", {}))
    kspec = pkpd.KernelSpec(**cfg.get("kernel", {}))
    from .nonlinear import NLOptions
    opts = NLOptions.from_json(cfg.get("opts"))
    fitted, report = pkpd.fit_covariate_model(data, kspec, float(cfg.get("lambda", 1e-6)), prior, opts)
    summary = {
        "m": data.m,
        "lambda": float(cfg.get("lambda", 1e-6)),
        "iterations": report.iterations,
        "final_objective": report.final_objective,
        "gradient_norm": report.gradient_norm,
        "converged": report.converged,
        "bandwidth": fitted.bandwidth,
        "design_log_params": fitted.design_log_params,
    }
    if "data" not in cfg:
        summary["relative_param_error"] = pkpd.relative_param_error(fitted, truth, data)
    _write(cmd.out, "pkpd_fit.json", _dump(summary))
    return 0


def cmd_report(cmd, cfg):
    paths = sorted(glob.glob(os.path.join(cmd.target, "*.summary.json")))
    if not os.path.isdir(cmd.target):
        raise UsageError(f"results directory {cmd.target!r} does not exist")
    rows = []
    for p in paths:
        with open(p) as fh:
            s = json.load(fh)
        rows.append(s)
    cols = ["experiment_id", "slope", "stderr", "theoretical_exponent", "verdict", "n_cells", "n_failures"]
    lines = [",".join(cols)]
    for s in rows:
        lines.append(",".join(str(s.get(c, "")) for c in cols))
    table = "\n".join(lines) + "\n"
    atomic_write(os.path.join(cmd.target, "report.csv"), table)
    width = max([len("experiment_id")] + [len(str(s.get("experiment_id", ""))) for s in rows])
    print(f"{'experiment_id':<{width}}  {'slope':>8}  {'stderr':>7}  {'expected':>8}  verdict")
    for s in rows:
        print(f"{s['experiment_id']:<{width}}  {s['slope']:>8.4f}  {s['stderr']:>7.4f}  "
              f"{-s['theoretical_exponent']:>8.4f}  {s['verdict']}")
    return 0


HANDLERS = {
    "gen-problem": cmd_gen_problem,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "pkpd-sim": cmd_pkpd_sim,
    "pkpd-fit": cmd_pkpd_fit,
    "report": cmd_report,
}


def _error_json(out, exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    try:
        _write(out, "error.json", _dump(payload))
    except OSError:
        pass


def execute(cmd):
    try:
        cfg = load_config(cmd)
        return HANDLERS[cmd.verb](cmd, cfg)
    except UsageError as exc:
        print(f"invlearn: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # experiment failure
        print(f"invlearn {cmd.verb} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("INVLEARN_TRACEBACK"):
            traceback.print_exc()
        _error_json(cmd.out, exc, 1)
        return 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_invocation(argv)
    except UsageError as exc:
        print(f"invlearn: {exc}", file=sys.stderr)
        return 2
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
