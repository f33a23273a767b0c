"""Command-line entry point: ``catgrad {train,sweep,temp-sweep,bias-eval,verify,bench}``.

Settings come from flags, from a flat TOML file given with ``--config``
(keys match flag names, dashes or underscores), or from the built-in
defaults, in that order of precedence. Exit codes: 0 success, 1 invalid
configuration or runtime failure, 2 usage error.
"""
import argparse
import logging
import sys
from dataclasses import fields

import tomli

from catgrad import harness
from catgrad.errors import ConfigError, InvalidArgumentError
from catgrad.harness import ExperimentConfig
from catgrad.verify import run_verify

log = logging.getLogger("catgrad")

# flag dest -> ExperimentConfig field
_EXPERIMENT_FLAGS = {
    "estimator": "estimator", "tau": "tau", "mc_samples": "mc_samples",
    "reinforce_baseline": "reinforce_baseline", "objective": "objective", "p": "p", "c": "c",
    "values": "values", "objective_seed": "objective_seed", "L": "L", "n": "n",
    "batch": "batch_size", "optimizer": "optimizer", "lr": "lr", "beta1": "beta1",
    "beta2": "beta2", "eps": "eps", "epochs": "epochs", "steps_per_epoch": "steps_per_epoch",
    "seed": "seed", "bias_eval_every": "bias_eval_every", "out": "output_path",
}


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _names(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _common(p):
    p.add_argument("--config", help="flat TOML file; flags override its keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))


def _experiment_flags(p):
    g = p.add_argument_group("experiment")
    g.add_argument("--estimator")
    g.add_argument("--tau", type=float)
    g.add_argument("--mc-samples", type=int)
    g.add_argument("--reinforce-baseline", choices=("none", "batch_mean"))
    g.add_argument("--objective", choices=("poly", "quadratic_oracle"))
    g.add_argument("--p", type=float, help="exponent of the polynomial loss (> 1)")
    g.add_argument("--c", type=float, help="target value filled into every dimension")
    g.add_argument("--values", type=_floats, help="category values, e.g. 0,1")
    g.add_argument("--objective-seed", type=int)
    g.add_argument("--L", type=int, help="number of latent variables")
    g.add_argument("--n", type=int, help="categories per variable")
    g.add_argument("--batch", type=int)
    g.add_argument("--optimizer", choices=("adam", "radam"))
    g.add_argument("--lr", type=float)
    g.add_argument("--beta1", type=float)
    g.add_argument("--beta2", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--steps-per-epoch", type=int)
    g.add_argument("--bias-eval-every", type=int)
    g.add_argument("--timing", action="store_true", default=None,
                   help="include wall-clock columns (output is then not byte-stable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="catgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="one training run")
    _common(p)
    _experiment_flags(p)

    p = sub.add_parser("sweep", help="batch-size x variable-count heatmap")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--batch-sizes", type=_ints)
    p.add_argument("--Ls", type=_ints)

    p = sub.add_parser("temp-sweep", help="final loss per (estimator, temperature)")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--estimators", type=_names)
    p.add_argument("--taus", type=_floats)

    p = sub.add_parser("bias-eval", help="cosine similarity to the exact gradient during training")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--estimators", type=_names)
    p.add_argument("--seeds", type=_ints)

    p = sub.add_parser("verify", help="run the identity and accuracy checks")
    _common(p)
    p.add_argument("--json", action="store_true", default=None, help="same as --format json")
    p.add_argument("--instances", type=int)
    p.add_argument("--corrupt-reinmax", action="store_true", default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("bench", help="per-step estimation time per estimator")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--estimators", type=_names)
    p.add_argument("--mc-samples-list", type=_ints)
    p.add_argument("--steps", type=int)
    return parser


def _load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    out = {}
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(key, "config file must be flat key = value pairs")
        out[key.replace("-", "_")] = value
    return out


def _merged(args, parser_dests):
    """Flag values over config-file values; only keys the subcommand knows."""
    file_values = _load_config(args.config) if args.config else {}
    for key in file_values:
        if key not in parser_dests:
            raise ConfigError(key, f"unknown key in {args.config}")
    merged = dict(file_values)
    for key in parser_dests:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _experiment(settings, **overrides):
    kwargs = {}
    for dest, fname in _EXPERIMENT_FLAGS.items():
        if dest in settings:
            kwargs[fname] = settings[dest]
    if "values" in kwargs:
        kwargs["values"] = tuple(float(v) for v in kwargs["values"])
        kwargs.setdefault("n", len(kwargs["values"]))
    elif "n" in kwargs:
        kwargs["values"] = tuple(float(v) for v in range(int(kwargs["n"])))
    kwargs.update(overrides)
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(kwargs) - names
    if unknown:  # pragma: no cover - guarded by the flag table
        raise ConfigError(sorted(unknown)[0], "unknown setting")
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:  # pragma: no cover
        raise ConfigError("config", str(exc)) from None
    return cfg.validate()


def _emit(text, out):
    if out:
        try:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


def _cmd_train(s):
    cfg = _experiment(s)
    rec = harness.run_training(cfg)
    timing = bool(s.get("timing"))
    text = rec.to_json(timing) if s.get("format") == "json" else rec.to_csv(timing)
    _emit(text, s.get("out"))
    return 0


def _cmd_sweep(s):
    cfg = _experiment(s)
    batch_sizes = s.get("batch_sizes") or [16, 64, 256]
    Ls = s.get("Ls") or [4, 16, 64]
    grid = harness.run_heatmap_sweep(cfg, batch_sizes, Ls)
    _emit(grid.to_json() if s.get("format") == "json" else grid.to_csv(), s.get("out"))
    return 0


def _cmd_temp_sweep(s):
    cfg = _experiment(s)
    taus = s.get("taus") or [0.1, 0.3, 0.5, 1.0, 2.0, 3.0]
    grid = harness.run_temperature_sweep(cfg, taus, s.get("estimators"))
    _emit(grid.to_json() if s.get("format") == "json" else grid.to_csv(), s.get("out"))
    return 0


def _cmd_bias_eval(s):
    s = dict(s)
    s.setdefault("L", 8)
    s.setdefault("bias_eval_every", 100)
    cfg = _experiment(s)
    rows = harness.run_bias_eval(cfg, s.get("estimators") or ["reinmax", "st"],
                                 s.get("seeds") or [cfg.seed])
    text = harness.dumps_json(rows) if s.get("format") == "json" else harness.bias_rows_to_csv(rows)
    _emit(text, s.get("out"))
    return 0


def _cmd_verify(s):
    report = run_verify(seed=int(s.get("seed", 0)), instances=int(s.get("instances", 200)),
                        corrupt_reinmax=bool(s.get("corrupt_reinmax")))
    if s.get("json") or s.get("format") == "json":
        text = harness.dumps_json({"seed": report.seed, "passed": report.passed,
                                   "checks": report.to_records()})
    else:
        text = report.to_text()
    _emit(text, s.get("out"))
    return 0 if report.passed else 1


def _cmd_bench(s):
    cfg = _experiment(s)
    kwargs = {}
    if s.get("estimators"):
        kwargs["estimators"] = s["estimators"]
    if s.get("mc_samples_list"):
        kwargs["mc_samples"] = s["mc_samples_list"]
    if s.get("steps"):
        kwargs["steps"] = int(s["steps"])
    rows = harness.run_bench(cfg, **kwargs)
    text = (harness.bench_rows_to_json(rows) if s.get("format") == "json"
            else harness.bench_rows_to_csv(rows))
    _emit(text, s.get("out"))
    return 0


_COMMANDS = {
    "train": _cmd_train, "sweep": _cmd_sweep, "temp-sweep": _cmd_temp_sweep,
    "bias-eval": _cmd_bias_eval, "verify": _cmd_verify, "bench": _cmd_bench,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    try:
        settings = _merged(args, dests)
        return _COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"catgrad {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (InvalidArgumentError, OSError, FloatingPointError) as exc:
        print(f"catgrad {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
