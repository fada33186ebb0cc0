"""Command line runner: dataset generation, fitting, evaluation and gradient checks.

Every command is deterministic given its config file and seed. Results are
JSON parameter files and plot-ready CSVs; CSV floats carry 17 significant
digits so that they read back bit for bit.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import plant as pl
from .errors import InvalidInputError, RankDeficientError, SimulationError, SolverDivergedError
from .model import ModelSpec, ModelTheta
from .neural import Mlp, difference_transform, glorot_init
from .signals import Signal
from .sk_solver import (
    SkConfig,
    feedforward_parts,
    gradient_error,
    sk_fit,
    sk_fit_regularized,
)

log = logging.getLogger("pgff")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

SELECTORS = ("rational-10th-order", "pgff-parallel")

# solver defaults per selector; the config's [solver] table overrides them
SOLVER_DEFAULTS = {
    "rational-10th-order": dict(
        lam=0.0, max_sk_iterations=30, init_strategy="best-linear-approximation"
    ),
    "pgff-parallel": dict(
        lam=1e-2,
        max_sk_iterations=10,
        inner_optimizer="lbfgs",
        inner_steps=200,
        init_strategy="given",
        warmup_iterations=2,
    ),
}


class ConfigError(Exception):
    pass


def fmt(x):
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    plant: pl.PlantParams = field(default_factory=pl.PlantParams)
    profile: pl.ProfileConfig = field(default_factory=pl.ProfileConfig)
    reference_count: int = 9
    reference_seed: int = 0
    selector: str = "pgff-parallel"
    layer_sizes: tuple = (5, 10, 10, 1)
    activation: str = "tanh"
    output_scale: float = 0.01
    solver: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigError(f"model.selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.reference_count < 1:
            raise ConfigError("references.count must be >= 1")
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise ConfigError("model.layer_sizes must end in a single output")
        known = {f.name for f in fields(SkConfig)}
        unknown = set(self.solver) - known
        if unknown:
            raise ConfigError(f"unknown solver keys {sorted(unknown)}")

    def sk_config(self, seed=None, lam=None, initial_theta=None):
        options = {**SOLVER_DEFAULTS[self.selector], **self.solver}
        if seed is not None:
            options["seed"] = seed
        if lam is not None:
            options["lam"] = lam
        theta = options.pop("initial_theta", None)
        if isinstance(theta, dict):
            theta = ModelTheta.from_dict(theta)
        options["initial_theta"] = theta if theta is not None else initial_theta
        return SkConfig(**options)


def _table(doc, name):
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def config_from_dict(doc) -> ExperimentConfig:
    extra = set(doc) - {"plant", "references", "model", "solver", "out"}
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    refs = dict(_table(doc, "references"))
    model = dict(_table(doc, "model"))
    try:
        params = pl.PlantParams(**_table(doc, "plant"))
        count = int(refs.pop("count", 9))
        seed = int(refs.pop("seed", 0))
        profile = pl.ProfileConfig.from_dict(refs)
        cfg = ExperimentConfig(
            plant=params,
            profile=profile,
            reference_count=count,
            reference_seed=seed,
            selector=model.pop("selector", "pgff-parallel"),
            layer_sizes=model.pop("layer_sizes", (5, 10, 10, 1)),
            activation=model.pop("activation", "tanh"),
            output_scale=float(model.pop("output_scale", 0.01)),
            solver=dict(_table(doc, "solver")),
            out=doc.get("out"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if model:
        raise ConfigError(f"unknown keys in [model]: {sorted(model)}")
    return cfg


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        # repr spells non-finite values the way TOML does: nan, inf, -inf
        return fmt(v) if math.isfinite(v) else repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: ExperimentConfig) -> str:
    tables = {
        "plant": asdict(cfg.plant),
        "references": {"count": cfg.reference_count, "seed": cfg.reference_seed, **cfg.profile.to_dict()},
        "model": {
            "selector": cfg.selector,
            "layer_sizes": list(cfg.layer_sizes),
            "activation": cfg.activation,
            "output_scale": cfg.output_scale,
        },
        "solver": {k: v for k, v in cfg.solver.items() if k != "initial_theta"},
    }
    lines = [] if cfg.out is None else [f"out = {_toml_value(cfg.out)}", ""]
    for name, table in tables.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in table.items()]
        lines.append("")
    theta = cfg.solver.get("initial_theta")
    if theta is not None:
        theta = theta.to_dict() if isinstance(theta, ModelTheta) else theta
        lines += ["[solver.initial_theta]"] + [f"{k} = {_toml_value(list(v))}" for k, v in theta.items()]
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: ExperimentConfig, out, seed=None):
    seed = cfg.reference_seed if seed is None else seed
    training, validation = pl.generate_references(
        cfg.reference_count, cfg.profile, seed, cfg.plant.Ts
    )
    meta = {"seed": seed, "profile": cfg.profile.to_dict()}
    ds = pl.build_dataset(cfg.plant, training, meta)
    val = (validation, pl.inverse_feedforward(cfg.plant, validation))
    out = Path(out)
    manifest = pl.save_dataset(out, ds, val)
    log.info("wrote %d trajectories and a validation reference to %s", len(ds), out)
    return manifest


def build_model(cfg: ExperimentConfig, params: pl.PlantParams, references, seed):
    """Spec, initial network and physics-based initial theta for a selector."""
    if cfg.selector == "rational-10th-order":
        return ModelSpec.rational(10, 9), None, None
    width = cfg.layer_sizes[0]
    net = glorot_init(
        cfg.layer_sizes,
        seed,
        activation=cfg.activation,
        input_transform=difference_transform(width, params.Ts, references),
        output_scale=cfg.output_scale,
    )
    theta = ModelTheta(*pl.linear_model_coefficients(params))
    return ModelSpec.derivative(5, 2, params.Ts), net, theta


def _dataset_params(dataset):
    try:
        return pl.params_from_dict(dataset.metadata["params"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"dataset manifest lacks valid plant parameters: {exc}") from None


def cmd_fit(cfg: ExperimentConfig, data_dir, out, seed=None, lam=None):
    dataset, _ = pl.load_dataset(data_dir)
    if len(dataset) == 0:
        raise ConfigError(f"{data_dir}: dataset has no trajectories")
    params = _dataset_params(dataset)
    seed = int(cfg.solver.get("seed", 0)) if seed is None else seed
    spec, net, theta0 = build_model(cfg, params, [r for r, _ in dataset], seed)
    try:
        sk = cfg.sk_config(seed=seed, lam=lam, initial_theta=theta0)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    runner = sk_fit_regularized if (sk.lam > 0 and net is not None) else sk_fit
    log.info("fitting %s with %s (lambda=%g)", cfg.selector, runner.__name__, sk.lam)
    state = runner(sk, spec, net, dataset)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "selector": cfg.selector,
        "spec": spec.to_dict(),
        "theta": state.theta.to_dict(),
        "net": None if state.net is None else state.net.to_dict(),
        "solver": sk.to_dict(),
        "procedure": runner.__name__,
        "dataset": str(Path(data_dir).resolve()),
        "state": {k: v for k, v in state.to_dict().items() if k not in ("theta", "net")},
    }
    (out / "fit.json").write_text(json.dumps(record, indent=2) + "\n")
    with (out / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "J_SK", "J_OE", "R", "step"])
        for j, row in enumerate(
            zip(state.sk_costs, state.oe_costs, state.reg_values, state.step_sizes), start=1
        ):
            w.writerow([j] + [fmt(x) for x in row])
    return state, out / "fit.json"


@dataclass
class FittedModel:
    spec: ModelSpec
    theta: ModelTheta
    net: Mlp | None
    record: dict

    @classmethod
    def load(cls, path):
        record = json.loads(Path(path).read_text())
        try:
            net = None if record["net"] is None else Mlp.from_dict(record["net"])
            return cls(ModelSpec.from_dict(record["spec"]), ModelTheta.from_dict(record["theta"]), net, record)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: malformed fit file ({exc})") from None

    def parts(self, r: Signal):
        return feedforward_parts(self.spec, self.theta, self.net, r)


@dataclass
class TrajectoryMetrics:
    name: str
    e2: float
    f_err2: float


@dataclass
class MetricsReport:
    references: list
    validation: TrajectoryMetrics | None
    oe_history: list
    reg_history: list
    wall_time: float
    baseline_ratio: float | None = None

    def __post_init__(self):
        values = [m.e2 for m in self.references] + [m.f_err2 for m in self.references]
        if self.validation is not None:
            values += [self.validation.e2, self.validation.f_err2]
        values += list(self.oe_history) + list(self.reg_history) + [self.wall_time]
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise SimulationError("metrics must be finite and non-negative")

    def to_dict(self):
        return asdict(self)


def _evaluate_one(params, r, fhat, parts):
    f_m, f_c = parts
    f = f_m + f_c
    y = pl.simulate_forward(params, f)
    e = r - y
    columns = {
        "r": r.samples, "fhat": fhat.samples, "f": f.samples, "f_M": f_m.samples,
        "f_C": f_c.samples, "y": y.samples, "e": e.samples,
    }
    d = f.samples - fhat.samples
    return float(e.samples @ e.samples), float(d @ d), columns


def _write_signals(path, columns):
    names = list(columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + names)
        for k, row in enumerate(zip(*columns.values()), start=1):
            w.writerow([k] + [fmt(x) for x in row])


def cmd_evaluate(data_dir, out, fit_path=None, baseline_path=None):
    """Evaluate a fit, or the exact inverse when ``fit_path`` is None."""
    start = time.perf_counter()
    dataset, validation = pl.load_dataset(data_dir)
    params = _dataset_params(dataset)
    model = None if fit_path is None else FittedModel.load(fit_path)

    def parts(r, fhat):
        if model is None:
            return fhat, fhat.with_samples(np.zeros(len(fhat)))
        return model.parts(r)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, (r, fhat) in enumerate(dataset, start=1):
        name = f"trajectory_{i:02d}"
        e2, ferr, cols = _evaluate_one(params, r, fhat, parts(r, fhat))
        _write_signals(out / f"signals_{name}.csv", cols)
        refs.append(TrajectoryMetrics(name, e2, ferr))
    val_metrics = None
    if validation is not None:
        r, fhat = validation
        e2, ferr, cols = _evaluate_one(params, r, fhat, parts(r, fhat))
        _write_signals(out / "signals_validation.csv", cols)
        val_metrics = TrajectoryMetrics("validation", e2, ferr)

    ratio = None
    if baseline_path is not None and validation is not None:
        base = FittedModel.load(baseline_path)
        r, fhat = validation
        base_e2 = _evaluate_one(params, r, fhat, base.parts(r))[0]
        ratio = val_metrics.e2 / base_e2 if base_e2 > 0 else math.inf

    state = {} if model is None else model.record.get("state", {})
    report = MetricsReport(
        refs,
        val_metrics,
        state.get("oe_costs", []),
        state.get("reg_values", []),
        state.get("wall_time", 0.0) + time.perf_counter() - start,
        ratio,
    )
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def gradcheck_cases(seed, count=10):
    """Random small problems: ``(weight, spec, theta, net, data, lam)``."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(count):
        n_a, n_b = int(rng.integers(1, 5)), int(rng.integers(0, 3))
        spec = ModelSpec.rational(n_a, n_b)
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(1, 11)) for _ in range(depth - 1)] + [1]
        net = glorot_init(sizes, int(rng.integers(2**31)), final_bias=bool(i % 2))
        n = int(rng.integers(8, 65))
        data = [
            (Signal(rng.normal(size=n), 1.0), Signal(rng.normal(size=n), 1.0))
            for _ in range(int(rng.integers(1, 3)))
        ]
        # stable weight: poles well inside the unit circle
        poles = rng.uniform(-0.8, 0.8, size=int(rng.integers(0, 3)))
        weight = np.poly(poles) if poles.size else np.ones(1)
        theta = rng.normal(size=n_a + n_b)
        lam = 0.0 if i % 3 == 0 else float(10 ** rng.uniform(-3, 0))
        cases.append((weight, spec, theta, net, data, lam))
    return cases


def cmd_gradcheck(seed=0, count=10, tol=1e-5):
    errors = [gradient_error(*case[:5], lam=case[5]) for case in gradcheck_cases(seed, count)]
    return errors, max(errors) < tol


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="pgff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")

    g = sub.add_parser("generate", help="simulate the plant inverse on generated references")
    common(g)

    f = sub.add_parser("fit", help="run the SK iterations on a dataset")
    common(f)
    f.add_argument("--data", type=Path, required=True, help="dataset directory")
    f.add_argument("--lambda", dest="lam", type=float, help="regularization weight; 0 disables")
    f.add_argument("--model", choices=SELECTORS, help="override model.selector")

    e = sub.add_parser("evaluate", help="closed-loop-free tracking evaluation on the plant")
    e.add_argument("--data", type=Path, required=True, help="dataset directory")
    e.add_argument("--fit", type=Path, help="fit.json; omit to apply the exact inverse")
    e.add_argument("--baseline", type=Path, help="second fit.json for the validation error ratio")
    e.add_argument("--out", type=Path, help="output directory")

    c = sub.add_parser("gradcheck", help="finite-difference check of the SK objective gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--cases", type=int, default=10)
    return p


def _out_dir(args, cfg, default):
    if args.out is not None:
        return args.out
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path(default)


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    if args.command == "generate":
        cfg = load_config(args.config)
        path = cmd_generate(cfg, _out_dir(args, cfg, "data"), args.seed)
        print(f"manifest {path}")
    elif args.command == "fit":
        cfg = load_config(args.config)
        if args.model:
            cfg.selector = args.model
        state, path = cmd_fit(cfg, args.data, _out_dir(args, cfg, "fit"), args.seed, args.lam)
        print(f"fit {path}")
        print(f"iterations {state.iteration} converged {state.converged} stalled {state.stalled}")
        print(f"J_OE {fmt(state.oe_costs[-1])}")
        print(f"R {fmt(state.reg_values[-1])}")
    elif args.command == "evaluate":
        report = cmd_evaluate(args.data, _out_dir(args, None, "evaluation"), args.fit, args.baseline)
        for m in report.references:
            print(f"{m.name} e2 {fmt(m.e2)} f_err2 {fmt(m.f_err2)}")
        if report.validation is not None:
            print(f"validation e2 {fmt(report.validation.e2)} f_err2 {fmt(report.validation.f_err2)}")
        if report.baseline_ratio is not None:
            print(f"ratio_to_baseline {fmt(report.baseline_ratio)}")
    else:
        errors, ok = cmd_gradcheck(args.seed, args.cases)
        for i, err in enumerate(errors):
            print(f"case {i} max_rel_error {fmt(err)}")
        print("gradcheck " + ("passed" if ok else "FAILED"))
        if not ok:
            return EXIT_SOLVER
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except (ConfigError, InvalidInputError, json.JSONDecodeError) as exc:
        print(f"pgff: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDivergedError, RankDeficientError, SimulationError, FloatingPointError) as exc:
        print(f"pgff: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"pgff: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
