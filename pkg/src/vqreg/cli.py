"""Command-line harness: generate data, fit, rearrange, evaluate, sweep.

Configuration is flat ``section.key=value`` text, either from a config file
(``--config``) or from identically named command-line flags; flags win.
Every command is reproducible from (config, seed): repeated runs emit
byte-identical primary outputs, and no command mutates its inputs.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O or artifact error.
"""

import argparse
import itertools
import json
import os
import resource
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import artifacts, datasets, plot
from .cvqf import DiscreteCVQF, make_grid
from .embedding import EmbeddingParams, EmbeddingSpec, MlpMap, fit_nonlinear_vqr
from .errors import ArtifactError, ConfigError, VqregError
from .lp import build_primal_lp, plan_barycenter, solve_lp_exact
from .metrics import calibrate_alpha, evaluation_report
from .rearrange import rearrange
from .solver import IdentityMap, SolverConfig, evaluate_cvqf, fit_linear_vqr, fit_vqe

# key -> (type tag, default); the registry drives both config files and flags
_KEYS = {
    "data.name": ("str", None),
    "data.csv": ("str", None),
    "data.n": ("int", 1000),
    "data.k": ("int", 1),
    "data.d": ("int", 2),
    "data.seed": ("int", 0),
    "data.angles": ("int_list", None),
    "grid.t": ("int", 20),
    "solver.epsilon": ("float", 0.005),
    "solver.iterations": ("int", 10_000),
    "solver.learning_rate": ("float", 0.5),
    "solver.lr_decay_factor": ("float", 0.9),
    "solver.lr_patience_iters": ("int", 500),
    "solver.lr_improvement_threshold": ("float", 0.005),
    "solver.batch_n": ("int", None),
    "solver.batch_t": ("int", None),
    "solver.seed": ("int", 0),
    "embedding.hidden_sizes": ("int_list", None),
    "embedding.output_dim": ("int", None),
    "embedding.skip_connections": ("bool", False),
    "embedding.seed": ("int", 0),
    "embedding.trainable": ("bool", True),
    "eval.metrics": ("str_list", ("mv",)),
    "eval.l": ("int", 20),
    "eval.m": ("int", 4000),
    "eval.bins": ("int", 100),
    "eval.sigma": ("float", 0.05),
    "eval.seed": ("int", 0),
    "eval.alpha": ("float", None),
    "eval.nominal": ("float", None),
    "eval.tolerance": ("float", 0.02),
    "eval.test_n": ("int", 500),
    "eval.vmr": ("bool", False),
}

_METRIC_NAMES = ("kde_l1", "qfd", "entropy", "mv", "coverage", "area")


def _parse_value(key: str, raw: str, where: str):
    kind, _ = _KEYS[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: field {key}: {exc}") from None


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, f"{path}:{lineno}")
    return values


class RunConfig:
    """Merged option values: defaults, then config file, then flags."""

    def __init__(self, file_values: dict, flag_values: dict):
        self.values = {key: default for key, (_, default) in _KEYS.items()}
        self.values.update(file_values)
        self.values.update(flag_values)

    def __getitem__(self, key: str):
        return self.values[key]

    def fingerprint_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in sorted(self.values.items())}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="vqreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", default=".", help="output directory")
        for key in _KEYS:
            p.add_argument(f"--{key}", dest=key, metavar="V")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    add_common(p_gen)
    p_gen.add_argument("--plot", action="store_true", help="also emit an SVG scatter")

    p_fit = sub.add_parser("fit", help="fit a model and save the artifact")
    add_common(p_fit)
    p_fit.add_argument("--oracle", action="store_true",
                       help="tiny-scale exact LP instead of SGD (k=0 only); "
                            "emits cvqf.json")
    p_fit.add_argument("--emit-cvqf", metavar="X",
                       help="decode the fitted surface at x ('none' or "
                            "comma-separated floats) into cvqf.json")

    p_re = sub.add_parser("rearrange", help="apply monotone rearrangement to a CVQF file")
    p_re.add_argument("--cvqf", required=True, help="CVQF file to rewrite")
    p_re.add_argument("--out-file", help="write here instead of rewriting in place")

    p_eval = sub.add_parser("eval", help="evaluate a fitted model")
    add_common(p_eval)
    p_eval.add_argument("--model", required=True, help="model artifact path")
    p_eval.add_argument("--plot", action="store_true",
                        help="emit an SVG of samples and contour hulls")

    p_exp = sub.add_parser("experiment", help="run a fit+eval sweep")
    add_common(p_exp)
    p_exp.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                       help="sweep a config key over comma-separated values "
                            "(repeatable; cells are the cross product)")
    p_exp.add_argument("--save-models", action="store_true",
                       help="save one model artifact per sweep cell")
    return parser


def _config_from_args(args) -> RunConfig:
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_values = {}
    for key in _KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            flag_values[key] = _parse_value(key, raw, f"flag --{key}")
    return RunConfig(file_values, flag_values)


def _generator_spec(cfg: RunConfig) -> datasets.GeneratorSpec:
    name = cfg["data.name"]
    if name is None:
        raise ConfigError("data.name (or data.csv) is required")
    extra = {}
    if name == "star" and cfg["data.angles"] is not None:
        extra["angles"] = cfg["data.angles"]
    return datasets.GeneratorSpec(
        name=name, n=cfg["data.n"], seed=cfg["data.seed"],
        k=cfg["data.k"], d=cfg["data.d"], extra=extra,
    )


def _load_dataset(cfg: RunConfig):
    """Returns (dataset, sampler or None)."""
    if cfg["data.csv"] is not None:
        return datasets.read_csv(cfg["data.csv"], seed=cfg["data.seed"]), None
    dataset, sampler = datasets.make_generator(_generator_spec(cfg))
    return dataset, sampler


def _solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(
        epsilon=cfg["solver.epsilon"],
        iterations=cfg["solver.iterations"],
        learning_rate=cfg["solver.learning_rate"],
        lr_decay_factor=cfg["solver.lr_decay_factor"],
        lr_patience_iters=cfg["solver.lr_patience_iters"],
        lr_improvement_threshold=cfg["solver.lr_improvement_threshold"],
        batch_n=cfg["solver.batch_n"],
        batch_t=cfg["solver.batch_t"],
        seed=cfg["solver.seed"],
    )


def _embedding_spec(cfg: RunConfig, k: int) -> EmbeddingSpec | None:
    if cfg["embedding.output_dim"] is None and cfg["embedding.hidden_sizes"] is None:
        return None
    out = cfg["embedding.output_dim"]
    if out is None:
        raise ConfigError("embedding.output_dim is required for a nonlinear fit")
    return EmbeddingSpec(
        input_dim=k,
        hidden_sizes=cfg["embedding.hidden_sizes"] or (),
        output_dim=out,
        skip_connections=cfg["embedding.skip_connections"],
        seed=cfg["embedding.seed"],
        trainable=cfg["embedding.trainable"],
    )


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _write_loss_csv(path, result) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("iteration,loss,lr\n")
        for i, (loss, lr) in enumerate(zip(result.loss_trace, result.lr_trace)):
            fh.write(f"{i},{float(loss)!r},{float(lr)!r}\n")


def _report_rss() -> None:
    kib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    print(f"peak_rss_kib={kib}", file=sys.stderr)


def _cmd_gen(args, cfg: RunConfig) -> list:
    dataset, _ = _load_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "dataset.csv")
    datasets.write_csv(dataset, csv_path)
    emitted = [csv_path]
    if args.plot:
        svg_path = os.path.join(args.out, "dataset.svg")
        if dataset.d == 2:
            plot.write_scatter_svg(svg_path, dataset.Y)
        elif dataset.d == 1 and dataset.k == 1:
            plot.write_scatter_svg(svg_path, np.column_stack([dataset.X, dataset.Y]))
        else:
            raise ConfigError("--plot supports d=2, or d=1 with k=1")
        emitted.append(svg_path)
    return emitted


def _fit_model(cfg: RunConfig, dataset):
    solver_cfg = _solver_config(cfg)
    spec = _embedding_spec(cfg, dataset.k)
    if spec is None:
        return fit_linear_vqr(dataset, make_grid(cfg["grid.t"], dataset.d), solver_cfg), None
    result = fit_nonlinear_vqr(
        dataset, make_grid(cfg["grid.t"], dataset.d), solver_cfg, spec
    )
    return result, spec


def _cmd_fit(args, cfg: RunConfig) -> list:
    dataset, _ = _load_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    emitted = []
    if args.oracle:
        if dataset.k != 0:
            raise ConfigError("--oracle decoding is supported for k=0 only")
        grid = make_grid(cfg["grid.t"], dataset.d)
        plan, _ = solve_lp_exact(build_primal_lp(dataset, grid))
        values = plan_barycenter(plan, dataset.Y)
        cvqf_path = os.path.join(args.out, "cvqf.json")
        artifacts.save_cvqf(cvqf_path, DiscreteCVQF(grid=grid, values=values))
        return [cvqf_path]
    result, spec = _fit_model(cfg, dataset)
    model_path = os.path.join(args.out, "model.json")
    artifacts.save_model(
        model_path, result.solution, make_grid(cfg["grid.t"], dataset.d),
        embedding_spec=spec,
        fingerprint=artifacts.config_fingerprint(cfg.fingerprint_dict()),
    )
    loss_path = os.path.join(args.out, "losses.csv")
    _write_loss_csv(loss_path, result)
    emitted += [model_path, loss_path]
    if args.emit_cvqf is not None:
        grid = make_grid(cfg["grid.t"], dataset.d)
        embed = _embed_from(spec, result.solution)
        if args.emit_cvqf.strip().lower() == "none":
            if dataset.k != 0:
                raise ConfigError("--emit-cvqf none requires k=0")
            surf = evaluate_cvqf(result.solution, None, grid)
        else:
            x = np.array([float(v) for v in args.emit_cvqf.split(",")])
            surf = evaluate_cvqf(result.solution, x, grid, embed)
        cvqf_path = os.path.join(args.out, "cvqf.json")
        artifacts.save_cvqf(cvqf_path, surf)
        emitted.append(cvqf_path)
    _report_rss()
    return emitted


def _embed_from(spec, solution):
    if spec is None:
        return IdentityMap(solution.beta.shape[1])
    return MlpMap(EmbeddingParams(spec, solution.embedding_params))


def _cmd_rearrange(args) -> list:
    surf = artifacts.load_cvqf(args.cvqf)
    out_path = args.out_file or args.cvqf
    artifacts.save_cvqf(out_path, rearrange(surf))
    return [out_path]


def _make_provider(artifact, use_vmr: bool):
    embed = _embed_from(artifact.embedding_spec, artifact.solution)
    k = artifact.solution.beta.shape[1]
    cache = {}

    def provider(x):
        key = np.asarray(x, dtype=np.float64).tobytes()
        if key not in cache:
            surf = evaluate_cvqf(
                artifact.solution, None if k == 0 else x, artifact.grid, embed
            )
            cache[key] = rearrange(surf) if use_vmr else surf
        return cache[key]

    return provider


def _cmd_eval(args, cfg: RunConfig) -> list:
    artifact = artifacts.load_model(args.model)
    dataset, sampler = _load_dataset(cfg)
    if dataset.d != artifact.grid.d:
        raise ConfigError(
            f"data has d={dataset.d} but the model grid has d={artifact.grid.d}"
        )
    which = tuple(cfg["eval.metrics"])
    unknown = set(which) - set(_METRIC_NAMES)
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    sample_based = {"kde_l1", "qfd", "entropy"} & set(which)
    if sampler is None and sample_based:
        raise ConfigError(
            f"metrics {sorted(sample_based)} need a generator data source"
        )
    provider = _make_provider(artifact, cfg["eval.vmr"])
    rng = np.random.default_rng(cfg["eval.seed"])
    coverage_data = None
    alpha = cfg["eval.alpha"]
    if {"coverage", "area"} & set(which):
        if sampler is not None:
            xs = sampler.sample_x(cfg["eval.test_n"], rng)
            ys = np.vstack([sampler.sample_y(x, 1, rng) for x in xs])
        else:
            xs, ys = dataset.X, dataset.Y
        if cfg["eval.nominal"] is not None:
            n_cal = xs.shape[0] // 2
            alpha = calibrate_alpha(
                provider, xs[:n_cal], ys[:n_cal],
                cfg["eval.nominal"], cfg["eval.tolerance"],
            )
            xs, ys = xs[n_cal:], ys[n_cal:]
        if alpha is None:
            raise ConfigError("coverage/area need eval.alpha or eval.nominal")
        coverage_data = (xs, ys)
    qfd_fitter = None
    if "qfd" in which:
        solver_cfg = _solver_config(cfg)
        qfd_fitter = lambda samples, grid: fit_vqe(samples, grid, solver_cfg)
    report = evaluation_report(
        provider,
        sampler,
        which=[m for m in which if m in ("kde_l1", "qfd", "entropy", "mv")],
        l_values=cfg["eval.l"],
        m_samples=cfg["eval.m"],
        bins=cfg["eval.bins"],
        sigma=cfg["eval.sigma"],
        seed=cfg["eval.seed"],
        qfd_fitter=qfd_fitter,
        coverage_data=coverage_data,
        alpha=alpha,
        metadata={"vmr": cfg["eval.vmr"], "model": os.path.basename(args.model)},
    )
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    _write_json(report_path, report.to_json_dict())
    emitted = [report_path]
    if args.plot:
        if artifact.grid.d != 2 or coverage_data is None:
            raise ConfigError("--plot needs d=2 and coverage/area metrics")
        from .cvqf import alpha_contour
        from .metrics import convex_hull_area
        xs_plot = coverage_data[0][: min(3, coverage_data[0].shape[0])]
        hulls = []
        for x in xs_plot:
            _, pts = alpha_contour(provider(x), alpha)
            hull = convex_hull_area(pts)
            if not hull.degenerate:
                hulls.append(hull.vertices)
        svg_path = os.path.join(args.out, "report.svg")
        plot.write_scatter_svg(svg_path, coverage_data[1], hulls)
        emitted.append(svg_path)
    _report_rss()
    return emitted


def _parse_sweeps(specs: list) -> list:
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--sweep expects KEY=V1,V2 (got {spec!r})")
        key, raw = spec.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"--sweep: unknown key {key!r}")
        values = [_parse_value(key, v, f"sweep {key}") for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"--sweep {key}: no values given")
        axes.append((key, values))
    return axes


def _cmd_experiment(args, cfg: RunConfig) -> list:
    axes = _parse_sweeps(args.sweep)
    if not axes:
        raise ConfigError("experiment needs at least one --sweep")
    os.makedirs(args.out, exist_ok=True)
    cells = list(itertools.product(*[vals for _, vals in axes]))
    keys = [key for key, _ in axes]
    workers = min(len(cells), int(os.environ.get("VQREG_THREADS", "4") or 1))
    workers = max(1, workers)

    def run_cell(index_and_values):
        index, values = index_and_values
        overrides = dict(zip(keys, values))
        cell_cfg = RunConfig({}, {**cfg.values, **overrides})
        dataset, sampler = _load_dataset(cell_cfg)
        result, spec = _fit_model(cell_cfg, dataset)
        grid = make_grid(cell_cfg["grid.t"], dataset.d)
        if args.save_models:
            artifacts.save_model(
                os.path.join(args.out, f"model_cell{index}.json"),
                result.solution, grid, embedding_spec=spec,
                fingerprint=artifacts.config_fingerprint(cell_cfg.fingerprint_dict()),
            )
        embed = _embed_from(spec, result.solution)
        k = result.solution.beta.shape[1]
        cache = {}

        def provider(x):
            key = np.asarray(x, dtype=np.float64).tobytes()
            if key not in cache:
                surf = evaluate_cvqf(
                    result.solution, None if k == 0 else x, grid, embed
                )
                cache[key] = rearrange(surf) if cell_cfg["eval.vmr"] else surf
            return cache[key]

        which = [m for m in cell_cfg["eval.metrics"]
                 if m in ("kde_l1", "qfd", "entropy", "mv")]
        qfd_fitter = None
        if "qfd" in which:
            solver_cfg = _solver_config(cell_cfg)
            qfd_fitter = lambda samples, g: fit_vqe(samples, g, solver_cfg)
        report = evaluation_report(
            provider, sampler, which=which,
            l_values=cell_cfg["eval.l"], m_samples=cell_cfg["eval.m"],
            bins=cell_cfg["eval.bins"], sigma=cell_cfg["eval.sigma"],
            seed=cell_cfg["eval.seed"], qfd_fitter=qfd_fitter,
            metadata={"cell": index},
        )
        overrides_json = {k2: list(v) if isinstance(v, tuple) else v
                          for k2, v in overrides.items()}
        return {"cell": index, "overrides": overrides_json,
                "report": report.to_json_dict()}

    if workers == 1:
        rows = [run_cell(item) for item in enumerate(cells)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, enumerate(cells)))
    rows_path = os.path.join(args.out, "cells.jsonl")
    with open(rows_path, "w", encoding="utf-8", newline="") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    _report_rss()
    emitted = [rows_path]
    if args.save_models:
        emitted += [os.path.join(args.out, f"model_cell{i}.json")
                    for i in range(len(cells))]
    return emitted


def run(argv) -> int:
    """Entry point; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "rearrange":
            emitted = _cmd_rearrange(args)
        else:
            cfg = _config_from_args(args)
            if args.command == "gen":
                emitted = _cmd_gen(args, cfg)
            elif args.command == "fit":
                emitted = _cmd_fit(args, cfg)
            elif args.command == "eval":
                emitted = _cmd_eval(args, cfg)
            else:
                emitted = _cmd_experiment(args, cfg)
        for path in emitted:
            print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArtifactError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except VqregError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
