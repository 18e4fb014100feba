"""Command-line entry point: campaign runner, baseline runner, single-genome
evaluator, and report regenerator.

Configuration precedence: explicit flags > config file (--config, JSON or
key=value lines) > preset bundle (--preset) > built-in defaults. The built-in
defaults reproduce the reference experimental setup (population 100, 300
generations for the fully-connected model and 120 for the convolutional one,
30 runs, 4 clients).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import data, metrics, nn, nsga2
from .nn import TrainConfig
from .objectives import (
    BOUNDS_PRESETS,
    Bounds,
    EvalEnv,
    Genome,
    comm_fraction,
    evaluate_genome,
    simulate_genome,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DEFAULTS = {
    "model": "fc",
    "n_clients": 4,
    "pop": 100,
    "generations": None,  # resolved per model: fc 300, conv 120
    "runs": 30,
    "seed": 1,
    "init_seed": 0,
    "bounds": "default",
    "train_limit": None,
    "test_limit": None,
    "lr": 0.1,
    "batch_size": 64,
    "epochs": 1,
    "workers": 1,
    "out": "flcop-out",
}

GENERATIONS_BY_MODEL = {"fc": 300, "conv": 120}

PRESETS = {
    "desk-fc": {
        "model": "fc", "train_limit": 8000, "test_limit": 2000, "n_clients": 4,
        "pop": 20, "generations": 20, "runs": 1, "seed": 1,
    },
    "desk-conv": {
        "model": "conv", "train_limit": 2000, "test_limit": 500, "n_clients": 4,
        "pop": 8, "generations": 4, "runs": 1, "seed": 1,
    },
}

MODEL_SPECS = {"fc": nn.fully_connected, "conv": nn.convolutional}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mnist-dir", help="directory with the four MNIST IDX files (env FLCOP_MNIST_DIR)")
    p.add_argument("--model", choices=("fc", "conv"))
    p.add_argument("--n-clients", type=int)
    p.add_argument("--train-limit", type=int, help="use only the first K examples of the seeded permutation")
    p.add_argument("--test-limit", type=int)
    p.add_argument("--lr", type=float, help="SGD learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", type=int, help="seed for the shared initial model weights")
    p.add_argument("--workers", type=int, help="parallel fitness evaluations")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON or key=value config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flcop", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run the multi-objective search campaign")
    _add_common(p_opt)
    p_opt.add_argument("--pop", type=int, help="population size (even, >= 4)")
    p_opt.add_argument("--generations", type=int)
    p_opt.add_argument("--runs", type=int)
    p_opt.add_argument("--bounds", choices=tuple(BOUNDS_PRESETS))
    p_opt.add_argument("--preset", choices=tuple(PRESETS))

    p_base = sub.add_parser("baseline", help="evaluate the no-reduction configuration")
    _add_common(p_base)
    p_base.add_argument("--trace", help="write per-round JSON lines to this file")
    p_base.add_argument("--trace-accuracy", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate one genome")
    _add_common(p_eval)
    p_eval.add_argument("genome", help="flat JSON array [m, E, mu_1.., b_1..], or @file")
    p_eval.add_argument("--bounds", choices=tuple(BOUNDS_PRESETS))
    p_eval.add_argument("--layer-sizes", help="comma-separated synthetic layer sizes: closed-form objectives only, no simulation")
    p_eval.add_argument("--trace", help="write per-round JSON lines to this file")
    p_eval.add_argument("--trace-accuracy", action="store_true")

    p_rep = sub.add_parser("report", help="regenerate merged front, genome stats, and summary from stored CSVs")
    p_rep.add_argument("dir", help="campaign output directory")
    return parser


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        loaded = json.loads(text)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config JSON must be an object")
    else:
        loaded = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            loaded[key.strip()] = json.loads(value.strip())
    return {str(k).replace("-", "_"): v for k, v in loaded.items()}


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge flags, config file, preset, and defaults into one options dict."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    preset = PRESETS.get(getattr(args, "preset", None) or file_cfg.get("preset", ""), {})
    options = {}
    for key, default in DEFAULTS.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            options[key] = cli_value
        elif key in file_cfg:
            options[key] = file_cfg[key]
        elif key in preset:
            options[key] = preset[key]
        else:
            options[key] = default
    if options["generations"] is None:
        options["generations"] = GENERATIONS_BY_MODEL[options["model"]]
    options["mnist_dir"] = getattr(args, "mnist_dir", None) or file_cfg.get("mnist_dir") or None

    if options["n_clients"] < 1:
        raise ConfigError("--n-clients must be at least 1")
    if options["pop"] < 4 or options["pop"] % 2:
        raise ConfigError("--pop must be even and at least 4")
    for key in ("generations", "runs", "batch_size", "epochs", "workers"):
        if options[key] < 1:
            raise ConfigError(f"--{key.replace('_', '-')} must be at least 1")
    if options["lr"] <= 0:
        raise ConfigError("--lr must be positive")
    if options["seed"] < 0 or options["init_seed"] < 0:
        raise ConfigError("seeds must be non-negative")
    return options


def _mnist_dir(options: dict) -> Path:
    chosen = options.get("mnist_dir") or os.environ.get("FLCOP_MNIST_DIR")
    if not chosen:
        raise DataError("no MNIST directory: pass --mnist-dir or set FLCOP_MNIST_DIR")
    path = Path(chosen)
    if not path.is_dir():
        raise DataError(f"MNIST directory {path} does not exist")
    return path


def _load_datasets(options: dict):
    try:
        train, test = data.load_mnist(_mnist_dir(options))
    except (data.IdxFormatError, data.IdxLengthError, data.DataConsistencyError, FileNotFoundError) as exc:
        raise DataError(str(exc)) from exc
    train = data.subsample(train, options["train_limit"], options["seed"])
    test = data.subsample(test, options["test_limit"], options["seed"])
    return train, test


def _make_env(options: dict, train, test, run_seed: int) -> EvalEnv:
    part = data.partition(train, options["n_clients"], run_seed)
    return EvalEnv(
        spec=MODEL_SPECS[options["model"]](),
        partition=part,
        test=test,
        train=TrainConfig(options["lr"], options["batch_size"]),
        epochs=options["epochs"],
        seed=run_seed,
        init_seed=options["init_seed"],
    )


def _build_env(options: dict, run_seed: int) -> EvalEnv:
    train, test = _load_datasets(options)
    return _make_env(options, train, test, run_seed)


_WORKER_ENV: EvalEnv | None = None


def _worker_init(options: dict, run_seed: int) -> None:
    global _WORKER_ENV
    _WORKER_ENV = _build_env(options, run_seed)


def _worker_eval(task) -> tuple[float, float]:
    generation, index, vector = task
    return evaluate_genome(Genome.from_vector(vector), _WORKER_ENV, generation, index).as_pair()


def _campaign_manifest(options: dict, bounds: Bounds) -> dict:
    manifest = {k: options[k] for k in sorted(DEFAULTS)}
    manifest["mnist_dir"] = str(options["mnist_dir"]) if options["mnist_dir"] else None
    manifest["interval_max"] = bounds.interval_max
    manifest["n_layers"] = bounds.n_layers
    return manifest


def _front_points(result: nsga2.SearchResult, run_id: int, generation: int) -> list[metrics.ParetoPoint]:
    points = [
        metrics.ParetoPoint(ind.objectives[0], ind.objectives[1], Genome.from_vector(ind.genome), run_id, generation)
        for ind in result.population
        if ind.rank == 1
    ]
    points.sort(key=lambda p: (p.comm, p.accuracy, p.genome.to_vector()))
    return points


def _write_generation_log(path: Path, history: list[nsga2.GenerationRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in history:
            row = {
                "gen": rec.generation,
                "front1": [[objs[0], objs[1], list(genome)] for objs, genome in rec.front],
                "hypervolume": rec.hv_front,
                "evals": rec.evaluations,
            }
            f.write(json.dumps(row) + "\n")


def cmd_optimize(args: argparse.Namespace) -> int:
    options = resolve_options(args)
    train, test = _load_datasets(options)
    spec = MODEL_SPECS[options["model"]]()
    bounds = BOUNDS_PRESETS[options["bounds"]](options["n_clients"], spec.n_arrays)
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)

    run_fronts: list[list[metrics.ParetoPoint]] = []
    hv_tables = []
    for run_id in range(1, options["runs"] + 1):
        run_seed = options["seed"] + run_id - 1
        params = nsga2.SearchParams(
            population_size=options["pop"],
            generations=options["generations"],
            bounds=tuple(bounds.coordinate_ranges()),
            seed=run_seed,
        )
        if options["workers"] > 1:
            with ProcessPoolExecutor(
                max_workers=options["workers"], initializer=_worker_init, initargs=(options, run_seed)
            ) as pool:
                def evaluate(genomes, generation):
                    tasks = [(generation, i, g) for i, g in enumerate(genomes)]
                    return list(pool.map(_worker_eval, tasks))

                result = nsga2.run(evaluate, params, directions=(1, -1), hv_reference=metrics.HV_REFERENCE)
        else:
            env = _make_env(options, train, test, run_seed)

            def evaluate(genomes, generation):
                return [
                    evaluate_genome(Genome.from_vector(g), env, generation, i).as_pair()
                    for i, g in enumerate(genomes)
                ]

            result = nsga2.run(evaluate, params, directions=(1, -1), hv_reference=metrics.HV_REFERENCE)

        run_fronts.append(_front_points(result, run_id, options["generations"]))
        hv_tables.append([(r.generation, r.hv_front, r.evaluations, r.hv_archive) for r in result.history])
        _write_generation_log(out / f"generations_run{run_id}.jsonl", result.history)
        print(f"run {run_id}/{options['runs']}: front size {len(run_fronts[-1])}, evaluations {result.evaluations}")

    manifest = _campaign_manifest(options, bounds)
    (out / "campaign.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    summary = metrics.export_campaign(out, run_fronts, hv_tables, bounds, manifest)
    print(
        f"merged front: {summary['merged_front_size']} points, "
        f"best f2 {summary['best_f2']}, min f1 {summary['min_f1']}"
    )
    return EXIT_OK


def brute_force_genome(n_clients: int, n_layers: int) -> Genome:
    return Genome(n_clients, 1, (0,) * n_layers, (32,) * n_layers)


def _objective_json(vector) -> dict:
    return {
        "f1": vector.comm_fraction,
        "f2": vector.accuracy,
        "alpha": vector.alpha,
        "beta": vector.beta,
        "n_correct": vector.n_correct,
        "n_test": vector.n_test,
        "failed": vector.failed,
        "note": vector.note,
    }


def _ledger_json(ledger) -> dict:
    return {
        "rounds": ledger.rounds_executed,
        "uplink_bits": ledger.uplink_bits,
        "downlink_bits": ledger.downlink_bits,
        "baseline_bits": ledger.baseline_bits,
    }


def _open_trace(path_str, trace_accuracy):
    if not path_str:
        return None, None, False
    handle = open(path_str, "w", encoding="utf-8", newline="\n")
    return handle, (lambda row: handle.write(json.dumps(row) + "\n")), trace_accuracy


def cmd_baseline(args: argparse.Namespace) -> int:
    options = resolve_options(args)
    env = _build_env(options, options["seed"])
    genome = brute_force_genome(env.n_clients, env.spec.n_arrays)
    handle, trace, trace_acc = _open_trace(args.trace, args.trace_accuracy)
    try:
        vector, outcome = simulate_genome(genome, env, trace=trace, trace_accuracy=trace_acc)
    finally:
        if handle:
            handle.close()
    payload = {
        "genome": list(genome.to_vector()),
        "objectives": _objective_json(vector),
        "ledger": _ledger_json(outcome.ledger) if outcome else None,
    }
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "baseline.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    print(json.dumps(payload["objectives"]))
    return EXIT_OK


def _parse_genome_arg(text: str) -> Genome:
    if text.startswith("@"):
        text = Path(text[1:]).read_text(encoding="utf-8")
    try:
        vec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"genome is not valid JSON: {exc}") from exc
    if not isinstance(vec, list) or not all(isinstance(v, int) for v in vec):
        raise ConfigError("genome must be a flat JSON array of integers")
    try:
        return Genome.from_vector(vec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_eval(args: argparse.Namespace) -> int:
    options = resolve_options(args)
    genome = _parse_genome_arg(args.genome)
    bounds_name = args.bounds or "default"

    if args.layer_sizes:
        try:
            sizes = [int(s) for s in args.layer_sizes.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --layer-sizes: {exc}") from exc
        bounds = BOUNDS_PRESETS[bounds_name](options["n_clients"], len(sizes))
        try:
            genome.validate(bounds)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        alpha, beta, f1 = comm_fraction(genome, sizes, options["n_clients"])
        payload = {
            "genome": list(genome.to_vector()),
            "objectives": {"f1": f1, "f2": None, "alpha": alpha, "beta": beta},
            "ledger": None,
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
        return EXIT_OK

    env = _build_env(options, options["seed"])
    bounds = env.bounds(bounds_name)
    try:
        genome.validate(bounds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    handle, trace, trace_acc = _open_trace(args.trace, args.trace_accuracy)
    try:
        vector, outcome = simulate_genome(genome, env, trace=trace, trace_accuracy=trace_acc)
    finally:
        if handle:
            handle.close()
    payload = {
        "genome": list(genome.to_vector()),
        "objectives": _objective_json(vector),
        "ledger": _ledger_json(outcome.ledger) if outcome else None,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.dir)
    manifest_path = out / "campaign.json"
    if not manifest_path.is_file():
        raise DataError(f"missing {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    runs = int(manifest["runs"])
    missing = []
    for k in range(1, runs + 1):
        for name in (f"pareto_run{k}.csv", f"hypervolume_run{k}.csv"):
            if not (out / name).is_file():
                missing.append(name)
    if missing:
        raise DataError("missing campaign files: " + ", ".join(missing))

    run_fronts = [metrics.read_pareto_csv(out / f"pareto_run{k}.csv") for k in range(1, runs + 1)]
    hv_tables = [metrics.read_hypervolume_csv(out / f"hypervolume_run{k}.csv") for k in range(1, runs + 1)]
    bounds = Bounds(
        n_clients=int(manifest["n_clients"]),
        n_layers=int(manifest["n_layers"]),
        interval_max=int(manifest["interval_max"]),
    )
    merged = metrics.merge_pseudo_optimal(run_fronts)
    metrics.write_pareto_csv(out / "pareto_merged.csv", merged, bounds.n_layers)
    metrics.write_genome_stats_csv(out / "genome_stats.csv", metrics.genome_stats_rows(run_fronts, bounds))
    summary = metrics.build_summary(run_fronts, merged, hv_tables, manifest)
    metrics.write_summary(out / "summary.json", summary)
    print(
        f"merged front: {summary['merged_front_size']} points, "
        f"best f2 {summary['best_f2']}, min f1 {summary['min_f1']}"
    )
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - map everything else to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
