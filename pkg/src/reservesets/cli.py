"""Command-line entry point: gen-data, train, eval, sweep, selftest and pipeline."""

import argparse
import dataclasses
import json
import logging
import sys
from functools import partial
from pathlib import Path

import torch
from platformdirs import user_data_dir

from .config import RunConfig, load_config, record_outputs
from .data import default_system, generate, independent_shape, load_dataset, save_dataset
from .encoder import MlpEncoder, contextual_factors, load_encoder, save_encoder
from .errors import ConfigError, ReserveSetError
from .evaluation import (
    INDEPENDENT,
    LEARNED_CONTEXTUAL,
    LEARNED_STATIC,
    LEARNED_STATIC_DECOUPLED,
    SAMPLE_COVARIANCE,
    TRUE_SHAPE,
    ShapeSource,
    baseline_transfer_limits,
    coupling_delta,
    evaluate_methods,
    tau_sweep,
    true_shape_source,
    write_frame,
    write_reports,
    write_sweep,
)
from .geometry import CholeskyShape, project_shape
from .sced import TransferLimits, ZonalSystem, load_system, save_system
from .selftest import run_selftest
from .train import initial_shape, trace_to_csv, train_contextual, train_static

logger = logging.getLogger("reservesets")

DEFAULT_OUT: Path = Path(user_data_dir("reservesets")) / "runs" / "default"
DATA_DIR = "data"
CHECKPOINT_DIR = "checkpoints"
REPORT_DIR = "reports"
SYSTEM_FILE = "system.json"
SHAPE_FILES = {
    SAMPLE_COVARIANCE: "sample_covariance.json",
    INDEPENDENT: "independent.json",
    LEARNED_STATIC: "learned_static.json",
}
COUPLED_SHAPE_FILE = "learned_static_coupled.json"
ENCODER_FILE = "encoder.json"
LIMITS_FILE = "transfer_limits.json"


def _write_json(obj: dict, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def _read_shape(path: Path) -> CholeskyShape:
    return CholeskyShape.from_json(json.loads(path.read_text()))


def _load_inputs(out: Path) -> tuple[ZonalSystem, object]:
    data_dir = out / DATA_DIR
    return load_system(data_dir / SYSTEM_FILE), load_dataset(data_dir)


def _transfer_limits(config: RunConfig, system: ZonalSystem, ds) -> TransferLimits:
    base = initial_shape(ds, config.train)
    return baseline_transfer_limits(system, ds, base, config.train, config.eval)


def cmd_gen_data(config: RunConfig, out: Path) -> int:
    data_dir = out / DATA_DIR
    data_dir.mkdir(parents=True, exist_ok=True)

    system = load_system(Path(config.system.path)) if config.system.path else default_system(config.system.seed)
    print(f"Generating {config.data.n_hours} hours of synthetic forecast errors...")
    ds = generate(config.data.params, config.data.n_hours, config.data.fractions)

    paths = save_dataset(ds, data_dir)
    save_system(system, data_dir / SYSTEM_FILE)
    paths.append(data_dir / SYSTEM_FILE)
    for path in paths:
        print(f"  -> {path}")
    record_outputs(data_dir, config, paths)
    return 0


def cmd_train(config: RunConfig, out: Path, threads: int = 1) -> int:
    system, ds = _load_inputs(out)
    ckpt_dir = out / CHECKPOINT_DIR
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    baselines = {
        SAMPLE_COVARIANCE: initial_shape(ds, config.train),
        INDEPENDENT: project_shape(independent_shape(ds.train.us).entries),
    }
    for name, shape in baselines.items():
        paths.append(_write_json(shape.to_json(), ckpt_dir / SHAPE_FILES[name]))

    needs_limits = config.train.coupled or (config.contextual.enabled and config.contextual.coupled)
    tl = _transfer_limits(config, system, ds) if needs_limits else None

    print(f"Training static shape ({config.train.iterations} iterations)...")
    decoupled_cfg = dataclasses.replace(config.train, coupled=False)
    learned, trace = train_static(system, ds, decoupled_cfg, init=baselines[SAMPLE_COVARIANCE])
    paths.append(_write_json(learned.to_json(), ckpt_dir / SHAPE_FILES[LEARNED_STATIC]))
    trace_to_csv(trace, ckpt_dir / "trace_static.csv")
    paths.append(ckpt_dir / "trace_static.csv")

    if config.train.coupled:
        print(f"Training static shape under transfer limits ({config.train.iterations} iterations)...")
        coupled, trace = train_static(system, ds, config.train, tl, init=baselines[SAMPLE_COVARIANCE])
        paths.append(_write_json(coupled.to_json(), ckpt_dir / COUPLED_SHAPE_FILE))
        trace_to_csv(trace, ckpt_dir / "trace_static_coupled.csv")
        paths.append(ckpt_dir / "trace_static_coupled.csv")
        if config.contextual.coupled:
            learned = coupled

    if config.contextual.enabled:
        print(f"Training contextual encoder (up to {config.contextual.iterations} iterations)...")
        enc = MlpEncoder(config.contextual.widths, seed=config.contextual.seed)
        enc, ctx_trace = train_contextual(enc, system, ds, config.contextual, tl, learned, threads=threads)
        save_encoder(enc, ckpt_dir / ENCODER_FILE)
        trace_to_csv(ctx_trace, ckpt_dir / "trace_contextual.csv")
        paths += [ckpt_dir / ENCODER_FILE, ckpt_dir / "trace_contextual.csv"]

    for path in paths:
        print(f"  -> {path}")
    record_outputs(ckpt_dir, config, paths)
    return 0


def _sources(config: RunConfig, out: Path, ds, coupled: bool = False) -> dict[str, ShapeSource]:
    """Checkpointed shapes by method; under coupling the coupled-trained shape takes the Learned (Static) row."""
    ckpt_dir = out / CHECKPOINT_DIR
    sources: dict[str, ShapeSource] = {name: _read_shape(ckpt_dir / f) for name, f in SHAPE_FILES.items()}
    if coupled and (ckpt_dir / COUPLED_SHAPE_FILE).exists():
        sources[LEARNED_STATIC_DECOUPLED] = sources[LEARNED_STATIC]
        sources[LEARNED_STATIC] = _read_shape(ckpt_dir / COUPLED_SHAPE_FILE)
    if config.eval.include_contextual and (ckpt_dir / ENCODER_FILE).exists():
        sources[LEARNED_CONTEXTUAL] = partial(contextual_factors, load_encoder(ckpt_dir / ENCODER_FILE))
    if config.eval.include_oracle:
        sources[TRUE_SHAPE] = true_shape_source(ds.params)
    return sources


def _limits_for_eval(config: RunConfig, system: ZonalSystem, ds, report_dir: Path, paths: list[Path]):
    if not config.eval.coupled:
        return None
    tl = _transfer_limits(config, system, ds)
    paths.append(_write_json(tl.to_json(), report_dir / LIMITS_FILE))
    return tl


def cmd_eval(config: RunConfig, out: Path, threads: int = 1) -> int:
    system, ds = _load_inputs(out)
    report_dir = out / REPORT_DIR
    report_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    tl = _limits_for_eval(config, system, ds, report_dir, paths)

    mode = "coupled" if config.eval.coupled else "decoupled"
    print(f"Evaluating at tau={config.eval.tau} ({mode})...")
    reports = evaluate_methods(_sources(config, out, ds, config.eval.coupled), system, ds, config.eval, tl, threads)
    stem = "eval_coupled" if config.eval.coupled else "eval"
    paths += write_reports(reports, report_dir, stem)
    print((report_dir / f"{stem}.txt").read_text(), end="")

    for path in paths:
        print(f"  -> {path}")
    record_outputs(report_dir, config, paths)
    return 0


def cmd_sweep(config: RunConfig, out: Path, threads: int = 1) -> int:
    system, ds = _load_inputs(out)
    report_dir = out / REPORT_DIR
    report_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    tl = _limits_for_eval(config, system, ds, report_dir, paths)

    print(f"Sweeping tau over {', '.join(f'{t:.2f}' for t in config.eval.taus)}...")
    sources = _sources(config, out, ds, config.eval.coupled)
    cells = tau_sweep(sources, system, ds, config.eval.taus, config.eval, tl, threads)
    paths += write_sweep(cells, report_dir, "sweep_coupled" if config.eval.coupled else "sweep")

    for path in paths:
        print(f"  -> {path}")
    record_outputs(report_dir, config, paths)
    return 0


def cmd_selftest(seed: int = 0) -> int:
    failed = 0
    for result in run_selftest(seed):
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
        failed += not result.passed
    return 1 if failed else 0


def cmd_pipeline(config: RunConfig, out: Path, threads: int = 1) -> int:
    """gen-data, train (decoupled and coupled), then eval in both dispatch modes with the cost deltas."""
    train_config = dataclasses.replace(config, train=dataclasses.replace(config.train, coupled=True))
    if code := cmd_gen_data(config, out):
        return code
    if code := cmd_train(train_config, out, threads):
        return code

    system, ds = _load_inputs(out)
    report_dir = out / REPORT_DIR
    report_dir.mkdir(parents=True, exist_ok=True)
    decoupled_cfg = dataclasses.replace(config.eval, coupled=False)
    coupled_cfg = dataclasses.replace(config.eval, coupled=True)
    tl = _transfer_limits(config, system, ds)

    print("Evaluating decoupled and coupled dispatch...")
    decoupled = evaluate_methods(_sources(config, out, ds), system, ds, decoupled_cfg, None, threads)
    coupled = evaluate_methods(_sources(config, out, ds, coupled=True), system, ds, coupled_cfg, tl, threads)
    paths = [_write_json(tl.to_json(), report_dir / LIMITS_FILE)]
    paths += write_reports(decoupled, report_dir, "eval")
    paths += write_reports(coupled, report_dir, "eval_coupled")
    paths.append(write_frame(coupling_delta(decoupled, coupled), report_dir / "coupling_delta.csv"))
    print((report_dir / "eval.txt").read_text(), end="")
    print((report_dir / "eval_coupled.txt").read_text(), end="")
    for path in paths:
        print(f"  -> {path}")
    record_outputs(report_dir, config, paths)
    return 0


def _parse_taus(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"invalid tau list {text!r}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reservesets", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=DEFAULT_OUT, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset and system")
    sub.add_parser("train", parents=[common], help="train static and contextual shapes")
    ev = sub.add_parser("eval", parents=[common], help="evaluate all methods at the conformal radius")
    ev.add_argument("--coupled", action="store_true", help="include transfer constraints")
    sw = sub.add_parser("sweep", parents=[common], help="recalibrate frozen shapes over a tau grid")
    sw.add_argument("--coupled", action="store_true", help="include transfer constraints")
    sw.add_argument("--tau-list", type=_parse_taus, help='e.g. "0.90,0.92,0.95,0.97,0.99"')
    sub.add_parser("selftest", parents=[common], help="run the numerical oracle suites")
    sub.add_parser("pipeline", parents=[common], help="gen-data, train and eval in one output tree")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    torch.set_num_threads(1)
    if args.threads < 1:
        print("Error: --threads must be at least 1", file=sys.stderr)
        return 2

    if args.command == "selftest":
        return cmd_selftest(args.seed or 0)

    try:
        config = load_config(args.config, args.seed)
        if getattr(args, "coupled", False):
            config = _replace_eval(config, coupled=True)
        if getattr(args, "tau_list", None):
            config = _replace_eval(config, taus=args.tau_list)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"Error: cannot read config {args.config}: {e.strerror or e}", file=sys.stderr)
        return 2

    commands = {
        "gen-data": lambda: cmd_gen_data(config, args.out),
        "train": lambda: cmd_train(config, args.out, args.threads),
        "eval": lambda: cmd_eval(config, args.out, args.threads),
        "sweep": lambda: cmd_sweep(config, args.out, args.threads),
        "pipeline": lambda: cmd_pipeline(config, args.out, args.threads),
    }
    try:
        return commands[args.command]()
    except ReserveSetError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"Error: File operation failed: {e}", file=sys.stderr)
        return 1


def _replace_eval(config: RunConfig, **changes) -> RunConfig:
    try:
        return dataclasses.replace(config, eval=dataclasses.replace(config.eval, **changes))
    except ReserveSetError as err:
        raise ConfigError(str(err), "eval") from err


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
