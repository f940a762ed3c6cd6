#!/usr/bin/env python

"""Universal adversarial perturbation toolkit."""

import argparse
import json
import os
import sys
from typing import Callable
from typing import Dict
from typing import List

from uniperturb.lib import attack
from uniperturb.lib import audio
from uniperturb.lib import dsp
from uniperturb.lib import harness
from uniperturb.lib import logs
from uniperturb.lib import metrics
from uniperturb.lib import nn
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import UniperturbError

# Flags copied into the flat configuration when given, keyed by argparse destination.
SCALAR_FLAGS = (
    "epsilon",
    "delta",
    "threshold",
    "alpha",
    "reg_c",
    "seed",
    "model",
    "model_b",
    "perturbation",
    "manifest",
    "val_manifest",
    "test_manifest",
    "out",
    "arch",
    "report",
    "kind",
    "workers",
    "log",
)
LIST_FLAGS = {
    "epsilon_grid": float,
    "sizes": int,
    "reg_c_grid": float,
}


def load_config(args: argparse.Namespace) -> dict:
    """Loads a configuration file from local storage and overwrites values with user specified arguments.

    Args:
        args: User customization arguments.

    Returns:
        A flat dictionary shared by every configuration class.
    """
    config = {}
    if args.config:
        try:
            with open(args.config) as data_file:
                config = json.load(data_file)
        except ValueError:
            print(f"Invalid configuration file detected: {args.config}")
        except FileNotFoundError:
            print(f"No configuration file found: {args.config}")
        if not isinstance(config, dict):
            print(f"Configuration file must hold a JSON object: {args.config}")
            config = {}

    for key in SCALAR_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    for key, kind in LIST_FLAGS.items():
        value = getattr(args, key, None)
        if value is not None:
            try:
                config[key] = [kind(part) for part in value.split(",") if part.strip()]
            except ValueError as error:
                raise InvalidConfig(f"--{key.replace('_', '-')} expects comma separated numbers: {value}") from error
    if args.debug:
        config["debug"] = True
    if args.timing:
        config["timing"] = True
    return config


def _require(config: dict, key: str) -> str:
    """Value of a setting which the command cannot run without."""
    if config.get(key) in (None, ""):
        raise InvalidConfig(f"--{key.replace('_', '-')} is required for this command")
    return config[key]


def _emit(payload: dict) -> None:
    """Prints a command result as one JSON document."""
    print(json.dumps(payload, indent=2))


def _save_report(config: dict, report: harness.ExperimentReport) -> None:
    """Writes a report to --out and prints where it went."""
    path = _require(config, "out")
    csv_path = report.save(path)
    _emit({"report": os.path.abspath(path), "csv": os.path.abspath(csv_path), "rows": len(report.rows)})


def _harness(config: dict) -> harness.ExperimentHarness:
    """Experiment driver configured from the flat configuration."""
    return harness.ExperimentHarness(
        attack.AttackConfig(config),
        workers=int(config.get("workers", 1)),
        timing=bool(config.get("timing")),
        run_config=config,
    )


def command_synth(config: dict) -> None:
    """Generates the synthetic tone corpus."""
    train, val, test = harness.synth_corpus(harness.SynthConfig(config), _require(config, "out"))
    _emit({"train": len(train), "val": len(val), "test": len(test), "out": os.path.abspath(config["out"])})


def command_train(config: dict) -> None:
    """Trains a victim model on a manifest."""
    alphabet = config.get("alphabet", harness.SynthConfig.ALPHABET)
    corpus = audio.load_manifest(_require(config, "manifest"), alphabet)
    model = nn.train_model(
        corpus,
        config.get("arch", nn.DS_LITE),
        nn.TrainConfig(config),
        dsp.MfccConfig(config),
        config.get("hyper"),
    )
    nn.save_model(_require(config, "out"), model)
    _emit({"model": os.path.abspath(config["out"]), "model_id": model.model_id, "train_cer": metrics.corpus_cer(model, corpus)})


def command_attack(config: dict) -> None:
    """Trains a universal perturbation, storing it with a listening WAV next to it."""
    model = nn.load_model(_require(config, "model"))
    train = audio.load_manifest(_require(config, "manifest"), model.alphabet)
    val = audio.load_manifest(_require(config, "val_manifest"), model.alphabet)
    perturbation = attack.universal_train(model, train, val, attack.AttackConfig(config), workers=int(config.get("workers", 1)))
    path = _require(config, "out")
    attack.save_perturbation(path, perturbation)
    attack.export_wav(path + ".wav", perturbation)
    _emit({"perturbation": os.path.abspath(path), "epochs_run": perturbation.epochs_run, "history": perturbation.history})


def command_eval(config: dict) -> None:
    """Evaluates a stored perturbation on a manifest."""
    model = nn.load_model(_require(config, "model"))
    corpus = audio.load_manifest(_require(config, "manifest"), model.alphabet)
    perturbation = attack.load_perturbation(_require(config, "perturbation"))
    evaluation = metrics.evaluate_universal(
        model,
        corpus,
        perturbation,
        attack.AttackConfig(config).threshold,
        int(config.get("workers", 1)),
    )
    _emit(
        {
            "model_id": model.model_id,
            "success_rate": evaluation.success_rate,
            "mean_cer": evaluation.mean_cer,
            "mean_db_rel": evaluation.mean_db_rel,
            "n_items": len(corpus),
            "n_excluded_empty": evaluation.n_excluded,
        }
    )


def command_sweep(config: dict) -> None:
    """Runs the epsilon sweep."""
    model = nn.load_model(_require(config, "model"))
    train = audio.load_manifest(_require(config, "manifest"), model.alphabet)
    val = audio.load_manifest(_require(config, "val_manifest"), model.alphabet)
    test = audio.load_manifest(_require(config, "test_manifest"), model.alphabet)
    grid = config.get("epsilon_grid", harness.DEFAULT_EPSILON_GRID)
    _save_report(config, _harness(config).run_epsilon_sweep(model, train, val, test, grid))


def command_baseline(config: dict) -> None:
    """Compares a stored perturbation with uniform noise of the same budget."""
    model = nn.load_model(_require(config, "model"))
    test = audio.load_manifest(config.get("test_manifest") or _require(config, "manifest"), model.alphabet)
    perturbation = attack.load_perturbation(_require(config, "perturbation"))
    _save_report(config, _harness(config).run_baseline_comparison(model, test, perturbation))


def command_size_sweep(config: dict) -> None:
    """Runs the training size sweep."""
    model = nn.load_model(_require(config, "model"))
    train = audio.load_manifest(_require(config, "manifest"), model.alphabet)
    val = audio.load_manifest(_require(config, "val_manifest"), model.alphabet)
    test = audio.load_manifest(_require(config, "test_manifest"), model.alphabet)
    sizes = config.get("sizes", harness.DEFAULT_SIZES)
    _save_report(config, _harness(config).run_size_sweep(model, train, val, test, sizes))


def command_transfer(config: dict) -> None:
    """Evaluates a stored perturbation against two victims."""
    model_a = nn.load_model(_require(config, "model"))
    model_b = nn.load_model(_require(config, "model_b"))
    test = audio.load_manifest(config.get("test_manifest") or _require(config, "manifest"), model_a.alphabet)
    perturbation = attack.load_perturbation(_require(config, "perturbation"))
    _save_report(config, _harness(config).run_transfer(model_a, model_b, test, perturbation))


def command_plot_data(config: dict) -> None:
    """Reshapes a report into figure series, as CSV on --out or standard output."""
    report = harness.ExperimentReport.load(_require(config, "report"))
    kind = config.get("kind", "baseline")
    rows = harness.plot_data(report, kind)
    out = config.get("out")
    if out:
        harness.write_csv(out, harness.PLOT_FIELDS[kind], rows)
        _emit({"plot_data": os.path.abspath(out), "rows": len(rows)})
    else:
        print(",".join(harness.PLOT_FIELDS[kind]))
        for row in rows:
            print(",".join("" if row[key] is None else str(row[key]) for key in harness.PLOT_FIELDS[kind]))


def command_tune_c(config: dict) -> None:
    """Searches the regularization weight on the validation split."""
    model = nn.load_model(_require(config, "model"))
    train = audio.load_manifest(_require(config, "manifest"), model.alphabet)
    val = audio.load_manifest(_require(config, "val_manifest"), model.alphabet)
    candidates = config.get("reg_c_grid", [attack.AttackConfig.REG_C])
    best, rates = attack.search_reg_c(
        model, train, val, attack.AttackConfig(config), candidates, int(config.get("workers", 1))
    )
    _emit({"reg_c": best, "candidates": candidates, "val_success_rates": rates})


COMMANDS: Dict[str, Callable[[dict], None]] = {
    "synth": command_synth,
    "train": command_train,
    "attack": command_attack,
    "eval": command_eval,
    "sweep": command_sweep,
    "baseline": command_baseline,
    "size-sweep": command_size_sweep,
    "transfer": command_transfer,
    "plot-data": command_plot_data,
    "tune-c": command_tune_c,
}


def parse_args(argv: List[str] = None) -> argparse.Namespace:
    """Parses user arguments for the uniperturb application."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Flat JSON configuration file")
    common.add_argument("--epsilon", type=float, help="Perturbation budget in int16 units")
    common.add_argument("--epsilon-grid", help="Comma separated budgets for the sweep")
    common.add_argument("--delta", type=float, help="Validation success rate which stops training")
    common.add_argument("--threshold", type=float, help="CER above which an utterance counts as broken")
    common.add_argument("--alpha", type=float, help="Sign step size in int16 units")
    common.add_argument("--reg-c", type=float, help="Weight of the norm penalty on per-utterance updates")
    common.add_argument("--reg-c-grid", help="Comma separated weights for tune-c")
    common.add_argument("--seed", type=int, help="Seed shared by synthesis, training, and attacks")
    common.add_argument("--model", help="Victim model file")
    common.add_argument("--model-b", help="Second victim model file for transfer")
    common.add_argument("--arch", choices=list(nn.ARCHS), help="Architecture to train")
    common.add_argument("--perturbation", help="Perturbation file")
    common.add_argument("--manifest", help="Training, or evaluated, manifest")
    common.add_argument("--val-manifest", help="Validation manifest")
    common.add_argument("--test-manifest", help="Test manifest")
    common.add_argument("--sizes", help="Comma separated training sizes for size-sweep")
    common.add_argument("--report", help="JSON report to reshape")
    common.add_argument("--kind", choices=sorted(harness.PLOT_FIELDS), help="Series produced by plot-data")
    common.add_argument("--workers", type=int, help="Threads used by evaluations")
    common.add_argument("-o", "--out", help="Output file or directory")
    common.add_argument("-l", "--log", help="Log operations to specific file")
    common.add_argument("-d", "--debug", action="store_true", help="Enable debug logging")
    common.add_argument("--timing", action="store_true", help="Record wall clock time in reports")

    parser = argparse.ArgumentParser(description="Build and evaluate universal adversarial perturbations for speech models.")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, handler in COMMANDS.items():
        commands.add_parser(name, parents=[common], help=handler.__doc__.splitlines()[0])
    return parser.parse_args(argv)


def main(argv: List[str] = None) -> int:
    """Main execution for the 'uniperturb' application.

    Summary of application flow:
        1. Parse user arguments into a flat config dictionary.
        2. Set up file logging.
        3. Run the requested command, reporting toolkit errors as one JSON line on stderr.

    Returns:
        The process exit code.
    """
    args = parse_args(argv)
    try:
        config = load_config(args)
        logs.setup_logger(logs.LogConfig(config))
        COMMANDS[args.command](config)
    except UniperturbError as error:
        print(json.dumps({"error": error.code, "message": str(error)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
