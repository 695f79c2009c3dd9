"""Command-line entry point: gen-data, train, eval, sweep, export-embeddings.

Every command writes its fully resolved configuration (defaults included)
next to its outputs, and any run is reproducible from that file alone via
`--config`. Exit codes: 0 success, 2 configuration/usage error, 3
numerical or verification failure, 4 I/O error.

Heavy imports happen after `--threads` is applied so BLAS thread caps
take effect; `--threads 1` (the default) guarantees bit-exact reference
outputs.
"""

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class VerificationError(RuntimeError):
    """A --verify invariant assertion failed."""


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v)


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochproto",
        description="Stochastic prototype embeddings: data generation, training, evaluation.")
    parser.add_argument("--threads", type=_positive_int, default=1,
                        help="worker/BLAS thread cap; 1 gives bit-exact reference outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("gen-data", help="generate the synthetic color/orientation dataset")
    p.add_argument("--per-class", type=_positive_int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=_positive_int, default=64)
    p.add_argument("--noisy-fraction", type=float, default=0.15)
    p.add_argument("--noise-coupling", choices=("bundled", "independent"), default="bundled",
                   help="apply hue and leg noise to one shared minority or to "
                        "independently drawn minorities")
    p.add_argument("--feature-mode", action="store_true",
                   help="emit 4-vector latent features instead of pixels")
    commands["gen-data"] = p

    p = sub.add_parser("train", help="train a stochastic or deterministic prototype model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("spe", "pn"), default="spe")
    p.add_argument("--sampler", choices=("intersection", "naive"), default="intersection")
    p.add_argument("--samples", type=_positive_int, default=1,
                   help="training samples per query")
    p.add_argument("--dim", type=_positive_int, default=2, help="embedding dimensionality")
    p.add_argument("--hidden", type=_int_list, default=(64, 64),
                   help="comma-separated hidden layer widths")
    p.add_argument("--downsample", type=_positive_int, default=1,
                   help="average-pool factor per side for pixel inputs")
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--halve-every", type=_positive_int, default=50)
    p.add_argument("--patience", type=_positive_int, default=10)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--episodes-per-epoch", type=_positive_int, default=100)
    p.add_argument("--val-episodes", type=_positive_int, default=40)
    p.add_argument("--ways", type=_positive_int, default=4)
    p.add_argument("--shots", type=_positive_int, default=2)
    p.add_argument("--queries", type=_positive_int, default=5)
    p.add_argument("--gamma0", type=float, default=0.01)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--eval-samples", type=_positive_int, default=200)
    p.add_argument("--occlude-prob", type=float, default=0.0,
                   help="per-image training occlusion probability (0 disables)")
    p.add_argument("--occlude-unit", type=int, default=0,
                   help="occlusion unit size in pixels (0 means the full image side)")
    p.add_argument("--seed", type=int, default=0)
    commands["train"] = p

    p = sub.add_parser("eval", help="episodic evaluation under clean/corrupt regimes")
    p.add_argument("--model-path", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=_positive_int, default=1000)
    p.add_argument("--support", choices=("clean", "corrupt"), default="clean")
    p.add_argument("--query", choices=("clean", "corrupt"), default="clean")
    p.add_argument("--eval-samples", type=_positive_int, default=200)
    p.add_argument("--ways", type=_positive_int, default=4)
    p.add_argument("--shots", type=_positive_int, default=2)
    p.add_argument("--queries", type=_positive_int, default=5)
    p.add_argument("--occlude-unit", type=int, default=0)
    p.add_argument("--compare-model-path", default=None,
                   help="second model evaluated on identical episodes, with paired statistics")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true",
                   help="assert report invariants and fail loudly on violation")
    commands["eval"] = p

    p = sub.add_parser("sweep", help="uncertainty response to hue noise or leg shrinkage")
    p.add_argument("--model-path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", choices=("hue", "leg"), required=True)
    p.add_argument("--levels", type=_float_list, default=())
    p.add_argument("--samples-per-level", type=_positive_int, default=32)
    p.add_argument("--image-size", type=_positive_int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true",
                   help="assert the sweep's monotonicity/above-baseline invariants")
    commands["sweep"] = p

    p = sub.add_parser("export-embeddings", help="CSV of per-instance embedding parameters")
    p.add_argument("--model-path", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    commands["export-embeddings"] = p

    for name, sp in commands.items():
        sp.add_argument("--config", default=None,
                        help="JSON file of resolved options to use as defaults")
    return parser, commands


def _resolved_config(args):
    skip = {"config", "threads"}
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in sorted(vars(args).items()) if k not in skip}


def _write_resolved_config(args, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved_config.json"
    path.write_text(json.dumps(_resolved_config(args), sort_keys=True, indent=2) + "\n")


def _occlusion_policy(mode, probability, unit, image_side):
    from .corruption import CLEAN, OcclusionPolicy

    if mode == "clean":
        return CLEAN
    return OcclusionPolicy(mode="corrupt", per_unit_probability=probability,
                           unit_size=unit if unit > 0 else image_side)


def _image_side(dataset):
    if dataset.mode != "pixels":
        raise ValueError("occlusion and sweeps need a pixel-mode dataset")
    return dataset.inputs.shape[1]


def cmd_gen_data(args):
    from .dataset import save_dataset
    from .synthetic import SyntheticSpec, generate_dataset

    spec = SyntheticSpec(image_size=args.image_size, noisy_fraction=args.noisy_fraction,
                         noise_coupling=args.noise_coupling)
    mode = "features" if args.feature_mode else "pixels"
    dataset = generate_dataset(spec, args.per_class, args.seed, mode=mode)
    save_dataset(dataset, args.out)
    _write_resolved_config(args, args.out)
    print(f"wrote {len(dataset)} instances ({mode}, seed {args.seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .classify import SamplerConfig
    from .dataset import load_dataset, split_by_instance
    from .encoder import EncoderConfig, init_encoder, save_model
    from .episodes import EpisodeSpec
    from .training import TrainerConfig, fit, write_log_csv

    dataset = load_dataset(args.data)
    if dataset.mode == "pixels":
        _, h, w, c = dataset.inputs.shape
        if h % args.downsample or w % args.downsample:
            raise ValueError(f"downsample {args.downsample} does not divide {h}x{w}")
        input_dim = (h // args.downsample) * (w // args.downsample) * c
    else:
        input_dim = dataset.inputs.shape[1]
        if args.downsample != 1:
            raise ValueError("--downsample applies only to pixel datasets")

    train_set, val_set = split_by_instance(dataset, args.val_fraction, args.seed)
    spec = EpisodeSpec(ways=args.ways, shots=args.shots, queries_per_class=args.queries)
    encoder_config = EncoderConfig(input_dim=input_dim, hidden_dims=args.hidden,
                                   embed_dim=args.dim, downsample=args.downsample)
    model = init_encoder(encoder_config, episode_support_count=args.ways * args.shots,
                         gamma0=args.gamma0, seed=args.seed, kind=args.model)
    occlusion = _occlusion_policy(
        "corrupt" if args.occlude_prob > 0 else "clean",
        args.occlude_prob, args.occlude_unit,
        dataset.inputs.shape[1] if dataset.mode == "pixels" else 0)
    config = TrainerConfig(
        learning_rate=args.learning_rate, halve_every_epochs=args.halve_every,
        patience=args.patience, max_epochs=args.max_epochs,
        sampler=SamplerConfig(args.sampler, args.samples), seed=args.seed,
        gamma0=args.gamma0, episodes_per_epoch=args.episodes_per_epoch,
        val_episodes=args.val_episodes, occlusion=occlusion,
        eval_samples=args.eval_samples)

    model, log = fit(model, train_set, val_set, spec, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model")
    write_log_csv(log, out / "training_log.csv")
    _write_resolved_config(args, out)
    if log:
        best = max(row["val_accuracy"] for row in log)
        print(f"trained {args.model} for {len(log)} epochs; best val_accuracy {best:.4f}")
    else:
        print(f"wrote initial {args.model} model (no training epochs)")
    return EXIT_OK


def cmd_eval(args):
    from .dataset import load_dataset
    from .encoder import load_model
    from .episodes import EpisodeSpec
    from .evaluate import EvalConfig, evaluate, evaluate_paired, write_report

    model = load_model(Path(args.model_path))
    dataset = load_dataset(args.data)
    side = dataset.inputs.shape[1] if dataset.mode == "pixels" else 0
    if (args.support == "corrupt" or args.query == "corrupt") and dataset.mode != "pixels":
        raise ValueError("corrupt regimes require a pixel-mode dataset")
    config = EvalConfig(
        episodes=args.episodes,
        spec=EpisodeSpec(ways=args.ways, shots=args.shots, queries_per_class=args.queries),
        support_policy=_occlusion_policy(args.support, 1.0, args.occlude_unit, side),
        query_policy=_occlusion_policy(args.query, 1.0, args.occlude_unit, side),
        eval_samples=args.eval_samples)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.compare_model_path:
        baseline = load_model(Path(args.compare_model_path))
        report, base_report, deltas, p_value = evaluate_paired(
            model, baseline, dataset, config, seed=args.seed)
        write_report(report, out / "report.txt")
        write_report(base_report, out / "baseline_report.txt")
        paired = [
            f"mean_delta={report.mean_accuracy - base_report.mean_accuracy!r}",
            f"sign_test_p_value={p_value!r}",
            "per_episode_delta=" + ",".join(repr(float(d)) for d in deltas),
        ]
        (out / "paired_report.txt").write_text("\n".join(paired) + "\n")
        print(f"model {report.mean_accuracy:.4f} vs baseline {base_report.mean_accuracy:.4f} "
              f"(sign test p={p_value:.2e})")
    else:
        report = evaluate(model, dataset, config, seed=args.seed)
        write_report(report, out / "report.txt")
        print(f"mean_accuracy {report.mean_accuracy:.4f} "
              f"(std_error {report.std_error:.4f}, {args.support} support / {args.query} query)")
    _write_resolved_config(args, out)

    if args.verify:
        recomputed = float(sum(report.per_episode_accuracy) / len(report.per_episode_accuracy))
        if abs(recomputed - report.mean_accuracy) > 1e-12:
            raise VerificationError("report mean does not equal the per-episode mean")
        if any(not 0.0 <= a <= 1.0 for a in report.per_episode_accuracy):
            raise VerificationError("per-episode accuracy outside [0, 1]")
        print("verify: report invariants hold")
    return EXIT_OK


def cmd_sweep(args):
    from .encoder import load_model
    from .evaluate import uncertainty_sweep
    from .synthetic import SyntheticSpec

    model = load_model(Path(args.model_path))
    spec = SyntheticSpec(image_size=args.image_size)
    rows = uncertainty_sweep(model, spec, args.noise, list(args.levels),
                             samples_per_level=args.samples_per_level, seed=args.seed)
    lines = ["level,var_axis0,var_axis1"]
    for level, v0, v1 in rows:
        lines.append(f"{level!r},{v0!r},{v1!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    _write_resolved_config(args, out.parent)
    print(f"wrote {len(rows)} sweep rows to {out}")

    if args.verify and rows:
        variances = [(r[1], r[2]) for r in rows]
        if args.noise == "hue":
            rise0 = variances[-1][0] - variances[0][0]
            rise1 = variances[-1][1] - variances[0][1]
            aligned = 0 if rise0 >= rise1 else 1
            other = 1 - aligned
            series = [v[aligned] for v in variances]
            if any(b <= a for a, b in zip(series, series[1:])):
                raise VerificationError(
                    f"hue-aligned axis variance not strictly increasing: {series}")
            if not (variances[-1][other] - variances[0][other]) < 0.5 * (
                    variances[-1][aligned] - variances[0][aligned]):
                raise VerificationError("off-axis variance rose by half the aligned rise or more")
        else:
            baseline_rows = [v for r, v in zip(rows, variances) if r[0] == 1.0]
            if baseline_rows:
                base = baseline_rows[0]
                others = [v for r, v in zip(rows, variances) if r[0] != 1.0]
                if any(v[0] <= base[0] or v[1] <= base[1] for v in others):
                    raise VerificationError("leg sweep did not raise both axes above baseline")
        print("verify: sweep invariants hold")
    return EXIT_OK


def cmd_export_embeddings(args):
    from .dataset import load_dataset
    from .encoder import load_model
    from .evaluate import export_embeddings

    model = load_model(Path(args.model_path))
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = export_embeddings(model, dataset, out)
    _write_resolved_config(args, out.parent)
    print(f"exported {count} embedding rows to {out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)

    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=1)
    known, _ = pre.parse_known_args(argv)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(max(1, known.threads)))

    parser, subparsers = build_parser()

    # a --config file supplies defaults for its command; explicit flags win
    config_pre = argparse.ArgumentParser(add_help=False)
    config_pre.add_argument("--config", default=None)
    config_known, _ = config_pre.parse_known_args(argv)
    if config_known.config:
        try:
            stored = json.loads(Path(config_known.config).read_text())
        except OSError as err:
            print(f"error: cannot read config file: {err}", file=sys.stderr)
            return EXIT_IO
        command = stored.pop("command", None)
        defaults = {k: (tuple(v) if isinstance(v, list) else v) for k, v in stored.items()}
        if command in subparsers:
            subparsers[command].set_defaults(**defaults)

    args = parser.parse_args(argv)

    from .autodiff import NonFiniteError
    from .training import TrainingDivergedError

    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (VerificationError, NonFiniteError, TrainingDivergedError,
            ArithmeticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
