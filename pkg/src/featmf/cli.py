"""Command line: ``featmf train|predict|evaluate|gen-synthetic|bench``.

Options may also come from a flat ``key = value`` file given with ``--config``;
explicit flags win over the file, the file wins over built-in defaults.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import run_bench
from .loss import DegenerateCurvatureError, Hyperparameters, LossKind
from .metrics import average_precision_at_k, map_at_k, precision_at_k, rank_queries, rmse
from .model import compute_latents, init_model, load_model, objective, predict_pairs, save_model
from .sparse import DataError, ParseError, _parse_id, load_feature_file, load_observations
from .synthetic import SyntheticSpec, generate, write_dataset
from .train import ALGORITHMS, NumericalError, Trainer, test_metric, train_loss

__all__ = ["main", "build_parser", "read_config"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        values = [int(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("thread counts must be >= 1")
    return values


def _name_list(text):
    names = [t for t in str(text).replace(",", " ").split()]
    bad = [t for t in names if t not in ALGORITHMS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown algorithm(s) {bad}; expected {', '.join(ALGORITHMS)}")
    return names


def _flag(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# dest -> default for each subcommand; None marks "no default"
_TRAIN = {
    "algorithm": "efficient", "loss": "square", "dim": 64, "lam": 1.0, "alpha": 0.1, "epochs": 10,
    "threads": 1, "block_size": 500, "lr": 0.01, "seed": 0, "X": None, "Z": None, "train": None,
    "test": None, "model_out": "model.txt", "metrics_out": None, "k": 10,
    "n_features": None, "n_target_features": None,
}
_PREDICT = {"model": None, "X": None, "Z": None, "pairs": None, "out": None, "threads": 1}
_EVALUATE = {"model": None, "X": None, "Z": None, "test": None, "k": 10, "rank_all": False, "out": None}
_SYNTH = {
    "q": 200, "p": 200, "n": 300, "m": 300, "nnz": 5, "target_nnz": None, "n_obs": 5000,
    "loss": "square", "noise": 0.0, "seed": 0, "rank": 8, "test_fraction": 0.0, "out": None,
}
_BENCH = {
    "algorithms": ["efficient", "pl2m", "hogwild"], "threads": [1, 2, 4], "epochs": 3, "loss": "square",
    "dim": 16, "lam": 1.0, "alpha": 0.1, "block_size": 500, "lr": 0.005, "seed": 0,
    "X": None, "Z": None, "train": None, "q": 20000, "p": 20000, "n": 20000, "m": 20000, "nnz": 10,
    "n_obs": 1_000_000, "out": None, "warmup": True,
}
DEFAULTS = {"train": _TRAIN, "predict": _PREDICT, "evaluate": _EVALUATE, "gen-synthetic": _SYNTH, "bench": _BENCH}
REQUIRED = {
    "train": ("X", "Z", "train"),
    "predict": ("model", "X", "Z", "pairs"),
    "evaluate": ("model", "X", "Z", "test"),
    "gen-synthetic": ("out",),
    "bench": (),
}


def _add(p, *names, **kw):
    p.add_argument(*names, default=argparse.SUPPRESS, **kw)


def _hyper_args(p):
    _add(p, "--loss", choices=[k.value for k in LossKind])
    _add(p, "--dim", type=int, help="latent dimension d")
    _add(p, "--lambda", dest="lam", type=float, help="l2 weight")
    _add(p, "--alpha", type=float, help="l1 weight")
    _add(p, "--block-size", type=int, help="features per parallel block (pl2m)")
    _add(p, "--lr", type=float, help="learning rate (hogwild)")
    _add(p, "--seed", type=int)


def _feature_args(p):
    _add(p, "--X", "--query-features", dest="X", help="query feature file")
    _add(p, "--Z", "--target-features", dest="Z", help="target feature file")


def _synth_args(p):
    for name in ("q", "p", "n", "m", "nnz"):
        _add(p, f"--{name}", type=int)
    _add(p, "--n-obs", type=int, help="number of observed pairs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="featmf", description="Feature-based matrix factorization.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--config", help="flat 'key = value' option file")
    _add(p, "--algorithm", choices=ALGORITHMS)
    _hyper_args(p)
    _add(p, "--epochs", type=int)
    _add(p, "--threads", type=int)
    _feature_args(p)
    _add(p, "--train", help="training observations")
    _add(p, "--test", help="held-out observations for the per-epoch test metric")
    _add(p, "--model-out")
    _add(p, "--metrics-out", help="JSON-lines metrics file (default stdout)")
    _add(p, "--k", type=int, help="cutoff of MAP@K for logistic test metrics")
    _add(p, "--n-features", type=int)
    _add(p, "--n-target-features", type=int)

    p = sub.add_parser("predict", help="score query/target pairs")
    p.add_argument("--config")
    _add(p, "--model")
    _feature_args(p)
    _add(p, "--pairs", help="file of '<i> <j>' lines")
    _add(p, "--out")
    _add(p, "--threads", type=int)

    p = sub.add_parser("evaluate", help="RMSE or ranking metrics on held-out pairs")
    p.add_argument("--config")
    _add(p, "--model")
    _feature_args(p)
    _add(p, "--test")
    _add(p, "--k", type=int)
    _add(p, "--rank-all", action="store_true", help="rank every target for each test query")
    _add(p, "--out")

    p = sub.add_parser("gen-synthetic", help="write a planted-model dataset")
    p.add_argument("--config")
    _synth_args(p)
    _add(p, "--target-nnz", type=int)
    _add(p, "--loss", choices=[k.value for k in LossKind])
    _add(p, "--noise", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--rank", type=int)
    _add(p, "--test-fraction", type=float)
    _add(p, "--out", help="output directory")

    p = sub.add_parser("bench", help="time algorithms across thread counts")
    p.add_argument("--config")
    _add(p, "--algorithms", type=_name_list)
    _add(p, "--threads", type=_int_list)
    _add(p, "--epochs", type=int)
    _hyper_args(p)
    _feature_args(p)
    _add(p, "--train")
    _synth_args(p)
    _add(p, "--out", help="JSON report path (default stdout)")
    _add(p, "--no-warmup", dest="warmup", action="store_false")
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}, line {lineno}: expected 'key = value'")
            out[key.strip()] = value.strip()
    return out


def _converters(parser, command):
    """Map every accepted config key to ``(dest, type, choices)``."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    conv = {}
    for action in sub._actions:
        if action.dest in ("help", "config"):
            continue
        if isinstance(action, argparse._StoreTrueAction):
            typ = opt_typ = _flag
        elif isinstance(action, argparse._StoreFalseAction):
            # "no_warmup = true" means warmup off; "warmup = false" too
            typ, opt_typ = _flag, lambda text: not _flag(text)
        else:
            typ = opt_typ = action.type or str
        for opt in action.option_strings:
            conv[opt.lstrip("-").replace("-", "_")] = (action.dest, opt_typ, action.choices)
        conv.setdefault(action.dest, (action.dest, typ, action.choices))
    return conv


def _resolve(parser, args) -> dict:
    command = args.command
    settings = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        conv = _converters(parser, command)
        for key, text in read_config(args.config).items():
            name = key.replace("-", "_")
            if name not in conv:
                raise UsageError(f"{args.config}: unknown option '{key}' for {command}")
            dest, typ, choices = conv[name]
            try:
                value = typ(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for '{key}': {exc}") from None
            if choices is not None and value not in choices:
                raise UsageError(f"{args.config}: '{key}' must be one of {', '.join(map(str, choices))}")
            settings[dest] = value
    settings.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})
    missing = [k for k in REQUIRED[command] if settings.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return settings


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _json(value):
    return None if value is None or not np.isfinite(value) else float(value)


def cmd_train(cfg) -> int:
    if cfg["epochs"] < 0:
        raise UsageError("--epochs must be >= 0")
    hyper = Hyperparameters(alpha=cfg["alpha"], lam=cfg["lam"], dim=cfg["dim"])
    X = load_feature_file(cfg["X"], n_features=cfg["n_features"])
    Z = load_feature_file(cfg["Z"], n_features=cfg["n_target_features"])
    train = load_observations(cfg["train"], X.n_instances, Z.n_instances)
    test = load_observations(cfg["test"], X.n_instances, Z.n_instances) if cfg["test"] else None
    model = init_model((hyper.dim, X.n_features, Z.n_features), hyper, cfg["loss"], cfg["seed"])
    if test is not None:
        test.check_labels(model.loss)
    trainer = Trainer(
        cfg["algorithm"], model, X, Z, train, threads=cfg["threads"], block_size=cfg["block_size"],
        lr=cfg["lr"], seed=cfg["seed"],
    )
    fh, close = _open_out(cfg["metrics_out"])
    try:
        for e in range(cfg["epochs"]):
            report = trainer.epoch(e)
            obj = objective(model, X, Z, train)
            if not np.isfinite(obj):
                raise NumericalError(f"non-finite objective after epoch {e}")
            line = {
                "epoch": e,
                "objective": obj,
                "train_loss": train_loss(model, X, Z, train),
                "test_metric": _json(test_metric(model, X, Z, test, cfg["k"])),
                "seconds": report.seconds,
            }
            fh.write(json.dumps(line) + "\n")
            fh.flush()
    finally:
        if close:
            fh.close()
    save_model(model, cfg["model_out"])
    return EXIT_OK


def load_pairs(path, n_queries, n_targets):
    """``<i> <j>`` lines (a trailing value column is ignored)."""
    path = Path(path)
    qi, tj = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) not in (2, 3):
                raise ParseError("expected '<query> <target>'", path, lineno)
            i = _parse_id(tokens[0], path, lineno, "query id")
            j = _parse_id(tokens[1], path, lineno, "target id")
            if i >= n_queries or j >= n_targets:
                raise ParseError(f"id out of range ({i}, {j}) for ({n_queries}, {n_targets})", path, lineno)
            qi.append(i)
            tj.append(j)
    return np.array(qi, dtype=np.int64), np.array(tj, dtype=np.int64)


def _model_and_features(cfg):
    model = load_model(cfg["model"])
    X = load_feature_file(cfg["X"], n_features=model.P.shape[1])
    Z = load_feature_file(cfg["Z"], n_features=model.Q.shape[1])
    return model, X, Z


def cmd_predict(cfg) -> int:
    model, X, Z = _model_and_features(cfg)
    qi, tj = load_pairs(cfg["pairs"], X.n_instances, Z.n_instances)
    U = compute_latents(model.P, X, cfg["threads"])
    V = compute_latents(model.Q, Z, cfg["threads"])
    scores = predict_pairs(U, V, qi, tj, cfg["threads"])
    fh, close = _open_out(cfg["out"])
    try:
        for i, j, s in zip(qi, tj, scores):
            fh.write(f"{int(i)} {int(j)} {float(s)!r}\n")
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    model, X, Z = _model_and_features(cfg)
    test = load_observations(cfg["test"], X.n_instances, Z.n_instances)
    if len(test) == 0:
        raise DataError(f"{cfg['test']}: no observations")
    U = compute_latents(model.P, X)
    V = compute_latents(model.Q, Z)
    K = cfg["k"]
    if model.loss is LossKind.SQUARE:
        result = {"rmse": rmse(predict_pairs(U, V, test.queries, test.targets), test.values)}
    else:
        test.check_labels(model.loss)
        if cfg["rank_all"]:
            qs = np.unique(test.queries)
            qi = np.repeat(qs, Z.n_instances)
            tj = np.tile(np.arange(Z.n_instances), qs.size)
            labels = np.zeros(qi.size)
            labels[np.searchsorted(qs, test.queries) * Z.n_instances + test.targets] = test.values
        else:
            qi, tj, labels = test.queries, test.targets, test.values
        results = [r for r in rank_queries(qi, tj, predict_pairs(U, V, qi, tj), labels) if r.relevant]
        if not results:
            raise DataError(f"{cfg['test']}: no query has a positive label")
        result = {
            "map": float(np.mean([average_precision_at_k(r, r.targets.size) for r in results])),
            "p_at_1": float(np.mean([precision_at_k(r, 1) for r in results])),
            "p_at_3": float(np.mean([precision_at_k(r, 3) for r in results])),
            "map_at_k": map_at_k(results, K),
            "k": K,
            "n_queries": len(results),
        }
    fh, close = _open_out(cfg["out"])
    try:
        fh.write(json.dumps(result) + "\n")
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_gen_synthetic(cfg) -> int:
    try:
        spec = SyntheticSpec(
            q=cfg["q"], p=cfg["p"], n=cfg["n"], m=cfg["m"], nnz=cfg["nnz"], n_obs=cfg["n_obs"],
            loss=cfg["loss"], noise=cfg["noise"], seed=cfg["seed"], rank=cfg["rank"],
            test_fraction=cfg["test_fraction"], target_nnz=cfg["target_nnz"],
        )
    except ValueError as exc:
        raise UsageError(f"gen-synthetic: {exc}") from None
    paths = write_dataset(generate(spec), cfg["out"])
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def cmd_bench(cfg) -> int:
    hyper = Hyperparameters(alpha=cfg["alpha"], lam=cfg["lam"], dim=cfg["dim"])
    given = [cfg[k] is not None for k in ("X", "Z", "train")]
    if any(given) and not all(given):
        raise UsageError("bench: --X, --Z and --train must be given together")
    if all(given):
        X = load_feature_file(cfg["X"])
        Z = load_feature_file(cfg["Z"])
        obs = load_observations(cfg["train"], X.n_instances, Z.n_instances)
    else:
        try:
            spec = SyntheticSpec(
                q=cfg["q"], p=cfg["p"], n=cfg["n"], m=cfg["m"], nnz=cfg["nnz"], n_obs=cfg["n_obs"],
                loss=cfg["loss"], seed=cfg["seed"],
            )
        except ValueError as exc:
            raise UsageError(f"bench: {exc}") from None
        data = generate(spec)
        X, Z, obs = data.X, data.Z, data.train
    report = run_bench(
        X, Z, obs, cfg["algorithms"], cfg["threads"], cfg["epochs"], hyper, cfg["loss"],
        block_size=cfg["block_size"], lr=cfg["lr"], seed=cfg["seed"], warmup=cfg["warmup"],
    )
    fh, close = _open_out(cfg["out"])
    try:
        fh.write(json.dumps(report, indent=2) + "\n")
    finally:
        if close:
            fh.close()
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gen-synthetic": cmd_gen_synthetic,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(parser, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateCurvatureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
