"""Command-line entry point.

Subcommands: train, eval, predict, gen-synthetic, gradcheck, prompt, export.
Exit codes: 0 success, 1 usage, 2 data/config/format, 3 numeric failure.
Option precedence: explicit flags > config file > built-in defaults; the
effective configuration is echoed at startup for reproducibility.
"""

from __future__ import annotations

import argparse
import difflib
import os
import sys
from dataclasses import fields

import numpy as np

from . import evaluate as E
from . import model as M
from . import tensor as T
from . import train as TR
from .data import (SyntheticSpec, build_prompt, gen_synthetic, read_jsonl,
                   train_test_split, write_jsonl)
from .errors import (DataError, NumericError, SentiformerError, UsageError)
from .model import ModelConfig
from .tensor import Tensor
from .train import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# config-file keys -> (which dataclass, field name, parser)
_ABLATION_NAMES = {
    "no-vision": "no_vision",
    "no-caption": "no_caption",
    "no-prompt": "no_prompt",
    "mlp-unified": "mlp_unified",
    "mlp-adaptive": "mlp_adaptive",
    "mlp-fusion": "mlp_fusion",
}

_MODEL_KEYS = {
    "d_e": int, "d_h": int, "d_k": int, "d_s": int, "classes": int,
    "depth_n": int, "depth_m": int, "heads_self": int, "heads_cross": int,
}
_TRAIN_KEYS = {
    "learning_rate": float, "batch_size": int, "epochs": int,
    "weight_decay": float, "seed": int, "adam_beta1": float,
    "adam_beta2": float, "adam_eps": float, "init_std": float,
    "init_trunc": float, "save_interval": int,
}
_MODEL_FIELD = {"classes": "n_classes", "depth_n": "depth_adaptive", "depth_m": "depth_fusion"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            options = list(self._option_string_actions)
            for action in self._actions:
                if isinstance(action, argparse._SubParsersAction):
                    for sub in action.choices.values():
                        options.extend(sub._option_string_actions)
            for tok in message.split():
                if tok.startswith("--"):
                    close = difflib.get_close_matches(tok.rstrip(","), options, n=1)
                    if close:
                        message += f" (did you mean {close[0]!r}?)"
                    break
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_config_file(path) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return values


def _parse_ablation_names(names) -> set:
    flags = set()
    for name in names:
        if name not in _ABLATION_NAMES:
            raise UsageError(
                f"unknown ablation {name!r}; valid: {', '.join(sorted(_ABLATION_NAMES))}"
            )
        flags.add(_ABLATION_NAMES[name])
    return flags


def _build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Merge defaults, config file, and explicit flags (in rising precedence)."""
    model_cfg = ModelConfig()
    train_cfg = TrainConfig()
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if key in _MODEL_KEYS:
            setattr(model_cfg, _MODEL_FIELD.get(key, key), _MODEL_KEYS[key](raw))
        elif key in _TRAIN_KEYS:
            setattr(train_cfg, key, _TRAIN_KEYS[key](raw))
        elif key == "ablation":
            names = [n.strip() for n in raw.split(",") if n.strip()]
            model_cfg.ablation |= _parse_ablation_names(names)
        else:
            raise UsageError(f"unknown config key {key!r}")
    if getattr(args, "seed", None) is not None:
        train_cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        train_cfg.epochs = args.epochs
    if getattr(args, "depth_n", None) is not None:
        model_cfg.depth_adaptive = args.depth_n
    if getattr(args, "depth_m", None) is not None:
        model_cfg.depth_fusion = args.depth_m
    if getattr(args, "ablation", None):
        model_cfg.ablation |= _parse_ablation_names(args.ablation)
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg


def _echo_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    doc = model_cfg.to_dict()
    doc["ablation"] = ",".join(doc["ablation"]) or "none"
    for key in sorted(doc):
        print(f"config {key}={doc[key]}")
    for f in fields(train_cfg):
        print(f"config {f.name}={getattr(train_cfg, f.name)}")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    _echo_config(model_cfg, train_cfg)
    dataset = read_jsonl(args.data)
    eval_dataset = read_jsonl(args.eval_data) if args.eval_data else None
    os.makedirs(args.out, exist_ok=True)
    _, metrics = TR.train(dataset, model_cfg, train_cfg, eval_dataset=eval_dataset,
                          out_dir=args.out, log=print)
    from .report import save_training_curves

    save_training_curves(metrics, os.path.join(args.out, "training_curves.png"))
    print(f"checkpoint written to {os.path.join(args.out, 'model.ckpt')}")
    return EXIT_OK


def _load_model_for_data(model_path, dataset):
    params, cfg = TR.load_checkpoint(model_path)
    labels = [r.label for r in dataset]
    if labels and max(labels) >= cfg.n_classes:
        from .errors import ConfigMismatchError

        raise ConfigMismatchError(
            f"checkpoint has L={cfg.n_classes} classes but data implies L={max(labels) + 1}"
        )
    if dataset and len(dataset[0].e_v) != cfg.d_e:
        from .errors import ConfigMismatchError

        raise ConfigMismatchError(
            f"checkpoint has d_e={cfg.d_e} but data vectors have length {len(dataset[0].e_v)}"
        )
    return params, cfg


def _cmd_eval(args) -> int:
    dataset = read_jsonl(args.data)
    params, cfg = _load_model_for_data(args.model, dataset)
    report = E.evaluate(params, dataset, cfg)
    print(report.format())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.format() + "\n")
        from .report import save_confusion_matrix

        save_confusion_matrix(report.confusion, os.path.join(args.out, "confusion.png"))
    return EXIT_OK


def _cmd_predict(args) -> int:
    import json

    dataset = read_jsonl(args.data)
    params, cfg = _load_model_for_data(args.model, dataset)
    probs = E.predict(params, dataset, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec, row in zip(dataset, probs):
            fh.write(json.dumps({"id": rec.id, "probs": [float(x) for x in row]}) + "\n")
    print(f"wrote {len(dataset)} predictions to {args.out}")
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        classes=args.classes,
        per_class=args.per_class,
        d_e=args.d_e,
        separation=args.separation,
        noise_std=args.noise_std,
        informative_streams=set(s.strip() for s in args.informative.split(",") if s.strip()),
        seed=args.seed,
    )
    records = gen_synthetic(spec)
    if args.test_fraction:
        train_set, test_set = train_test_split(records, args.test_fraction, spec.seed)
        base, ext = os.path.splitext(args.out)
        write_jsonl(train_set, base + "-train" + ext)
        write_jsonl(test_set, base + "-test" + ext)
        print(f"wrote {len(train_set)} train / {len(test_set)} test records")
    else:
        write_jsonl(records, args.out)
        print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    heads_self, rem_k = divmod(args.dh, args.dk)
    heads_cross, rem_s = divmod(args.dh, args.ds)
    if rem_k or rem_s:
        raise UsageError("dh must be divisible by both dk and ds")
    cfg = ModelConfig(
        d_e=args.de, d_h=args.dh, d_k=args.dk, d_s=args.ds,
        n_classes=args.classes, depth_adaptive=args.depth_n,
        depth_fusion=args.depth_m, heads_self=heads_self, heads_cross=heads_cross,
        ablation=_parse_ablation_names(args.ablation or []),
    ).validate()
    train_cfg = TrainConfig(seed=args.seed)
    if args.corrupt_backward:
        T.set_backward_corruption(1.5)
    try:
        params = TR.init_params(cfg, train_cfg, dtype=T.DOUBLE)
        rng = np.random.default_rng(train_cfg.seed + 1)
        ev = rng.standard_normal((args.batch, cfg.d_e))
        ec = rng.standard_normal((args.batch, cfg.d_e))
        ep = rng.standard_normal((args.batch, cfg.d_e))
        labels = rng.integers(0, cfg.n_classes, size=args.batch)

        def objective(_params):
            logits, _ = M.forward_parts(Tensor(ev), Tensor(ec), Tensor(ep), params, cfg)
            return M.cross_entropy_from_logits(logits, labels)

        err = T.finite_diff_check(objective, params.tensors(), h=args.h)
    finally:
        T.set_backward_corruption(1.0)
    print(f"max relative error: {err:.3e} over {params.n_params()} coordinates")
    if err < args.tolerance:
        print("gradcheck PASS")
        return EXIT_OK
    print("gradcheck FAIL")
    return EXIT_NUMERIC


def _cmd_prompt(args) -> int:
    objects = [o.strip() for o in args.objects.split(",") if o.strip()]
    print(build_prompt(args.scene, objects))
    return EXIT_OK


def _cmd_export(args) -> int:
    dataset = read_jsonl(args.data)
    params, cfg = _load_model_for_data(args.model, dataset)
    E.export_embeddings(params, dataset, cfg, args.stage, args.out)
    print(f"wrote {len(dataset)} {args.stage}-stage embeddings to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sentiformer", description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a JSONL feature dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="training JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval-data", default=None, help="held-out JSONL for per-epoch metrics")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 200)")
    p.add_argument("--depth-n", type=int, default=None, help="adaptive-learning depth (default 4)")
    p.add_argument("--depth-m", type=int, default=None, help="fusion depth (default 6)")
    p.add_argument("--ablation", action="append", default=None, metavar="FLAG",
                   help="repeatable; one of " + ", ".join(sorted(_ABLATION_NAMES)))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="directory for report.txt and confusion.png")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write per-sample class distributions as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic cluster dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=125)
    p.add_argument("--d-e", type=int, default=512)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--informative", default="v,c,p", help="comma subset of v,c,p")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.0,
                   help="if set, write -train/-test files split at this fraction")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model loss",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dh", type=int, default=8)
    p.add_argument("--dk", type=int, default=4)
    p.add_argument("--ds", type=int, default=4)
    p.add_argument("--de", type=int, default=16)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--depth-n", type=int, default=2)
    p.add_argument("--depth-m", type=int, default=2)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--ablation", action="append", default=None, metavar="FLAG")
    p.add_argument("--corrupt-backward", action="store_true",
                   help="test hook: inject a wrong backward rule (check must fail)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("prompt", help="print the metadata prompt for scene and object tags")
    p.add_argument("--scene", required=True)
    p.add_argument("--objects", required=True, help="comma-separated object tags")
    p.set_defaults(func=_cmd_prompt)

    p = sub.add_parser("export", help="export pre/post embeddings as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage", choices=["pre", "post"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SentiformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
