"""Command-line entry point.

Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .config import RunConfig
from .data import SyntheticSpec, generate_synthetic_dataset, load_lexicons
from .errors import DivergenceError, GroupEmoError, IncompatibleCheckpointError, ValidationError
from .esem import build_emotion_tree

log = logging.getLogger("groupemo")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, skip: Sequence[str] = ()) -> None:
    defaults = cls()
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = getattr(defaults, f.name)
        kind = type(default)
        extra: dict[str, Any] = {}
        if f.name == "precision":
            extra["choices"] = ["f32", "f64"]
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=_bool if kind is bool else kind,
                            default=argparse.SUPPRESS, help=f"(default: {default!r})", **extra)


def _overrides(ns: argparse.Namespace, cls) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in vars(ns).items() if k in names}


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """Config file first, then same-named flags (last wins)."""
    raw = RunConfig().to_dict()
    if getattr(ns, "config", None):
        raw.update(RunConfig.load(ns.config).to_dict())
    raw.update(_overrides(ns, RunConfig))
    return RunConfig.from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="groupemo", description="Group-level emotion recognition harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="write a synthetic separable feature-bundle dataset")
    gen.add_argument("--config", help="run config; supplies dim (hidden), scales and seed")
    _add_dataclass_flags(gen, SyntheticSpec)
    gen.add_argument("--out", default=argparse.SUPPRESS, help="(default: 'data')")

    for name, text in (("train", "train one variant"), ("ablate", "train and evaluate all seven variants"),
                       ("gradcheck", "finite-difference gradient checks at micro scale")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        _add_dataclass_flags(p, RunConfig)
        if name == "train":
            p.add_argument("--resume", help="checkpoint (last.json) to continue from")
        if name == "gradcheck":
            p.add_argument("--max-entries", type=int, default=None,
                           help="entries probed per parameter tensor (default: all)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", help="dataset directory (default: the checkpoint's config)")
    ev.add_argument("--split", default="test", help="(default: 'test')")
    ev.add_argument("--batch-size", type=int, default=None, help="(default: checkpoint config)")
    ev.add_argument("--out", help="write metrics JSON here")

    lex = sub.add_parser("inspect-lexicons", help="print the emotion tree of a lexicon file")
    lex.add_argument("--lexicons", help="lexicon JSON (default: shipped file)")
    lex.add_argument("--d-e", dest="d_e", type=int, default=RunConfig.d_e, help=f"(default: {RunConfig.d_e})")
    return parser


def cmd_gen_data(ns: argparse.Namespace) -> int:
    raw = dataclasses.asdict(SyntheticSpec())
    if ns.config:
        cfg = RunConfig.load(ns.config)
        raw.update(dim=cfg.hidden, scales=cfg.scales, seed=cfg.seed)
    raw.update(_overrides(ns, SyntheticSpec))
    spec = SyntheticSpec(**raw).validate()
    out = Path(getattr(ns, "out", "data"))
    manifest = generate_synthetic_dataset(spec, out)
    print(f"wrote {spec.n_train + spec.n_val + spec.n_test} bundles; manifest {manifest}")
    return 0


def cmd_train(ns: argparse.Namespace) -> int:
    from .harness import train

    cfg = resolve_config(ns)
    result = train(cfg, resume=ns.resume)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"out": str(result.out_dir), "epochs": len(result.log), "final": last, "best": result.best}))
    return 0


def cmd_eval(ns: argparse.Namespace) -> int:
    from .data import load_checkpoint, load_split
    from .harness import evaluate, model_from_checkpoint

    ckpt = load_checkpoint(ns.checkpoint)
    model = model_from_checkpoint(ckpt)
    data = ns.data or model.config.data
    if not data:
        raise ValidationError("eval needs --data (checkpoint config has none)")
    metrics = evaluate(model, load_split(data, ns.split, model.config.hidden, model.config.scales), ns.batch_size)
    doc = json.dumps(metrics.to_dict(), indent=2)
    if ns.out:
        Path(ns.out).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.out).write_text(doc)
    print(doc)
    return 0


def cmd_ablate(ns: argparse.Namespace) -> int:
    from .harness import run_ablation

    cfg = resolve_config(ns)
    rows = run_ablation(cfg)
    print("variant,pos,neu,neg,overall")
    for row in rows:
        print(f"{row['variant']},{row['pos']:.2f},{row['neu']:.2f},{row['neg']:.2f},{row['overall']:.2f}")
    return 0


def cmd_gradcheck(ns: argparse.Namespace) -> int:
    from .gradcheck import grad_check, micro_config

    overrides = _overrides(ns, RunConfig)
    if ns.config:
        base = RunConfig.load(ns.config).to_dict()
        base.update(overrides)
        cfg = RunConfig.from_dict(base)
    else:
        cfg = micro_config(**overrides)
    report = grad_check(cfg, max_entries=ns.max_entries)
    for result in report.results:
        print(result.line())
    print(f"{'PASS' if report.passed else 'FAIL'}  {len(report.results)} checks in {report.seconds:.1f}s")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps(report.to_dict(), indent=2))
    return 0 if report.passed else 2


def cmd_inspect_lexicons(ns: argparse.Namespace) -> int:
    tree = build_emotion_tree(load_lexicons(ns.lexicons, dim=ns.d_e))
    print(tree.render())
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "inspect-lexicons": cmd_inspect_lexicons}


def main(argv: Sequence[str] | None = None) -> int:
    level = LOG_LEVELS.get(os.environ.get("GAN_LOG_LEVEL", "info").lower(), logging.INFO)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(level)
    try:
        ns = build_parser().parse_args(argv)
        return COMMANDS[ns.command](ns)
    except (ValidationError, IncompatibleCheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, OSError, GroupEmoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
