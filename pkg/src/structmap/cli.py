"""``structmap`` command line: data generation, training, matching and evaluation.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import matcher, synth
from .ir import RelGraph, RelGraphError, graph_from_dict, mapping_to_dict, parse_sexpr, to_dot

log = logging.getLogger("structmap")


class UsageError(Exception):
    """Bad arguments discovered after parsing."""


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    return tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)


def read_graph(path: str) -> RelGraph:
    """A graph from an s-expression file, or from json when the suffix is ``.json``."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        return graph_from_dict(json.loads(text))
    return parse_sexpr(text)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text, encoding="utf-8")


def _mapping_output(m, gB: RelGraph, gT: RelGraph, fmt: str, extra: dict | None = None) -> str:
    if fmt == "dot":
        return to_dot(gB, gT, m)
    from .smt import candidate_inferences, project_inference, render_term
    d = mapping_to_dict(m)
    # a network may select nodes without structural support; those have no projection
    supported = candidate_inferences(gB, m.correspondences)
    d["inference_terms"] = {str(i): render_term(project_inference(gB, gT, m, i), gT) if i in supported else None
                            for i in sorted(m.inferences)}
    d.update(extra or {})
    return json.dumps(d, indent=2, sort_keys=True)


def _gen_params(args) -> synth.GenParams:
    cfg = _read_config(args.params)
    cfg = cfg.get("generator", cfg)
    defaults = synth.desk_params().to_dict() if args.preset == "desk" else {}
    return synth.GenParams.from_dict({**defaults, **cfg})


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    params = _gen_params(args)
    synth.write_dataset(args.out, args.n, params, args.seed)
    log.info("wrote %d examples to %s", args.n, args.out)
    return 0


def _model_config(args):
    from .amn import AmnConfig
    d = _read_config(args.config)
    d = dict(d.get("model", d))
    for key, value in (("views", args.batch), ("lam", args.lam), ("lr", args.lr), ("seed", args.seed)):
        if value is not None:
            d[key] = value
    if args.ablate:
        d["ablate"] = sorted(set(d.get("ablate", [])) | set(args.ablate))
    return AmnConfig.from_dict(d)


def cmd_train(args) -> int:
    from .amn import AMN, Trainer
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    examples = list(synth.read_dataset(args.data))
    if not examples:
        raise ValueError(f"{args.data}: no training examples")
    cfg = _model_config(args)
    model = AMN.load(args.resume) if args.resume else AMN(cfg)
    trainer = Trainer(model, seed=cfg.seed)
    start = time.time()

    def progress(k: int, stats) -> None:
        if args.log_every and (k + 1) % args.log_every == 0:
            lc = np.mean(trainer.log.loss_corr[-args.log_every:])
            li = np.mean(trainer.log.loss_ci[-args.log_every:])
            log.info("step %d  loss_corr %.4f  loss_ci %.4f  %.0fs", k + 1, lc, li, time.time() - start)

    trainer.fit(examples, args.steps, progress)
    model.save(args.ckpt, {"train": {"steps": trainer.log.steps, "data": str(args.data),
                                     "coverage": trainer.log.coverage}})
    log.info("saved %s (coverage %.4f)", args.ckpt, trainer.log.coverage)
    return 0


def cmd_match(args) -> int:
    from .amn import AMN, sem_select
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    model = AMN.load(args.ckpt)
    gB, gT = read_graph(args.base), read_graph(args.target)
    m = sem_select(gB, gT, model, args.runs, np.random.default_rng(args.seed))
    _write(_mapping_output(m, gB, gT, args.format, {"runs": args.runs}), args.out)
    return 0


def cmd_oracle(args) -> int:
    gB, gT = read_graph(args.base), read_graph(args.target)
    m = matcher.solve_exact(gB, gT) if args.mode == "exact" else matcher.solve_greedy(gB, gT)
    _write(_mapping_output(m, gB, gT, args.format, {"mode": args.mode}), args.out)
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate, model_predictor
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if (args.ckpt is None) == (not args.oracle_only):
        raise UsageError("give exactly one of --ckpt and --oracle-only")
    data = list(synth.read_dataset(args.data))
    if args.limit is not None:
        data = data[:args.limit]
    if args.oracle_only:
        predict = lambda gB, gT, i: matcher.solve_exact(gB, gT)
    else:
        from .amn import AMN
        predict = model_predictor(AMN.load(args.ckpt), args.runs, args.seed)
    report = evaluate(predict, data, args.runs, args.comparison, oracle=matcher.solve_exact)
    report.extra.update({"data": str(args.data), "ckpt": args.ckpt, "seed": args.seed})
    log.info("%s", report.summary())
    _write(json.dumps(report.to_dict(), indent=2, sort_keys=True), args.report)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradchecks import TOLERANCE, run_all
    results = run_all(args.seed, include_model=not args.primitives_only)
    ok = True
    for name, err in results.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<18} {err:.2e}")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    from .amn import ABLATIONS
    parser = argparse.ArgumentParser(prog="structmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset (json lines)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="generator settings (toml or json)")
    p.add_argument("--preset", choices=("desk", "full"), default="desk",
                   help="defaults the settings file overrides (default: desk)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a matching network")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch", type=int, help="re-encodings per example (default 8)")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the inference loss (default 0.1)")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="model settings (toml or json)")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--log-every", type=int, default=250)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="match two graphs with a trained network")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--runs", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("oracle", help="match two graphs with the symbolic solver")
    p.add_argument("--base", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mode", choices=("exact", "greedy"), default="exact")
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("eval", help="score predictions on a dataset")
    p.add_argument("--ckpt")
    p.add_argument("--oracle-only", action="store_true", help="score the exact solver instead of a network")
    p.add_argument("--data", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--comparison", choices=("gold", "oracle"), default="gold")
    p.add_argument("--limit", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every primitive and the model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--primitives-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RelGraphError, matcher.BudgetExceeded) as e:
        print(f"structmap: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
