"""Command-line entry point: synth | train | eval | baseline | verify | inspect.

Exit codes: 0 success, 1 validation error, 2 runtime failure; failures
also print a machine-readable JSON line on stderr.  All randomness
flows from --seed through named substreams, and every artifact-writing
command drops a config echo so a run can be re-executed exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diffmath as dm
from .candidates import CandidatePool
from .errors import ConfigInvalid, DproxyError, ValidationError
from .ioformats import load_bundle, load_candidates, load_matrix, write_raw
from .metrics import nmi, rand_index, zeroshot_assign
from .report import inspect_run, validate_dataset
from .synth import SynthSpec, generate, spec_from_dict
from .trainer import (
    NON_CLI_FIELDS,
    TrainConfig,
    evaluate,
    features_for_modality,
    train,
)
from .verify import run_all_suites

log = logging.getLogger("dproxy.cli")

_MODALITY_FLAGS = {"text": "text_only", "visual": "visual_only", "both": "both"}


class CliParser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are validation errors, exit 1
        raise ConfigInvalid(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="dproxy", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dproxy {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic bundle")
    p_synth.add_argument("--spec", help="synth spec JSON (defaults apply when omitted)")
    p_synth.add_argument("--seed", type=int, help="override the spec seed")
    p_synth.add_argument("--out", required=True, help="output directory")

    defaults = TrainConfig()
    p_train = sub.add_parser("train", help="train on one concept")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--concept", required=True)
    p_train.add_argument("--epochs", type=int, default=defaults.epochs)
    p_train.add_argument("--update-interval", type=int, default=defaults.update_interval)
    p_train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p_train.add_argument("--lr", type=float, default=defaults.lr)
    p_train.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p_train.add_argument("--tau-alpha", type=float, default=defaults.tau_alpha)
    p_train.add_argument("--sigma", type=float, default=defaults.sigma)
    p_train.add_argument("--heads", type=int, default=defaults.heads,
                         help="attention heads (default 4, or 2 when dim < 8)")
    p_train.add_argument("--layers", type=int, default=defaults.layers)
    p_train.add_argument("--seed", type=int, default=defaults.seed)
    p_train.add_argument("--no-dynamic", action="store_true",
                         help="disable candidate management")
    p_train.add_argument("--no-uconstraints", action="store_true",
                         help="drop the user-constraint loss term")
    p_train.add_argument("--no-cconstraints", action="store_true",
                         help="drop the concept-constraint loss term")
    p_train.add_argument("--fusion", dest="fusion_mode", choices=["gated", "concat"],
                         default=defaults.fusion_mode)
    p_train.add_argument("--modality", choices=sorted(_MODALITY_FLAGS), default="both",
                         help="which features the evaluation clusters")
    p_train.add_argument("--restarts", type=int, default=defaults.restarts,
                         help="k-means restarts per evaluation run")
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a finished run against a perspective")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--perspective", required=True)

    p_base = sub.add_parser("baseline", help="zero-shot nearest-candidate assignment")
    p_base.add_argument("--manifest", required=True)
    p_base.add_argument("--concept", required=True)
    p_base.add_argument("--mode", choices=["gpt", "label"], default="gpt",
                        help="gpt: concept candidate pool; label: class-name embeddings")
    p_base.add_argument("--label-embeddings",
                        help="DPROXYV1 matrix of class-name embeddings (mode=label)")
    p_base.add_argument("--out", help="optional directory for the report JSON")

    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.add_argument("--out", help="optional directory for the verify report")

    p_inspect = sub.add_parser("inspect", help="dump run internals or validate a dataset")
    p_inspect.add_argument("--run", help="run directory to dump")
    p_inspect.add_argument("--validate", metavar="MANIFEST",
                           help="validate a dataset directory or manifest instead")
    p_inspect.add_argument("--out", help="output directory (default: <run>/inspect)")
    p_inspect.add_argument("--no-figures", action="store_true",
                           help="skip PNG rendering, keep CSV/JSON only")
    return parser


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_pool(bundle, concept: str) -> CandidatePool:
    pers = bundle.perspective(concept)
    if pers.candidates_path is None:
        raise ConfigInvalid(f"perspective {concept!r} has no candidate file in the manifest")
    cand = load_candidates(pers.candidates_path, expected_dim=bundle.dim)
    return CandidatePool.from_candidate_file(cand)


def cmd_synth(args) -> int:
    if args.spec:
        spec = spec_from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    out = generate(spec, args.out)
    print(f"wrote {out.manifest_path}")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        update_interval=args.update_interval,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        tau_alpha=args.tau_alpha,
        sigma=args.sigma,
        heads=args.heads,
        layers=args.layers,
        seed=args.seed,
        no_dynamic=args.no_dynamic,
        no_uconstraints=args.no_uconstraints,
        no_cconstraints=args.no_cconstraints,
        fusion_mode=args.fusion_mode,
        modality=_MODALITY_FLAGS[args.modality],
        restarts=args.restarts,
    )


def cmd_train(args) -> int:
    bundle = load_bundle(args.manifest)
    pool = _load_pool(bundle, args.concept)
    cfg = _train_config_from_args(args)

    result = train(bundle, args.concept, pool, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, {
        "command": "train",
        "manifest": str(Path(args.manifest).resolve()),
        "concept": args.concept,
        **cfg.to_dict(),
    })
    (out / "report.json").write_text(json.dumps(result.report.to_dict(), indent=2) + "\n")

    params_dir = out / "params"
    params_dir.mkdir(exist_ok=True)
    index = {}
    for i, (name, tensor) in enumerate(result.store.items()):
        fname = f"p{i:03d}.dpx"
        write_raw(tensor.data, params_dir / fname)
        index[name] = fname
    (params_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")

    for key in ("fused", "text_stream", "visual_stream", "lam", "proxies"):
        write_raw(result.features[key], out / f"{key}.dpx")

    last = result.report.epochs[-1]
    print(f"trained {args.concept}: {cfg.epochs} epochs, "
          f"final total loss {last['loss_total']:.4f}, "
          f"active candidates {len(result.report.final_active_words)}")
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    config = json.loads((run / "config.json").read_text())
    bundle = load_bundle(config["manifest"])
    cfg = TrainConfig(**{
        k: v for k, v in config.items()
        if k in {f.name for f in dataclasses.fields(TrainConfig)}
    })
    features = {
        "fused": None, "text_stream": None, "visual_stream": None,
    }
    from .ioformats import read_raw

    for key in features:
        features[key] = read_raw(run / f"{key}.dpx")
    feats = features_for_modality(features, cfg.modality)

    report = evaluate(feats, bundle, args.perspective, cfg)
    out_path = run / f"eval_{args.perspective}.json"
    out_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    print(f"perspective  NMI(mean+-std)    RI(mean+-std)    runs")
    print(f"{report.perspective:<12} {report.nmi_mean:.4f}+-{report.nmi_std:.4f}  "
          f"{report.ri_mean:.4f}+-{report.ri_std:.4f}  {report.n_runs}")
    print(f"wrote {out_path}")
    return 0


def cmd_baseline(args) -> int:
    bundle = load_bundle(args.manifest)
    pers = bundle.perspective(args.concept)
    if args.mode == "gpt":
        pool = _load_pool(bundle, args.concept)
        cand_matrix = pool.embeddings
        cand_names = pool.words
    else:
        if not args.label_embeddings:
            raise ConfigInvalid("--mode label requires --label-embeddings")
        cand_matrix = load_matrix(args.label_embeddings).data
        cand_names = [f"class_{j}" for j in range(cand_matrix.shape[0])]

    assigned = zeroshot_assign(bundle.visual.data, cand_matrix)
    result = {
        "concept": args.concept,
        "mode": args.mode,
        "n_candidates": len(cand_names),
        "nmi": nmi(assigned, pers.labels),
        "ri": rand_index(assigned, pers.labels),
    }
    print(f"zero-shot {args.mode} baseline on {args.concept}: "
          f"NMI {result['nmi']:.4f}  RI {result['ri']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(out, {"command": "baseline", "manifest": str(Path(args.manifest).resolve()),
                           "concept": args.concept, "mode": args.mode,
                           "label_embeddings": args.label_embeddings})
        (out / f"baseline_{args.concept}_{args.mode}.json").write_text(
            json.dumps(result, indent=2) + "\n")
    return 0


def cmd_verify(args) -> int:
    results = run_all_suites()
    width = max(len(r.name) for r in results)
    print(f"{'suite':<{width}}  status  seconds  detail")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status:<6}  {r.seconds:7.2f}  {r.detail}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.json").write_text(json.dumps(
            [dataclasses.asdict(r) for r in results], indent=2) + "\n")
    return 0 if all(r.passed for r in results) else 2


def cmd_inspect(args) -> int:
    if args.validate:
        summary = validate_dataset(args.validate)
        print(json.dumps(summary, indent=2))
        return 0
    if not args.run:
        raise ConfigInvalid("inspect needs --run or --validate")
    out = inspect_run(args.run, args.out, figures=not args.no_figures)
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "verify": cmd_verify,
    "inspect": cmd_inspect,
}


def _setup_logging() -> None:
    level_name = os.environ.get("DPROXY_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigInvalid(f"DPROXY_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s")
    if level_name == "debug":
        dm.set_debug(True)


def run(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except DproxyError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
