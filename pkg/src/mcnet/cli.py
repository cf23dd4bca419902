"""Command-line entry point: ``mcnet <command> ...`` or ``python -m mcnet``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, selfcheck
from .errors import ConfigError, MCNetError
from .metrics import write_report
from .model import ModelConfig
from .pointcloud import SceneSpec, load_ply, save_ply, synth_scene

log = logging.getLogger("mcnet")


def _write_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(path):
    return ModelConfig.from_json(path).validate()


def _load_data(path, config):
    cloud = load_ply(path, config.num_classes)
    if cloud.num_classes > config.num_classes:
        raise ConfigError(
            f"data has labels up to {cloud.num_classes - 1} but config has "
            f"{config.num_classes} classes"
        )
    return cloud


def cmd_synth(args):
    spec = SceneSpec.from_json(args.spec)
    cloud = synth_scene(spec)
    save_ply(cloud, args.out)
    log.info("wrote %d points (%s) to %s", len(cloud), ", ".join(spec.names), args.out)


def cmd_train(args):
    config = _load_config(args.config)
    cloud = _load_data(args.data, config)
    model = harness.build_model(config)

    def progress(epoch, loss):
        log.info("epoch %d loss %.6f", epoch, loss)

    report = harness.train(model, cloud, config, progress=progress if args.verbose else None)
    harness.save_checkpoint(model, args.out)
    if args.report:
        _write_json(report.to_dict(include_timing=args.timing), args.report)
    log.info("final loss %.6f; checkpoint %s", report.losses[-1] if report.losses else float("nan"),
             args.out)


def cmd_eval(args):
    model = harness.load_checkpoint(args.ckpt)
    cloud = _load_data(args.data, model.config)
    report = harness.evaluate(model, cloud, model.config)
    write_report(report, args.report)
    log.info("OA %.4f mIoU %.4f", report["oa"], report["miou"])


def cmd_infer(args):
    model = harness.load_checkpoint(args.ckpt)
    cloud = _load_data(args.data, model.config)
    pred = harness.predict(model, cloud, model.config)
    save_ply(cloud, args.out, predicted=pred)
    log.info("wrote predictions for %d points to %s", len(cloud), args.out)


def _eval_cloud(args, config):
    return _load_data(args.eval_data, config) if args.eval_data else None


def cmd_ablate(args):
    config = _load_config(args.config)
    cloud = _load_data(args.data, config)
    rows = harness.ablate(cloud, config, _eval_cloud(args, config))
    doc = harness.table_to_json(rows, reference={"miou_percent": harness.REFERENCE_ABLATION_MIOU})
    _write_json(doc, args.out)
    for row in rows:
        log.info("%s mIoU %.4f OA %.4f", row["model"], row["miou"], row["oa"])


def _parse_ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ks must be comma-separated integers, got {text!r}")
    if not ks:
        raise argparse.ArgumentTypeError("--ks is empty")
    return ks


def cmd_ksweep(args):
    config = _load_config(args.config)
    cloud = _load_data(args.data, config)
    rows = harness.ksweep(cloud, config, args.ks, _eval_cloud(args, config))
    reference = {str(k): {"oa": oa, "miou": miou} for k, (oa, miou) in harness.REFERENCE_KSWEEP.items()}
    _write_json(harness.table_to_json(rows, reference={"percent": reference}), args.out)
    for row in rows:
        log.info("K=%d mIoU %.4f OA %.4f", row["k"], row["miou"], row["oa"])


def cmd_gradcheck(args):
    results = selfcheck.run(args.module, seeds=range(args.seeds))
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4} {r.module}.{r.name} seed={r.seed} rel_err={r.error:.2e} (< {r.tolerance:g})")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mcnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled synthetic scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output PLY")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.add_argument("--report", help="optional run report JSON")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labelled cloud")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write per-point predictions into a PLY")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    for name, func, help_text in (
        ("ablate", cmd_ablate, "train and evaluate the five toggle configurations"),
        ("ksweep", cmd_ksweep, "train and evaluate one model per neighborhood size"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--eval-data", help="evaluate on this cloud instead of the training one")
        p.add_argument("--out", required=True)
        if name == "ksweep":
            p.add_argument("--ks", type=_parse_ks, default=[9, 16, 25, 36])
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    p.add_argument("--module", choices=sorted(selfcheck.CHECKS))
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args) or 0
    except (MCNetError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"mcnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
