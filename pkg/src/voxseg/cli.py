"""Command-line entry point: synth | pretrain | advtrain | predict | eval | gradcheck.

Exit codes: 0 success, 1 check/assertion failure, 2 usage or input error,
3 numeric divergence.  Every subcommand is deterministic in its flags and
inputs, so re-running overwrites outputs with identical bytes (training log
wall-clock columns excepted).

Prediction accepts volumes whose extents are not divisible by the network's
downsampling factor: the input is zero-padded at the trailing edges to the
next multiple and the output cropped back, so emitted maps always match the
input extents.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .checkpoint import load_checkpoint
from .errors import ContractViolation, FormatError, NumericDivergence, UndefinedMetric
from .generator import Generator
from .metrics import binarize, cohort_report, evaluate_case, format_report
from .phantoms import make_training_case, sample_params
from .tensor import Tensor, no_grad
from .train import (
    TrainConfig,
    adversarial_train,
    parse_config,
    pretrain_generator,
    render_config,
    write_log,
)
from .volume import VolumeGrid, read_volume, write_volume

MANIFEST_NAME = "manifest.tsv"


def _require(args, names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ContractViolation(f"missing required flags: {', '.join(missing)}")


def run_synth(args):
    if args.count < 0:
        raise ContractViolation(f"--count must be non-negative, got {args.count}")
    if args.size < 1:
        raise ContractViolation(f"--size must be positive, got {args.size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(args.count):
        case = f"case_{i:04d}"
        image, label = make_training_case(
            seed=args.seed, case_index=i, size=args.size, target_spacing_mm=args.spacing
        )
        image_name = f"{case}_image.vxsg"
        label_name = f"{case}_label.vxsg"
        write_volume(image, out / image_name)
        write_volume(label, out / label_name)
        rows.append((case, image_name, label_name, sample_params(args.seed, i).seed))
    with open(out / MANIFEST_NAME, "w") as f:
        f.write("case\timage\tlabel\tseed\n")
        for row in rows:
            f.write("\t".join(str(c) for c in row) + "\n")
    print(f"wrote {args.count} cases to {out}")
    return 0


def _load_dataset(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ContractViolation(f"data directory {data_dir} does not exist")
    pairs = []
    for image_path in sorted(data_dir.glob("*_image.vxsg")):
        label_path = image_path.with_name(image_path.name.replace("_image.", "_label."))
        if not label_path.exists():
            raise ContractViolation(f"no label volume for {image_path.name}")
        pairs.append((read_volume(image_path), read_volume(label_path)))
    if not pairs:
        raise ContractViolation(f"no *_image.vxsg cases found in {data_dir}")
    return pairs


def _load_config(args):
    if args.config is None:
        return TrainConfig()
    text = Path(args.config).read_text()
    return parse_config(text)


def run_pretrain(args):
    config = _load_config(args)
    if args.show_config:
        print(render_config(config), end="")
        return 0
    _require(args, ["config", "data", "out"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(args.data)
    _, records = pretrain_generator(config, dataset, out)
    write_log(records, out / "pretrain.log")
    if records:
        print(f"pretrain finished: {len(records)} steps, final loss {records[-1].loss:.6f}")
    else:
        print("pretrain finished: 0 steps (initialization checkpoint written)")
    return 0


def run_advtrain(args):
    config = _load_config(args)
    if args.show_config:
        print(render_config(config), end="")
        return 0
    _require(args, ["config", "data", "out", "init"])
    init = Path(args.init)
    if not init.exists():
        raise ContractViolation(f"initial generator checkpoint {init} does not exist")
    gen = load_checkpoint(init)
    if not isinstance(gen, Generator):
        raise ContractViolation(f"{init} is not a generator checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(args.data)
    _, _, records = adversarial_train(config, gen, dataset, out)
    write_log(records, out / "advtrain.log")
    d_steps = sum(1 for r in records if r.phase == "adv_d")
    g_steps = sum(1 for r in records if r.phase == "adv_g")
    print(f"adversarial training finished: {d_steps} D-steps, {g_steps} G-steps")
    return 0


def _pad_to_multiple(values, multiple):
    extents = values.shape
    padded_extents = tuple(-(-e // multiple) * multiple for e in extents)
    if padded_extents == extents:
        return values, extents
    pad = [(0, p - e) for e, p in zip(extents, padded_extents)]
    return np.pad(values, pad), extents


def run_predict(args):
    _require(args, ["checkpoint", "in_path", "out"])
    gen = load_checkpoint(args.checkpoint)
    if not isinstance(gen, Generator):
        raise ContractViolation(f"{args.checkpoint} is not a generator checkpoint")
    volume = read_volume(args.in_path)
    started = time.perf_counter()
    multiple = 2 ** gen.spec.encoder_levels
    padded, extents = _pad_to_multiple(volume.values, multiple)
    with no_grad():
        out = gen(Tensor(padded[None, None]), mode="infer")
    prob = out.final_prob.data[0, 0, : extents[0], : extents[1], : extents[2]]
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    prob_grid = VolumeGrid(prob, volume.spacing, volume.origin, kind="image")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_volume(prob_grid, out_path)
    written = [str(out_path)]
    if args.threshold is not None:
        mask = binarize(prob_grid, args.threshold)
        mask_path = out_path.with_name(out_path.stem + "_mask" + out_path.suffix)
        write_volume(mask, mask_path)
        written.append(str(mask_path))
    print(
        f"predicted {extents[0]}x{extents[1]}x{extents[2]} volume "
        f"in {elapsed_ms:.1f} ms -> {', '.join(written)}"
    )
    return 0


def run_eval(args):
    _require(args, ["pred", "gt"])
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise ContractViolation(f"{d} is not a directory")
    pred_ids = {p.name for p in pred_dir.glob("*.vxsg")}
    gt_ids = {p.name for p in gt_dir.glob("*.vxsg")}
    if pred_ids != gt_ids:
        for name in sorted(gt_ids - pred_ids):
            print(f"missing prediction: {name}", file=sys.stderr)
        for name in sorted(pred_ids - gt_ids):
            print(f"missing ground truth: {name}", file=sys.stderr)
        return 2
    if not pred_ids:
        raise ContractViolation("no .vxsg volumes to evaluate")
    cases = []
    flagged = []
    for name in sorted(pred_ids):
        pred = read_volume(pred_dir / name)
        gt = read_volume(gt_dir / name)
        try:
            cases.append(evaluate_case(name, pred, gt))
        except UndefinedMetric:
            flagged.append(name)
    if not cases:
        print("all cases flagged (empty masks); no aggregates computed", file=sys.stderr)
        for name in flagged:
            print(f"flagged: {name}", file=sys.stderr)
        return 1
    text = format_report(cohort_report(cases, flagged=flagged))
    print(text, end="")
    report_path = Path(args.report) if args.report else pred_dir / "metrics_report.tsv"
    with open(report_path, "w") as f:
        f.write(text)
    return 0


def run_gradcheck(args):
    results = gradcheck_mod.full_suite(seed=args.seed, rtol=args.tolerance)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name}\tmax_rel={r.max_rel:.3e}\tmax_abs={r.max_abs:.3e}\t{status}")
    failures = [r for r in results if not r.passed]
    if failures:
        worst = max(failures, key=lambda r: r.max_rel)
        print(f"gradient check failed: worst offender {worst.name} "
              f"(max_rel={worst.max_rel:.3e})", file=sys.stderr)
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="voxseg",
        description="Volumetric segmentation: synthetic data, training, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--spacing", type=float, default=3.0)
    p.set_defaults(func=run_synth)

    p = sub.add_parser("pretrain", help="pretrain the segmentation network")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--show-config", action="store_true")
    p.set_defaults(func=run_pretrain)

    p = sub.add_parser("advtrain", help="adversarial training from a pretrained network")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--init")
    p.add_argument("--show-config", action="store_true")
    p.set_defaults(func=run_advtrain)

    p = sub.add_parser("predict", help="run inference on one volume")
    p.add_argument("--checkpoint")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=run_predict)

    p = sub.add_parser("eval", help="compare predicted masks against ground truth")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--report")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=run_gradcheck)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except (ContractViolation, FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericDivergence as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
