"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (NaN during training, failed gradient check).  Logs go to stderr
one line per event; data products go to files only.  Commands that own an
output directory also write the fully-resolved configuration (including
the seed) to run_config.txt there, so runs are self-describing.

Heavy imports happen inside the command handlers, after --threads has
been applied, because BLAS thread pools are sized at import time.
"""

import argparse
import logging
import os
import sys

log = logging.getLogger("liplab")

_TRAIN_KEYS = {
    "input_size": "64x64",
    "widths": "8,16,32,64",
    "epochs": "70",
    "epochs_stage2": "130",
    "lr": "1e-3",
    "batch": "8",
    "seed": "0",
    "threshold": "0.5",
    "lambda_bce": "0.5",
    "use_texture": "1",
    "data_dir": "",
    "out_dir": "",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _size(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def build_parser():
    parser = _Parser(prog="liplab", description="upper-lip segmentation toolkit")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS/OMP thread cap (1 = fully deterministic)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("texture", help="build the 5-channel texture tensor from a PPM")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output tensor file")
    p.add_argument("--neighbors", type=int, default=8)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--sampling", choices=("nearest", "bilinear"), default="bilinear")

    p = sub.add_parser("maskgen", help="rasterize a mask from landmarks via the template")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--template", default=None, help="template CSV (default: packaged)")
    p.add_argument("--size", type=_size, required=True, metavar="HxW")
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--out", required=True, help="output PGM mask")

    p = sub.add_parser("synth", help="generate synthetic lip samples")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_size, default=(64, 64), metavar="HxW")
    p.add_argument("--noise", type=float, default=4.0)

    p = sub.add_parser("train", help="train the two-stage pipeline")
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--data-dir", default=None, help="overrides data_dir from config")
    p.add_argument("--out-dir", default=None, help="overrides out_dir from config")

    p = sub.add_parser("infer", help="segment one image with trained weights")
    p.add_argument("--weights", required=True, help="weight directory")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output PGM mask")
    p.add_argument("--prob", default=None, help="optional probability tensor file")

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--spec", choices=("toy",), default="toy")
    p.add_argument("--seeds", type=int, default=5)
    # smaller step than the per-layer checks: a full net has many relu /
    # maxpool kinks, and a wide step can hop across one
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=40,
                   help="FD samples per parameter tensor for the full net")
    return parser


def parse_config(path, defaults):
    """Flat `key = value` file; unknown keys are rejected."""
    from .errors import FormatError

    resolved = dict(defaults)
    try:
        fh = open(path, "r", encoding="ascii")
    except FileNotFoundError:
        raise FormatError("config file not found", path=path)
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected 'key = value', got {line!r}", path=path)
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in defaults:
                raise FormatError(f"line {lineno}: unknown config key {key!r}", path=path)
            resolved[key] = value.strip()
    return resolved


def _write_run_config(out_dir, resolved):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_config.txt")
    with open(path, "w", encoding="ascii") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def _cmd_texture(args):
    from .imagio import read_ppm, write_tensor
    from .texture import LbpParams, build_input

    rgb = read_ppm(args.image)
    planes = build_input(rgb, LbpParams(args.neighbors, args.radius, args.sampling))
    write_tensor(args.out, planes)
    log.info("texture image=%s out=%s shape=%s", args.image, args.out, planes.shape)
    return 0


def _cmd_maskgen(args):
    from .imagio import read_landmarks, write_mask_pgm
    from .maskgen import default_template, generate_mask, read_template

    lms = read_landmarks(args.landmarks)
    template = read_template(args.template) if args.template else default_template()
    h, w = args.size
    mask = generate_mask(lms, h, w, template, args.spacing)
    write_mask_pgm(args.out, mask)
    log.info("maskgen landmarks=%s out=%s foreground=%d", args.landmarks, args.out, int(mask.sum()))
    return 0


def _cmd_synth(args):
    from .imagio import write_landmarks, write_mask_pgm, write_ppm
    from .synth import LipShapeParams, generate

    params = LipShapeParams(canvas=args.size, noise_sigma=args.noise, seed=args.seed)
    samples = generate(params, args.n)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, s in enumerate(samples):
        stem = os.path.join(args.out_dir, f"sample_{i:03d}")
        write_ppm(stem + ".ppm", s.image)
        write_mask_pgm(stem + "_mask.pgm", s.mask)
        write_landmarks(stem + "_landmarks.csv", s.landmarks)
    _write_run_config(args.out_dir, {
        "n": args.n, "seed": args.seed, "size": f"{args.size[0]}x{args.size[1]}",
        "noise": args.noise,
    })
    log.info("synth n=%d out_dir=%s seed=%d", args.n, args.out_dir, args.seed)
    return 0


def _load_dataset(data_dir):
    import glob

    from .errors import FormatError
    from .imagio import read_mask_pgm, read_ppm

    images, masks, names = [], [], []
    for ppm in sorted(glob.glob(os.path.join(data_dir, "*.ppm"))):
        stem = ppm[:-len(".ppm")]
        mask_path = stem + "_mask.pgm"
        if not os.path.exists(mask_path):
            raise FormatError(f"no mask next to {ppm} (expected {mask_path})")
        images.append(read_ppm(ppm))
        masks.append(read_mask_pgm(mask_path))
        names.append(os.path.basename(stem))
    if not images:
        raise FormatError(f"no .ppm samples found in {data_dir}")
    return images, masks, names


def _cmd_train(args):
    import numpy as np

    resolved = parse_config(args.config, _TRAIN_KEYS)
    if args.data_dir:
        resolved["data_dir"] = args.data_dir
    if args.out_dir:
        resolved["out_dir"] = args.out_dir
    from .errors import FormatError

    if not resolved["data_dir"] or not resolved["out_dir"]:
        raise FormatError("config must provide data_dir and out_dir (or pass the flags)")

    from .segnet import SequentialLipSegmenter, save_pipeline

    h, w = _size(resolved["input_size"])
    widths = tuple(int(x) for x in resolved["widths"].split(","))
    model = SequentialLipSegmenter(
        widths=widths,
        input_size=(h, w),
        threshold=float(resolved["threshold"]),
        epochs=int(resolved["epochs"]),
        epochs_stage2=int(resolved["epochs_stage2"]),
        lr=float(resolved["lr"]),
        batch_size=int(resolved["batch"]),
        lam=float(resolved["lambda_bce"]),
        seed=int(resolved["seed"]),
        use_texture=resolved["use_texture"] not in ("0", "false", "no"),
    )
    images, masks, _ = _load_dataset(resolved["data_dir"])
    log.info("train start n=%d epochs=%s+%s", len(images), resolved["epochs"], resolved["epochs_stage2"])
    model.fit(images, np.stack(masks))
    out_dir = resolved["out_dir"]
    save_pipeline(out_dir, model.pipeline_)
    curves = model.loss_curves_
    with open(os.path.join(out_dir, "loss_curves.csv"), "w", encoding="ascii") as fh:
        fh.write("stage,epoch,loss\n")
        for stage in ("stage1", "stage2"):
            for i, v in enumerate(curves[stage]):
                fh.write(f"{stage},{i},{v:.8f}\n")
    _write_run_config(out_dir, resolved)
    log.info("train done out_dir=%s final_loss=%.6f", out_dir, curves["stage2"][-1])
    return 0


def _cmd_infer(args):
    from .imagio import read_ppm, write_mask_pgm, write_tensor
    from .segnet import infer, load_pipeline

    pipeline = load_pipeline(args.weights)
    rgb = read_ppm(args.image)
    prob, mask = infer(pipeline, rgb)
    write_mask_pgm(args.out, mask)
    if args.prob:
        write_tensor(args.prob, prob)
    log.info("infer image=%s out=%s foreground=%d", args.image, args.out, int(mask.sum()))
    return 0


def _cmd_eval(args):
    import glob

    from .errors import FormatError
    from .imagio import read_mask_pgm
    from .metrics import evaluate_report

    gt_paths = sorted(glob.glob(os.path.join(args.gt_dir, "*.pgm")))
    if not gt_paths:
        raise FormatError(f"no .pgm masks in {args.gt_dir}")
    pairs, names = [], []
    for gt_path in gt_paths:
        name = os.path.basename(gt_path)
        pred_path = os.path.join(args.pred_dir, name)
        if not os.path.exists(pred_path):
            raise FormatError(f"missing prediction for {gt_path} (expected {pred_path})")
        gt = read_mask_pgm(gt_path)
        pred = read_mask_pgm(pred_path)
        if gt.shape != pred.shape:
            raise FormatError(
                f"mask dims differ: {gt_path} is {gt.shape[0]}x{gt.shape[1]}, "
                f"{pred_path} is {pred.shape[0]}x{pred.shape[1]}"
            )
        pairs.append((gt, pred))
        names.append(os.path.splitext(name)[0])
    report = evaluate_report(pairs, names)
    report.to_csv(args.out)
    table_path = os.path.splitext(args.out)[0] + ".txt"
    with open(table_path, "w", encoding="ascii") as fh:
        fh.write(report.table() + "\n")
    log.info("eval pairs=%d csv=%s table=%s", len(pairs), args.out, table_path)
    return 0


def _cmd_gradcheck(args):
    import numpy as np

    from . import autodiff as ad
    from .segnet import GRADCHECK_SPEC, forward_aunet, init_aunet, randomize_biases

    spec = GRADCHECK_SPEC
    h, w = spec.input_size
    overall_worst = 0.0
    failed = False
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        # nonzero biases keep relu pre-activations off their kinks, where
        # central differences would not measure the subgradient
        params = randomize_biases(init_aunet(spec, rng, dtype=np.float64), rng)
        x = rng.normal(0.0, 1.0, (1, spec.in_channels, h, w))
        target = (rng.uniform(0, 1, (1, 1, h, w)) > 0.5).astype(np.float64)

        def build(p):
            return ad.loss_bce_dice(forward_aunet(p, ad.Tensor(x)), target)

        report = ad.grad_check(build, params, eps=args.eps, tol=args.tol,
                               max_entries=args.max_entries, rng=np.random.default_rng(seed + 1000))
        overall_worst = max(overall_worst, report["worst"])
        failed = failed or not report["passed"]
        for name in sorted(report["per_param"]):
            print(f"seed={seed} param={name} rel_err={report['per_param'][name]:.3e}")
        log.info("gradcheck seed=%d worst=%.3e passed=%s", seed, report["worst"], report["passed"])
    print(f"worst={overall_worst:.3e} tolerance={args.tol:g} {'FAIL' if failed else 'PASS'}")
    if failed:
        log.error("gradient check failed (worst=%.3e)", overall_worst)
        return 3
    return 0


_COMMANDS = {
    "texture": _cmd_texture,
    "maskgen": _cmd_maskgen,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    threads = str(max(1, args.threads))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)

    from .errors import FormatError, GeometryError, NumericalError

    try:
        return _COMMANDS[args.command](args)
    except (FormatError, GeometryError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
