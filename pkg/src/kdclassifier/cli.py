"""``kdc`` command-line pipeline: train, eval, hybrid, sweep, inspect."""

from __future__ import annotations

import argparse
import logging
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classify import evaluate, metrics_from_predictions
from .dataset import IDX_LABEL_MAGIC, _read_bytes, load_delimited, load_idx, pad_margin, stratified_sample
from .density import VarianceParams
from .errors import ConfigurationError, ConsistencyError, FormatError, KDError, KDIOError, ShapeError
from .hybrid import (
    DEFAULT_GRID,
    PosteriorTable,
    hybrid_error,
    load_posterior_table,
    tune,
    write_posterior_table,
)
from .persist import load_model, save_model
from .pipeline import train_classifier
from .selection import SelectionConfig

log = logging.getLogger("kdclassifier")


# ------------------------------------------------------------------ helpers


def read_config_file(path):
    """``key = value`` lines; keys are long flag names with or without dashes."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise KDIOError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def read_labels(path):
    """Labels from an IDX label file or a text file with one integer per line."""
    raw = _read_bytes(path)
    if len(raw) >= 8 and struct.unpack(">I", raw[:4])[0] == IDX_LABEL_MAGIC:
        n = struct.unpack(">I", raw[4:8])[0]
        if len(raw) < 8 + n:
            raise KDIOError(f"{path}: truncated label data")
        return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    out = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(int(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return np.array(out, dtype=np.int64)


def write_labels(labels, path):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels), encoding="utf-8")


def rescale_to_bytes(values):
    """Linear map min -> 0, max -> 255; a constant array becomes all 128."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 128, dtype=np.uint8)
    return np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    pixels = parts[4]
    return np.frombuffer(pixels, dtype=np.uint8, count=width * height).reshape(height, width)


def _load_set(args, images, labels, seed_offset=0):
    if args.format == "idx":
        data = load_idx(images, labels)
    else:
        if not (args.width and args.height):
            raise ConfigurationError("--width and --height are required for --format delim")
        data = load_delimited(images, args.width, args.height)
    if len(data) == 0:
        raise ConfigurationError(f"{images}: no samples")
    data = pad_margin(data, args.margin)
    if args.per_class:
        data, _ = stratified_sample(data, args.per_class, args.seed + seed_offset)
    return data


def _selection_config(args):
    scale = args.assignment_scale
    if scale != "auto":
        scale = float(scale)
    return SelectionConfig(
        kernel_count=args.kernels,
        iterations=args.iterations,
        assignment_scale=scale,
        seed=args.seed,
        p=args.poly_order,
        q=args.subspace_dim,
        variances=VarianceParams(args.sigma_d2, args.sigma_o2),
        step=args.step,
    )


def _parse_grid(text):
    if text is None:
        return DEFAULT_GRID
    if ":" in text:
        lo, hi, step = (float(s) for s in text.split(":"))
        n = int(round((hi - lo) / step))
        return tuple(round(lo + i * step, 10) for i in range(n + 1))
    return tuple(float(s) for s in text.split(","))


# ------------------------------------------------------------------ commands


def cmd_train(args):
    train = _load_set(args, args.train_images, args.train_labels)
    config = _selection_config(args)
    classifier, traces = train_classifier(train, config, args.priors, args.threads)
    out = Path(args.out)
    save_model(classifier, out)
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for m, trace in enumerate(traces):
        (trace_dir / f"class_{m:03d}.tsv").write_text(trace.to_text(), encoding="utf-8")
    print(f"trained {classifier.class_count} classes on {len(train)} samples -> {out}")
    return 0


def cmd_eval(args):
    classifier = load_model(args.model)
    test = _load_set(args, args.test_images, args.test_labels, seed_offset=1)
    if test.dimension != classifier.dimension:
        raise ConfigurationError(
            f"test images have {test.dimension} pixels, model expects {classifier.dimension}"
        )
    metrics, post = evaluate(test, classifier, threads=args.threads, return_posteriors=True)
    report = metrics.to_text()
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    if args.emit_posteriors:
        write_posterior_table(PosteriorTable(post, f"kd:{args.model}"), args.emit_posteriors)
    if args.emit_labels:
        write_labels(test.labels, args.emit_labels)
    return 0


def _load_tables(gen, disc, labels_path):
    labels = read_labels(labels_path)
    n = labels.shape[0]
    first = None
    for path in (gen, disc):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip() and not line.lstrip().startswith("#"):
                    first = len(line.replace(",", " ").split()) - 1
                    break
        if first:
            break
    if not first:
        raise FormatError(f"{gen}: no data rows")
    M = first
    try:
        P_g = load_posterior_table(gen, n, M).rows
        P_d = load_posterior_table(disc, n, M).rows
    except FormatError as exc:
        raise ConsistencyError(f"posterior tables disagree on class count: {exc}") from exc
    if labels.size and labels.max() >= M:
        raise ConsistencyError("labels exceed the posterior tables' class count")
    return P_d, P_g, labels


def cmd_hybrid(args):
    P_d, P_g, labels = _load_tables(args.generative, args.discriminative, args.labels)
    M = P_d.shape[1]
    lines = [f"mode\t{args.mode}", f"samples\t{labels.size}"]
    d_err = metrics_from_predictions(labels, np.argmax(P_d, axis=1), M).error_rate
    g_err = metrics_from_predictions(labels, np.argmax(P_g, axis=1), M).error_rate
    lines += [f"discriminative_error\t{d_err!r}", f"generative_error\t{g_err!r}"]
    if args.tune:
        if not (args.val_generative and args.val_discriminative and args.val_labels):
            raise ConfigurationError("--tune needs --val-generative, --val-discriminative and --val-labels")
        V_d, V_g, v_labels = _load_tables(args.val_generative, args.val_discriminative, args.val_labels)
        if V_d.shape[1] != M:
            raise ConsistencyError("validation and evaluation tables differ in class count")
        result = tune(args.mode, V_d, V_g, v_labels, _parse_grid(args.grid), args.folds, args.seed, args.threads)
        param = result.best
        lines.append(f"tuned_parameter\t{param!r}")
        lines.append(f"validation_error\t{float(result.mean_fold_error[result.grid.index(param)])!r}")
        lines.append(f"heldout_error\t{hybrid_error(args.mode, P_d, P_g, labels, param)!r}")
        lines.append("# grid")
        lines += [f"{g!r}\t{float(e)!r}" for g, e in zip(result.grid, result.mean_fold_error)]
    else:
        if args.param is None:
            raise ConfigurationError("give --param or --tune")
        if not 0.0 <= args.param <= 1.0:
            raise ConfigurationError("--param must lie in [0, 1]")
        lines.append(f"parameter\t{args.param!r}")
        lines.append(f"hybrid_error\t{hybrid_error(args.mode, P_d, P_g, labels, args.param)!r}")
    report = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 0


SWEEP_AXES = ("q", "variance_ratio", "p")


def cmd_sweep(args):
    train = _load_set(args, args.train_images, args.train_labels)
    test = _load_set(args, args.test_images, args.test_labels, seed_offset=1)
    base = _selection_config(args)
    values = [float(v) for v in args.values.split(",")]
    rows = [f"# axis={args.axis}", "value\terror_rate\tstatus"]
    for value in values:
        try:
            if args.axis == "q":
                cfg = replace(base, q=int(value))
            elif args.axis == "p":
                cfg = replace(base, p=int(value))
            else:
                s_o = base.variances.sigma_o2
                cfg = replace(base, variances=VarianceParams(value * s_o, s_o))
            classifier, _ = train_classifier(train, cfg, args.priors, args.threads)
            err = evaluate(test, classifier, threads=args.threads).error_rate
            rows.append(f"{value:g}\t{err!r}\tok")
        except KDError as exc:
            rows.append(f"{value:g}\tnan\tfailed: {exc}")
            log.warning("sweep point %s failed: %s", value, exc)
    text = "\n".join(rows) + "\n"
    if args.results:
        Path(args.results).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_inspect(args):
    classifier = load_model(args.model)
    if not 0 <= args.class_index < classifier.class_count:
        raise ConfigurationError(f"class {args.class_index} out of range [0, {classifier.class_count})")
    model = classifier.models[args.class_index]
    if not 0 <= args.kernel < len(model.kernels):
        raise ConfigurationError(f"kernel {args.kernel} out of range [0, {len(model.kernels)})")
    if not (classifier.width and classifier.height):
        raise ShapeError("model does not record its image size")
    kern = model.kernels[args.kernel]
    shape = (classifier.height, classifier.width)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = [("center", kern.center)]
    images += [(f"u{j + 1}", kern.basis.U[:, j]) for j in range(min(3, kern.basis.q))]
    for name, vec in images:
        path = out / f"class{args.class_index}_kernel{args.kernel}_{name}.pgm"
        write_pgm(path, rescale_to_bytes(vec).reshape(shape))
        print(path)
    return 0


# ------------------------------------------------------------------ parser


def _add_data_flags(p, prefix):
    p.add_argument(f"--{prefix}-images")
    p.add_argument(f"--{prefix}-labels")


def _add_common_data_flags(p):
    p.add_argument("--format", choices=("idx", "delim"), default="idx")
    p.add_argument("--width", type=int, default=0, help="image width for --format delim")
    p.add_argument("--height", type=int, default=0, help="image height for --format delim")
    p.add_argument("--margin", type=int, default=1)
    p.add_argument("--per-class", type=int, default=0, help="stratified subset size (0 = all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _add_selection_flags(p):
    p.add_argument("--kernels", type=int, default=100)
    p.add_argument("--poly-order", type=int, default=3)
    p.add_argument("--subspace-dim", type=int, default=40)
    p.add_argument("--sigma-d2", type=float, default=0.9)
    p.add_argument("--sigma-o2", type=float, default=0.03)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--assignment-scale", default="auto")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--priors", choices=("empirical", "uniform"), default="empirical")


def build_parser():
    parser = argparse.ArgumentParser(prog="kdc", description=__doc__)
    parser.add_argument("--config", help="key=value file; command-line flags override it")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="select kernels per class and save the model")
    _add_data_flags(p, "train")
    _add_common_data_flags(p)
    _add_selection_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train, required=("train_images", "train_labels", "out"))

    p = sub.add_parser("eval", help="evaluate a saved model on labeled images")
    p.add_argument("--model")
    _add_data_flags(p, "test")
    _add_common_data_flags(p)
    p.add_argument("--report")
    p.add_argument("--emit-posteriors")
    p.add_argument("--emit-labels")
    p.set_defaults(func=cmd_eval, required=("model", "test_images", "test_labels"))

    p = sub.add_parser("hybrid", help="combine generative and discriminative posteriors")
    p.add_argument("--generative")
    p.add_argument("--discriminative")
    p.add_argument("--labels")
    p.add_argument("--mode", choices=("cascade", "stack"), default="stack")
    p.add_argument("--param", type=float)
    p.add_argument("--tune", action="store_true")
    p.add_argument("--val-generative")
    p.add_argument("--val-discriminative")
    p.add_argument("--val-labels")
    p.add_argument("--grid", help="'lo:hi:step' or comma list (default 0:1:0.01)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report")
    p.set_defaults(func=cmd_hybrid, required=("generative", "discriminative", "labels"))

    p = sub.add_parser("sweep", help="train and evaluate across one parameter axis")
    _add_data_flags(p, "train")
    _add_data_flags(p, "test")
    _add_common_data_flags(p)
    _add_selection_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--results")
    p.set_defaults(
        func=cmd_sweep,
        required=("train_images", "train_labels", "test_images", "test_labels", "axis", "values"),
    )

    p = sub.add_parser("inspect", help="write a kernel center and its first basis vectors as PGM")
    p.add_argument("--model")
    p.add_argument("--class", dest="class_index", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect, required=("model", "class_index", "kernel", "out"))
    return parser


def _config_bool(raw):
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = parser.parse_args(argv)
    if not known.config:
        return args
    # file values become defaults, so any flag given on the command line wins
    try:
        file_values = read_config_file(known.config)
    except KDError as exc:
        parser.error(str(exc))
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, raw in file_values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            parser.error(f"config file {known.config}: unknown key {key!r} for {args.command}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            try:
                defaults[key] = _config_bool(raw)
            except ValueError as exc:
                parser.error(f"config file {known.config}: {key}: {exc}")
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    missing = [name for name in args.required if getattr(args, name, None) is None]
    if missing:
        parser.error("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    try:
        return args.func(args)
    except KDError as exc:
        print(f"kdc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"kdc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
