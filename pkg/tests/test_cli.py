import struct

import numpy as np
import pytest

from kdclassifier.classify import evaluate
from kdclassifier.cli import main, read_labels, read_pgm, rescale_to_bytes
from kdclassifier.dataset import load_idx, pad_margin
from kdclassifier.density import VarianceParams
from kdclassifier.hybrid import PosteriorTable, load_posterior_table, write_posterior_table
from kdclassifier.persist import load_model

from hybrid_tables import disjoint_error_tables


def _shapes(rng, n, cls, size=10):
    """Bars and boxes with jitter: class 0 vertical bar, 1 horizontal bar, 2 box."""
    out = np.zeros((n, size, size))
    for i in range(n):
        r, c = rng.integers(-1, 2, 2)
        img = out[i]
        if cls == 0:
            img[2 + r : 8 + r, 4 + c : 6 + c] = 1
        elif cls == 1:
            img[4 + r : 6 + r, 2 + c : 8 + c] = 1
        else:
            img[3 + r : 7 + r, 3 + c : 7 + c] = 1
            img[4 + r : 6 + r, 4 + c : 6 + c] = 0
        img += 0.15 * rng.random((size, size))
    return np.clip(out, 0, 1)


def _write_idx(path_img, path_lab, images, labels):
    pix = np.rint(images * 255).astype(np.uint8)
    n, h, w = pix.shape
    path_img.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pix.tobytes())
    path_lab.write_bytes(struct.pack(">II", 0x801, n) + labels.astype(np.uint8).tobytes())


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(0)
    for name, n in (("train", 25), ("test", 8)):
        imgs = np.concatenate([_shapes(rng, n, c) for c in range(3)])
        labels = np.repeat(np.arange(3), n)
        _write_idx(root / f"{name}-img", root / f"{name}-lab", imgs, labels)
    return root


TRAIN_FLAGS = ["--kernels", "4", "--poly-order", "2", "--subspace-dim", "6", "--iterations", "5",
               "--sigma-d2", "0.9", "--sigma-o2", "0.03", "--seed", "3"]


def _train(data, out, extra=()):
    argv = ["train", "--train-images", str(data / "train-img"), "--train-labels", str(data / "train-lab"),
            "--out", str(out), *TRAIN_FLAGS, *extra]
    return main(argv)


@pytest.fixture(scope="module")
def model_dir(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m"
    assert _train(data, out) == 0
    return out


def test_train_outputs(model_dir):
    assert (model_dir / "manifest.json").exists()
    traces = sorted((model_dir / "traces").iterdir())
    assert [t.name for t in traces] == [f"class_{m:03d}.tsv" for m in range(3)]
    lines = [l for l in traces[0].read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 5
    clf = load_model(model_dir)
    assert (clf.width, clf.height) == (12, 12) and clf.models[0].q == 6


def test_train_is_deterministic(data, model_dir, tmp_path):
    assert _train(data, tmp_path / "again") == 0
    for f in ["manifest.json", "class_000.bin", "class_002.bin", "traces/class_001.tsv"]:
        assert (tmp_path / "again" / f).read_bytes() == (model_dir / f).read_bytes()


def test_train_zero_iterations(data, tmp_path):
    assert _train(data, tmp_path / "z", ["--iterations", "0"]) == 0
    assert load_model(tmp_path / "z").class_count == 3


def test_train_threads_match_serial(data, model_dir, tmp_path):
    assert _train(data, tmp_path / "t", ["--threads", "3"]) == 0
    assert (tmp_path / "t" / "class_001.bin").read_bytes() == (model_dir / "class_001.bin").read_bytes()


def test_train_error_exit_status(data, tmp_path, capsys):
    # q larger than the 5 first-order columns
    code = _train(data, tmp_path / "bad", ["--poly-order", "1"])
    assert code == 1
    assert "class 0" in capsys.readouterr().err


def test_config_file_and_override(data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("kernels = 3\niterations = 2\nsubspace-dim = 5\n")
    argv = ["--config", str(cfg), "train", "--train-images", str(data / "train-img"),
            "--train-labels", str(data / "train-lab"), "--out", str(tmp_path / "c"),
            "--poly-order", "2", "--iterations", "1"]
    assert main(argv) == 0
    clf = load_model(tmp_path / "c")
    assert len(clf.models[0].kernels) == 3 and clf.models[0].q == 5
    trace = (tmp_path / "c" / "traces" / "class_000.tsv").read_text().splitlines()
    assert len([l for l in trace if not l.startswith("#")]) == 1


def test_missing_required_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", "x"])
    assert exc.value.code == 2


def test_eval_report_and_posteriors(data, model_dir, tmp_path):
    report = tmp_path / "report.txt"
    post = tmp_path / "post.tsv"
    labels = tmp_path / "labels.txt"
    code = main(["eval", "--model", str(model_dir), "--test-images", str(data / "test-img"),
                 "--test-labels", str(data / "test-lab"), "--report", str(report),
                 "--emit-posteriors", str(post), "--emit-labels", str(labels)])
    assert code == 0
    test = pad_margin(load_idx(data / "test-img", data / "test-lab"), 1)
    expected = evaluate(test, load_model(model_dir))
    assert report.read_text() == expected.to_text()
    assert expected.error_rate < 0.4  # chance is 2/3
    table = load_posterior_table(post, 24, 3)
    np.testing.assert_allclose(table.rows.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_array_equal(read_labels(labels), test.labels)


def test_eval_dimension_mismatch(data, model_dir, capsys):
    code = main(["eval", "--model", str(model_dir), "--test-images", str(data / "test-img"),
                 "--test-labels", str(data / "test-lab"), "--margin", "0"])
    assert code == 1
    assert "pixels" in capsys.readouterr().err


def _tables(tmp_path, P_d, P_g, labels, prefix=""):
    d, g, l = tmp_path / f"{prefix}d.tsv", tmp_path / f"{prefix}g.tsv", tmp_path / f"{prefix}labels.txt"
    write_posterior_table(PosteriorTable(P_d, "disc"), d)
    write_posterior_table(PosteriorTable(P_g, "gen"), g)
    l.write_text("".join(f"{v}\n" for v in labels))
    return d, g, l


def _report(path):
    out = {}
    for line in path.read_text().splitlines():
        if not line.startswith("#"):
            k, v = line.split("\t", 1)
            out[k] = v
    return out


@pytest.mark.parametrize("mode,param,endpoint", [("cascade", 0, "discriminative_error"),
                                                 ("stack", 1, "discriminative_error"),
                                                 ("cascade", 1, "generative_error"),
                                                 ("stack", 0, "generative_error")])
def test_hybrid_endpoints(tmp_path, mode, param, endpoint):
    P_d, P_g, labels = disjoint_error_tables(500, 10, seed=4)
    d, g, l = _tables(tmp_path, P_d, P_g, labels)
    rep = tmp_path / "r.txt"
    assert main(["hybrid", "--generative", str(g), "--discriminative", str(d), "--labels", str(l),
                 "--mode", mode, "--param", str(param), "--report", str(rep)]) == 0
    r = _report(rep)
    assert float(r["hybrid_error"]) == float(r[endpoint])


def test_hybrid_disjoint_errors_stacking(tmp_path):
    P_d, P_g, labels = disjoint_error_tables(1000, 10, seed=5)
    d, g, l = _tables(tmp_path, P_d, P_g, labels)
    rep = tmp_path / "r.txt"
    assert main(["hybrid", "--generative", str(g), "--discriminative", str(d), "--labels", str(l),
                 "--mode", "stack", "--param", "0.5", "--report", str(rep)]) == 0
    r = _report(rep)
    assert float(r["hybrid_error"]) < min(float(r["discriminative_error"]), float(r["generative_error"]))


def test_hybrid_tune_mode(tmp_path):
    V = disjoint_error_tables(1000, 10, seed=6)
    T = disjoint_error_tables(1000, 10, seed=7)
    vd, vg, vl = _tables(tmp_path, *V, prefix="val_")
    d, g, l = _tables(tmp_path, *T)
    rep = tmp_path / "r.txt"
    assert main(["hybrid", "--generative", str(g), "--discriminative", str(d), "--labels", str(l),
                 "--mode", "stack", "--tune", "--val-generative", str(vg), "--val-discriminative", str(vd),
                 "--val-labels", str(vl), "--grid", "0:1:0.05", "--folds", "5", "--report", str(rep)]) == 0
    r = _report(rep)
    assert 0.0 < float(r["tuned_parameter"]) < 1.0
    assert float(r["heldout_error"]) == 0.0


def test_hybrid_misaligned(tmp_path, capsys):
    P_d, P_g, labels = disjoint_error_tables(50, 4, seed=1)
    d, g, l = _tables(tmp_path, P_d, P_g[:40], labels)
    code = main(["hybrid", "--generative", str(g), "--discriminative", str(d), "--labels", str(l),
                 "--mode", "stack", "--param", "0.5"])
    assert code == 1


def test_sweep_p_rows_and_failures(data, tmp_path):
    results = tmp_path / "sweep.tsv"
    code = main(["sweep", "--train-images", str(data / "train-img"), "--train-labels", str(data / "train-lab"),
                 "--test-images", str(data / "test-img"), "--test-labels", str(data / "test-lab"),
                 *TRAIN_FLAGS, "--axis", "p", "--values", "1,2,3,4", "--results", str(results)])
    assert code == 0
    rows = [l.split("\t") for l in results.read_text().splitlines()[2:]]
    assert [r[0] for r in rows] == ["1", "2", "3", "4"]
    assert rows[0][2].startswith("failed")  # q=6 exceeds the 5 first-order columns
    assert all(r[2] == "ok" for r in rows[1:])


def test_sweep_ratio_one_is_isotropic(data, tmp_path):
    results = tmp_path / "sweep.tsv"
    assert main(["sweep", "--train-images", str(data / "train-img"), "--train-labels", str(data / "train-lab"),
                 "--test-images", str(data / "test-img"), "--test-labels", str(data / "test-lab"),
                 *TRAIN_FLAGS, "--axis", "variance_ratio", "--values", "1", "--results", str(results)]) == 0
    err = float(results.read_text().splitlines()[2].split("\t")[1])
    iso_dir = tmp_path / "iso"
    assert _train(data, iso_dir, ["--sigma-d2", "0.03"]) == 0
    test = pad_margin(load_idx(data / "test-img", data / "test-lab"), 1)
    clf = load_model(iso_dir)
    assert err == evaluate(test, clf).error_rate
    # with equal variances only the Euclidean distance to each center matters
    iso = clf.with_variances(VarianceParams(0.03, 0.03))
    assert evaluate(test, iso).error_rate == err


def test_inspect_writes_four_images(model_dir, tmp_path):
    out = tmp_path / "img"
    assert main(["inspect", "--model", str(model_dir), "--class", "2", "--kernel", "1", "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 4
    clf = load_model(model_dir)
    kern = clf.models[2].kernels[1]
    center = next(f for f in files if f.name.endswith("center.pgm"))
    assert center.read_bytes().startswith(b"P5\n12 12\n255\n")
    np.testing.assert_array_equal(read_pgm(center), rescale_to_bytes(kern.center).reshape(12, 12))
    u1 = next(f for f in files if f.name.endswith("u1.pgm"))
    np.testing.assert_array_equal(read_pgm(u1).ravel(), rescale_to_bytes(kern.basis.U[:, 0]))


def test_inspect_bad_index(model_dir, tmp_path):
    assert main(["inspect", "--model", str(model_dir), "--class", "3", "--kernel", "0", "--out", str(tmp_path)]) == 1
    assert main(["inspect", "--model", str(model_dir), "--class", "0", "--kernel", "9", "--out", str(tmp_path)]) == 1


def test_rescale_rules():
    assert (rescale_to_bytes(np.full(5, 0.3)) == 128).all()
    np.testing.assert_array_equal(rescale_to_bytes([-1.0, 0.0, 1.0]), [0, 128, 255])


def test_config_override_with_equals_syntax(data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nkernels = 3\n--subspace-dim = 5\npoly_order = 2\niterations = 3\n")
    argv = ["--config", str(cfg), "train", "--train-images", str(data / "train-img"),
            "--train-labels", str(data / "train-lab"), "--out", str(tmp_path / "c"), "--kernels=2"]
    assert main(argv) == 0
    assert len(load_model(tmp_path / "c").models[1].kernels) == 2


def test_config_boolean_and_unknown_keys(tmp_path):
    P_d, P_g, labels = disjoint_error_tables(200, 4, seed=8)
    d, g, l = _tables(tmp_path, P_d, P_g, labels)
    cfg = tmp_path / "h.cfg"
    cfg.write_text(f"tune = yes\nval-generative = {g}\nval-discriminative = {d}\nval-labels = {l}\n"
                   "grid = 0,0.5,1\nfolds = 4\n")
    rep = tmp_path / "r.txt"
    assert main(["--config", str(cfg), "hybrid", "--generative", str(g), "--discriminative", str(d),
                 "--labels", str(l), "--mode", "stack", "--report", str(rep)]) == 0
    assert float(_report(rep)["tuned_parameter"]) == 0.5
    cfg.write_text("no_such_option = 1\n")
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(cfg), "hybrid", "--generative", str(g), "--discriminative", str(d),
              "--labels", str(l), "--mode", "stack", "--param", "0.5"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(tmp_path / "missing.cfg"), "hybrid"])
    assert exc.value.code == 2
