import json
import struct

import numpy as np
import pytest

from tangentflats.cli import main, read_labels
from tangentflats.dataset import SampleSet, load_matrix, save_matrix
from tangentflats.flats import fit_flats, load_flats, msre


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    path.write_bytes(struct.pack(">IIII", 0x803, n, r, c) + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", 0x801, len(labels)) + labels.tobytes())


@pytest.fixture
def roll(tmp_path):
    path = tmp_path / "roll.f64"
    assert main(["generate", "swiss-roll", "--n", "400", "--noise", "0.1",
                 "--output", str(path), "--seed", "3"]) == 0
    return path


def test_generate_reproducible(tmp_path):
    a, b = tmp_path / "a.f64", tmp_path / "b.f64"
    for p in (a, b):
        assert main(["generate", "swiss-roll", "--n", "50", "--output", str(p), "--seed", "9"]) == 0
    assert a.read_bytes() == b.read_bytes()
    X = load_matrix(a)
    assert (X.m, X.N) == (50, 3)
    assert struct.unpack("<QQ", a.read_bytes()[:16]) == (50, 3)


def test_generate_csv(tmp_path):
    p = tmp_path / "s.csv"
    assert main(["generate", "s-curve", "--n", "20", "--output", str(p)]) == 0
    assert load_matrix(p).data.shape == (20, 3)


def test_generate_negative_noise(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "swiss-roll", "--noise", "-1", "--output", str(tmp_path / "x")])
    assert exc.value.code == 2


def test_approximate_and_evaluate(roll, tmp_path):
    out = tmp_path / "run"
    assert main(["approximate", "--input", str(roll), "--k", "8", "--clusters", "12",
                 "--dim", "2", "--output", str(out)]) == 0
    labels = read_labels(out / "labels.csv")
    assert len(labels) == 400 and set(labels) == set(range(12))
    manifest = json.loads((out / "manifest.json").read_text())
    assert sum(manifest["cluster_sizes"]) == 400
    assert manifest["config"]["clusters"] == 12
    X = load_matrix(roll)
    flats = load_flats(out / "flats")
    assert manifest["msre"] == pytest.approx(msre(X, labels, fit_flats(X, labels, 2)), abs=1e-12)

    report = tmp_path / "eval.json"
    assert main(["evaluate", "--input", str(roll), "--labels", str(out / "labels.csv"),
                 "--flats", str(out / "flats"), "--output", str(report)]) == 0
    metrics = json.loads(report.read_text())
    assert metrics["msre"] == pytest.approx(msre(X, labels, flats), abs=1e-12)
    assert sum(c["size"] for c in metrics["clusters"]) == 400


def test_every_sample_its_own_cluster(tmp_path):
    path = tmp_path / "x.csv"
    save_matrix(path, SampleSet(np.random.default_rng(0).normal(size=(12, 3))))
    out = tmp_path / "run"
    assert main(["approximate", "--input", str(path), "--k", "3", "--clusters", "12",
                 "--dim", "1", "--output", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["msre"] == 0


def test_evaluate_rejects_empty_labels(roll, tmp_path):
    out = tmp_path / "run"
    main(["approximate", "--input", str(roll), "--k", "8", "--clusters", "5",
          "--dim", "2", "--output", str(out)])
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["evaluate", "--input", str(roll), "--labels", str(empty),
                 "--flats", str(out / "flats")]) == 2


def test_infeasible_exit_code(tmp_path):
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 100])
    path = tmp_path / "blobs.csv"
    save_matrix(path, SampleSet(X))
    assert main(["approximate", "--input", str(path), "--k", "3", "--clusters", "1",
                 "--dim", "1", "--output", str(tmp_path / "o")]) == 3


def test_bad_arguments(roll, tmp_path):
    assert main(["approximate", "--input", str(roll), "--clusters", "5", "--dim", "4",
                 "--output", str(tmp_path / "o")]) == 2
    assert main(["approximate", "--input", str(tmp_path / "missing.f64"), "--clusters", "5",
                 "--dim", "2", "--output", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["approximate", "--input", str(roll), "--clusters", "0", "--dim", "2",
              "--output", str(tmp_path / "o")])
    assert exc.value.code == 2


def test_classify_tiny(tmp_path):
    rng = np.random.default_rng(2)
    imgs = rng.integers(0, 256, size=(30, 4, 4))
    labels = np.repeat([0, 1, 2], 10)
    paths = {name: tmp_path / name for name in ("tri", "trl", "tei", "tel")}
    write_idx_images(paths["tri"], imgs)
    write_idx_labels(paths["trl"], labels)
    write_idx_images(paths["tei"], imgs[::2])
    write_idx_labels(paths["tel"], labels[::2])
    out = tmp_path / "cls"
    assert main(["classify", "--train-images", str(paths["tri"]), "--train-labels", str(paths["trl"]),
                 "--test-images", str(paths["tei"]), "--test-labels", str(paths["tel"]),
                 "--flats-per-class", "2", "--k", "3", "--dim", "2", "--cap-per-class", "1",
                 "--pca-dims", "100", "--output", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["train_per_class"] == {"0": 1, "1": 1, "2": 1}
    assert report["pca_dims"] == 16
    for name, acc in report["accuracy"].items():
        rows = np.loadtxt(out / f"predictions_{name}.csv", delimiter=",", skiprows=1, dtype=int)
        assert len(rows) == 15
        assert acc == pytest.approx(np.mean(rows[:, 1] == rows[:, 2]))


def test_bench(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "120,60", "--trials", "2", "--k", "6", "--clusters", "3",
                 "--output", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (4, 3)
    assert rows[:, 0].tolist() == [120, 120, 60, 60]
    assert np.all(rows[:, 2] > 0)


def test_bench_unwritable(tmp_path):
    assert main(["bench", "--sizes", "60", "--k", "6", "--clusters", "3",
                 "--output", str(tmp_path / "no" / "such" / "dir" / "b.csv")]) == 2


def test_labels_identical_across_threads(roll, tmp_path):
    outputs = []
    for t in (1, 2, 3):
        out = tmp_path / f"t{t}"
        assert main(["approximate", "--input", str(roll), "--k", "8", "--clusters", "10",
                     "--dim", "2", "--threads", str(t), "--output", str(out)]) == 0
        outputs.append((out / "labels.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
