import hashlib
import json

import numpy as np
import pytest

from mmeda.cli import main
from mmeda.data import read_tensor, write_tensor

SMALL = ["--n", "20", "--image", "1x8x8", "--text-dim", "6", "--rank", "3"]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), *SMALL, "--seed", "42"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    paths = {}
    for kind in ("mmeda1", "mmeda2"):
        model = root / f"{kind}.mmdl"
        hist = root / f"{kind}.csv"
        code = main(["train", "--data", str(dataset), "--model", kind, "--batch", "10",
                     "--embed-dim", "3", "--max-epochs", "2", "--lr", "1e-3",
                     "--out", str(model), "--history", str(hist)])
        assert code == 0
        paths[kind] = (model, hist)
    return paths


def test_synth_writes_manifest_and_tensors(dataset, capsys):
    names = sorted(p.name for p in dataset.iterdir())
    assert names == ["labels.mmtf", "m0.mmtf", "m1.mmtf", "manifest.json", "targets.mmtf"]
    assert json.loads((dataset / "manifest.json").read_text())["seed"] == 42


def test_synth_deterministic(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), *SMALL, "--seed", "42"]) == 0
    for p in dataset.iterdir():
        assert digest(p) == digest(again / p.name)


def test_synth_rank_too_large(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "x"), "--rank", "64", "--text-dim", "32"])
    assert code == 2
    assert "rank" in capsys.readouterr().err


def test_synth_bad_flag():
    assert main(["synth", "--out", "x", "--image", "16x16"]) == 2


def test_train_histories(trained):
    head1 = trained["mmeda1"][1].read_text().splitlines()[0]
    head2 = trained["mmeda2"][1].read_text().splitlines()[0]
    assert head1 == "epoch,total,term_x0,term_x1"
    assert head2 == "epoch,total,term_x0,term_x1,term_x2,term_x1pp"
    assert len(trained["mmeda2"][1].read_text().splitlines()) == 3


def test_train_reports_convergence(dataset, tmp_path, capsys):
    code = main(["train", "--data", str(dataset), "--model", "cmf", "--embed-dim", "3",
                 "--batch", "20", "--max-epochs", "1", "--out", str(tmp_path / "c.mmdl")])
    assert code == 0
    assert "epochs=1 converged=false" in capsys.readouterr().out


def test_train_batch_too_large(dataset, tmp_path, capsys):
    code = main(["train", "--data", str(dataset), "--model", "mmeda2", "--batch", "50",
                 "--out", str(tmp_path / "m.mmdl")])
    assert code == 2
    assert "exceeds" in capsys.readouterr().err


def test_train_drop_warning_surfaced(dataset, tmp_path, capsys):
    code = main(["train", "--data", str(dataset), "--model", "mmeda1", "--batch", "8",
                 "--embed-dim", "2", "--max-epochs", "1", "--out", str(tmp_path / "m.mmdl")])
    assert code == 0
    assert "dropping 4 trailing rows" in capsys.readouterr().err


def test_train_divergence_exit(dataset, tmp_path, capsys):
    code = main(["train", "--data", str(dataset), "--model", "cmf", "--embed-dim", "3",
                 "--lr", "1e30", "--optimizer", "sgd", "--batch", "20", "--max-epochs", "5",
                 "--out", str(tmp_path / "c.mmdl")])
    assert code == 4
    assert "epoch" in capsys.readouterr().err


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--model", "cmf",
                 "--out", str(tmp_path / "c.mmdl")]) == 3


def test_embed_deterministic(dataset, trained, tmp_path):
    a, b = tmp_path / "a.mmtf", tmp_path / "b.mmtf"
    for out in (a, b):
        assert main(["embed", "--data", str(dataset), "--model-file", str(trained["mmeda2"][0]),
                     "--out", str(out)]) == 0
    assert digest(a) == digest(b)
    assert read_tensor(a).shape == (20, 3)


def test_embed_mismatch_exit(trained, tmp_path, capsys):
    other = tmp_path / "other"
    assert main(["synth", "--out", str(other), "--n", "20", "--image", "1x8x8",
                 "--text-dim", "5", "--rank", "3"]) == 0
    code = main(["embed", "--data", str(other), "--model-file", str(trained["mmeda1"][0]),
                 "--out", str(tmp_path / "r.mmtf")])
    assert code == 5
    err = capsys.readouterr().err
    assert "6" in err and "5" in err


def test_eval_two_rows(dataset, trained, tmp_path, capsys):
    reps = []
    for kind in ("mmeda1", "mmeda2"):
        out = tmp_path / f"{kind}.mmtf"
        main(["embed", "--data", str(dataset), "--model-file", str(trained[kind][0]), "--out", str(out)])
        reps.append(f"{kind}={out}")
    capsys.readouterr()
    assert main(["eval", "--data", str(dataset), "--reps", *reps, "--trees", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["Architecture", "F1", "Accuracy", "Precision", "Recall", "MSE"]
    assert [l.split()[0] for l in lines[2:4]] == ["mmeda1", "mmeda2"]
    assert main(["eval", "--data", str(dataset), "--reps", *reps, "--json"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [list(r)[1:] for r in rows] == [["f1", "accuracy", "precision", "recall", "mse"]] * 2


def test_eval_nan_exit(dataset, tmp_path, capsys):
    reps = np.zeros((20, 3))
    reps[7, 1] = np.nan
    write_tensor(tmp_path / "bad.mmtf", reps)
    code = main(["eval", "--data", str(dataset), "--reps", str(tmp_path / "bad.mmtf")])
    assert code == 6
    assert "row 7" in capsys.readouterr().err


def test_eval_missing_labels(tmp_path, capsys):
    from mmeda.data import MultiModalDataset, save_dataset

    save_dataset(tmp_path / "d", MultiModalDataset(np.zeros((10, 1, 4, 4)), np.zeros((10, 2))))
    write_tensor(tmp_path / "r.mmtf", np.zeros((10, 2)))
    assert main(["eval", "--data", str(tmp_path / "d"), "--reps", str(tmp_path / "r.mmtf")]) == 6


def test_config_file_and_override(dataset, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max-epochs": 1, "embed_dim": 2, "batch": 10}))
    code = main(["--config", str(cfg), "train", "--data", str(dataset), "--model", "mmeda1",
                 "--max-epochs", "2", "--out", str(tmp_path / "m.mmdl"), "--history", str(tmp_path / "h.csv")])
    assert code == 0
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 3
    assert main(["embed", "--data", str(dataset), "--model-file", str(tmp_path / "m.mmdl"),
                 "--out", str(tmp_path / "r.mmtf")]) == 0
    assert read_tensor(tmp_path / "r.mmtf").shape == (20, 2)


@pytest.mark.parametrize(
    "sub, expected",
    [
        ("train", ["--batch", "(default: 50)", "--tol", "(default: 0.0001)", "--max-epochs",
                   "(default: 300)", "default 1e-4", "default 50"]),
        ("eval", ["--trees", "(default: 100)", "--depth", "(default: 2)", "--forest-seed",
                  "--split-ratio", "(default: 0.8)"]),
        ("synth", ["--n", "--image", "--text-dim", "--rank", "--sigma", "--seed"]),
        ("embed", ["--data", "--model-file", "--out"]),
    ],
)
def test_help_lists_flags_and_defaults(sub, expected, capsys):
    assert main([sub, "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    for item in expected:
        assert item in text, item
