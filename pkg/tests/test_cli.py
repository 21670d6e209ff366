import json
import subprocess
import sys

import pytest

from ltnzsl.cli import main
from ltnzsl.trainer import PRESETS


def gen(tmp_path, *extra):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), "--seen", "4", "--unseen", "2", "--attr-dim", "8",
                 "--feat-dim", "6", "--per-class", "8", "--seed", "1", *extra]) == 0
    return out


def write_config(tmp_path, **kw):
    cfg = dict(dataset="data", alpha=4.0, k_mask=2, n_pos=4, n_neg=4, epochs=3, lr_pretrain=0.05,
               p_schedule=dict(initial_p=1, step=0, cap=1), seed=1)
    cfg.update(kw)
    p = tmp_path / "train.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture
def trained(tmp_path):
    data = gen(tmp_path)
    assert main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "ck")]) == 0
    return data, tmp_path / "ck"


def test_gen_data_writes_manifest(tmp_path, capsys):
    data = gen(tmp_path)
    man = json.loads((data / "manifest.json").read_text())
    assert man["n"] == 48 and man["seen"] == [0, 1, 2, 3] and man["hierarchy_file"] == "hierarchy.json"
    assert "48 samples" in capsys.readouterr().out


def test_train_writes_checkpoint_and_history(trained):
    _, ck = trained
    assert (ck / "checkpoint.json").exists() and (ck / "tensors.f32").exists()
    assert len(json.loads((ck / "history.json").read_text())) == 3


def test_eval_prints_table_and_writes_report(trained, capsys):
    data, ck = trained
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--gamma", "0.5",
                 "--sweep", "0,0.5,1"]) == 0
    out = capsys.readouterr().out
    assert "T1=" in out and "H=" in out and out.count("*") == 1
    report = json.loads((ck / "report.json").read_text())
    assert report["gamma"] == 0.5 and len(report["sweep"]) == 3


def test_sat_prints_axiom_truths(trained, capsys):
    data, ck = trained
    assert main(["sat", "--checkpoint", str(ck), "--data", str(data)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [l.split()[0] for l in lines] == [f"phi{i}" for i in range(1, 7)]
    assert all(0.0 <= float(l.split()[1]) <= 1.0 for l in lines)


def test_sat_with_axiom_file(trained, tmp_path, capsys):
    data, ck = trained
    ax = tmp_path / "kb.txt"
    ax.write_text("axiom only: forall diag(x, l) . isOfClass(x, l)\n")
    assert main(["sat", "--checkpoint", str(ck), "--data", str(data), "--axioms", str(ax)]) == 0
    assert capsys.readouterr().out.startswith("only")


def test_check_grad(capsys):
    assert main(["check-grad", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "kb_loss" in out and "max relative error" in out


def test_parse_ok_and_invalid(tmp_path, capsys):
    good = tmp_path / "good.txt"
    good.write_text("axiom a1: forall diag(x,l) . (isOfClass(x,l))\n")
    assert main(["parse", "--axioms", str(good)]) == 0
    assert capsys.readouterr().out.strip() == "axiom a1: forall diag(x, l) . isOfClass(x, l)"
    bad = tmp_path / "bad.txt"
    bad.write_text("axiom a1: forall x . isOfClass(x)\n")
    assert main(["parse", "--axioms", str(bad)]) == 2


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("axiom a1: forall x . isOfClass(x, y)\n")
    assert main(["parse", "--axioms", str(bad)]) == 2
    assert "line 1, col" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["eval", "--checkpoint", "/nonexistent", "--data", "/nonexistent"],
    ["parse", "--axioms", "/nonexistent/kb.txt"],
    ["train", "--config", "/nonexistent.json", "--out", "/tmp/x"],
])
def test_missing_inputs_exit_2(argv):
    assert main(argv) == 2


def test_bad_config_keys_exit_2(tmp_path):
    gen(tmp_path)
    cfg = write_config(tmp_path, learning_rate=0.1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "ck")]) == 2


def test_hierarchy_axiom_without_hierarchy_exit_2(tmp_path):
    gen(tmp_path, "--macros", "0")
    cfg = write_config(tmp_path, axioms=["phi1", "phi2"])
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "ck")]) == 2


def test_shipped_config_matches_preset():
    from pathlib import Path
    cfg = json.loads((Path(__file__).parents[1] / "configs" / "synthetic.json").read_text())
    preset = PRESETS["synthetic"]
    for k in ("alpha", "k_mask", "n_pos", "n_neg", "epochs", "lr_pretrain", "weight_decay"):
        assert cfg[k] == preset[k]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ltnzsl", "parse", "--axioms", str(tmp_path / "none.txt")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "not found" in r.stderr
