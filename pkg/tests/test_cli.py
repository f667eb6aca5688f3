import csv
import json

import pytest

from iomri import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("phantom", "--out", d / "ph", "--seed", 1, "--extents", 4, 64, 64,
               "--fov-mm", 8, 80, 80, "--noise", 0.001) == 0
    assert run("emulate", "--input", d / "ph", "--out", d / "acq", "--seed", 2,
               "--res", 1.6, "--accel", 4) == 0
    return d


def test_chain_outputs(chain):
    for name in ("ph", "ph_truth", "acq", "acq_mask", "acq_target"):
        assert (chain / f"{name}.json").exists() and (chain / f"{name}.raw").exists()
    prov = json.loads((chain / "acq.provenance.json").read_text())
    assert prov["emulation"]["band_extents"] == [50, 50]
    assert {r["path"] for r in prov["inputs"]} == {str(chain / "ph.json"), str(chain / "ph.raw")}
    assert all(len(r["sha256"]) == 64 for r in prov["outputs"])


def test_recon_and_metrics(chain):
    d = chain
    assert run("recon", "zf", "--input", d / "acq", "--mask", d / "acq_mask", "--out", d / "zf") == 0
    assert run("recon", "cs", "--input", d / "acq", "--mask", d / "acq_mask", "--out", d / "cs",
               "--iters", 20, "--png") == 0
    assert (d / "cs.png").stat().st_size > 0
    assert run("eval-metrics", "--reference", d / "acq_target", "--recon", f"zf={d / 'zf'}",
               f"cs={d / 'cs'}", "--volume-id", "v1", "--out", d / "metrics.csv") == 0
    rows = list(csv.DictReader(open(d / "metrics.csv")))
    assert len(rows) == 8 and rows[0].keys() == {"volume_id", "method", "slice", "ssim", "psnr", "nmse"}
    for z in range(4):
        zf = next(r for r in rows if r["method"] == "zf" and r["slice"] == str(z))
        cs = next(r for r in rows if r["method"] == "cs" and r["slice"] == str(z))
        assert float(cs["nmse"]) < float(zf["nmse"])


def test_train_then_dl(chain):
    d = chain
    assert run("train", "--out", d / "run", "--seed", 0, "--epochs", 2, "--examples-per-epoch", 2,
               "--cascades", 1, "--channels", 2, "--train-slices", 2, "--val-slices", 1,
               "--extent", 48, "--spacing", 1.1) == 0
    for f in ("model.json", "model.raw", "training_log.csv", "training_curve.png", "model.provenance.json"):
        assert (d / "run" / f).exists()
    assert run("recon", "dl", "--input", d / "acq", "--mask", d / "acq_mask", "--out", d / "dl",
               "--checkpoint", d / "run" / "model") == 0


def test_missing_model(chain, capsys):
    d = chain
    code = run("recon", "dl", "--input", d / "acq", "--mask", d / "acq_mask", "--out", d / "dl2",
               "--checkpoint", d / "none")
    assert code == 2
    assert "error[missing-model]" in capsys.readouterr().err
    assert not (d / "dl2.json").exists()


def test_never_overwrites(chain, capsys):
    code = run("phantom", "--out", chain / "ph", "--seed", 1)
    assert code == 2 and "error[output-exists]" in capsys.readouterr().err


def test_usage_error(capsys):
    assert run("emulate", "--input", "x") == 2
    assert "error[usage]" in capsys.readouterr().err


def test_deterministic_and_replayable(chain, tmp_path):
    prov = json.loads((chain / "acq.provenance.json").read_text())
    argv = list(prov["argv"])
    argv[argv.index("--out") + 1] = str(tmp_path / "again")
    assert cli.main(argv) == 0
    assert (tmp_path / "again.raw").read_bytes() == (chain / "acq.raw").read_bytes()
    assert (tmp_path / "again_mask.raw").read_bytes() == (chain / "acq_mask.raw").read_bytes()


def test_bias_correct(chain):
    assert run("bias-correct", "--input", chain / "ph_truth", "--out", chain / "bc") == 0
    assert (chain / "bc_field.json").exists()


def test_mask_gen_and_study(tmp_path, capsys):
    assert run("mask-gen", "--out", tmp_path / "m", "--seed", 0, "--extents", 64, 64, "--accel", 3.7,
               "--png") == 0
    assert (tmp_path / "m.png").exists()
    assert run("study", "assign", "--out", tmp_path / "a.csv", "--seed", 4, "--n", 5) == 0
    assert run("study", "analyze", "--assignments", tmp_path / "a.csv", "--out", tmp_path / "rep") == 0
