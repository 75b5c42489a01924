import csv
import math

import numpy as np
import pytest

from asetm.cli import main, sweep_settings
from asetm.config import ConfigError, dump_config, load_config, parse_config
from asetm.data import RirCache, read_manifest
from asetm.dsp import read_wav

TINY = """
[experiment]
task = denoise
seed = 3

[data]
n_train = 2
n_val = 1
n_test = 2
segment_samples = 16000

[optim]
epochs = 2
"""


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "tiny.ini"
    ini.write_text(TINY)
    assert main(["gen-data", "-c", str(ini), "--out", str(root / "data")]) == 0
    return root, ini


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_defaults_round_trip():
    cfg = load_config()
    assert parse_config(dump_config(cfg)) == cfg
    paper = parse_config("[experiment]\nprofile = paper\n")
    assert paper.model.c_enc == 128 and paper.data.n_train == 10000
    assert parse_config(dump_config(paper)) == paper


def test_overrides_and_ablation_section():
    cfg = parse_config("[ablation]\nattention_on = off\nhybrid_loss_on = no\n", ["model.ssm_variant=m1"])
    assert not cfg.model.attention_on and not cfg.hybrid_loss_on and cfg.model.ssm_variant == "m1"
    assert cfg.ablation_tag() == "attoff_m1_hyboff"
    assert parse_config("", ["scene.lambda_sq_set=0.1, inf"]).scene.lambda_sq_set == (0.1, math.inf)


@pytest.mark.parametrize("text,overrides", [
    ("[nosuch]\na = 1\n", []),
    ("[model]\nwidth = 3\n", []),
    ("[model]\nn_tf = three\n", []),
    ("[model]\nn_tf = 3\n", []),
    ("[experiment]\ntask = paint\n", []),
    ("[scene]\nt60_set = 9.0\n", []),
    ("", ["optim.lr"]),
    ("", ["optim.lr=-1"]),
    ("not an ini", []),
])
def test_config_errors(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides)


def test_exit_codes(tmp_path, capsys):
    assert main(["show-config", "--set", "model.n_tf=4"]) == 0
    assert "n_tf = 4" in capsys.readouterr().out
    assert main(["show-config", "--set", "model.n_tf=5"]) == 2
    assert main(["show-config", "-c", str(tmp_path / "missing.ini")]) == 2
    assert main(["eval", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path), "--baseline", "identity"]) == 1
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o"), "--resume"]) == 1
    assert main(["sweep", "--data", str(tmp_path), "--out", str(tmp_path), "--axes", "colour"]) == 2


def test_numeric_abort_exit_code(tiny, tmp_path):
    root, ini = tiny
    args = ["train", "-c", str(ini), "--data", str(root / "data"), "--out", str(tmp_path / "nan"),
            "--set", "optim.lr=1e300", "--max-steps", "3"]
    assert main(args) == 3


def test_gen_data_deterministic(tiny, tmp_path):
    root, ini = tiny
    assert main(["gen-data", "-c", str(ini), "--out", str(tmp_path / "again")]) == 0
    a = (root / "data" / "manifest.tsv").read_text()
    assert a == (tmp_path / "again" / "manifest.tsv").read_text()
    for e in read_manifest(root / "data"):
        for rel in e.paths.values():
            assert (root / "data" / rel).read_bytes() == (tmp_path / "again" / rel).read_bytes()


def test_manifest_contents(tiny):
    root, _ = tiny
    entries = read_manifest(root / "data")
    assert [e.split for e in entries] == ["train"] * 2 + ["val"] + ["test"] * 2
    for e in entries:
        assert set(e.paths) == {"s", "x", "c"} and e.meta["snr_db"] == 5.0
        assert e.meta["spec"]["kind"] == "noise"


def test_identity_eval_matches_mix_construction(tiny):
    root, ini = tiny
    data = root / "data"
    assert main(["eval", "-c", str(ini), "--data", str(data), "--out", str(root / "ev"),
                 "--baseline", "identity", "--tag", "id"]) == 0
    rows = read_csv(root / "ev" / "id_report.csv")
    cfg = load_config(ini)
    cache = RirCache(cfg, data / "rirs")
    for row, e in zip(rows, [e for e in read_manifest(data) if e.split == "test"]):
        s = read_wav(data / e.paths["s"]).samples.astype(np.float64)
        n = read_wav(data / e.paths["x"]).samples - s
        p = cache.paths(e.meta["t60"])[0].taps
        # the reference-mic mix is at the configured SNR
        assert abs(10 * math.log10(np.sum(s ** 2) / np.sum(n ** 2)) - e.meta["snr_db"]) < 1e-3
        gain = lambda v: 10 * math.log10(np.sum(np.convolve(v, p)[: v.size] ** 2) / np.sum(v ** 2))  # noqa
        expected = -e.meta["snr_db"] + gain(n) - gain(s)
        assert abs(float(row["nmse_db"]) - expected) <= 0.5


def test_resume_reproduces_uninterrupted_run(tiny, tmp_path):
    root, ini = tiny
    data = str(root / "data")
    base = ["-c", str(ini), "--data", data]
    assert main(["train", *base, "--out", str(tmp_path / "a"), "--max-steps", "3"]) == 0
    assert main(["train", *base, "--out", str(tmp_path / "b"), "--max-steps", "1"]) == 0
    assert main(["train", *base, "--out", str(tmp_path / "b"), "--max-steps", "3", "--resume"]) == 0
    a = read_csv(tmp_path / "a" / "curves.csv")
    b = read_csv(tmp_path / "b" / "curves.csv")
    assert [r["step"] for r in b] == ["1", "2", "3"]
    for ra, rb in zip(a, b):
        assert abs(float(ra["total"]) - float(rb["total"])) < 1e-9
    from asetm.autodiff import load_checkpoint
    ca, cb = load_checkpoint(tmp_path / "a" / "last.ckpt"), load_checkpoint(tmp_path / "b" / "last.ckpt")
    assert set(ca) == set(cb)
    for k in ca:
        np.testing.assert_allclose(ca[k], cb[k], rtol=0, atol=1e-9)


def test_train_and_model_eval(tiny, tmp_path):
    root, ini = tiny
    out = tmp_path / "run"
    assert main(["train", "-c", str(ini), "--data", str(root / "data"), "--out", str(out)]) == 0
    assert (out / "best.ckpt").exists() and (out / "last.ckpt").exists() and (out / "config.ini").exists()
    val = read_csv(out / "val.csv")
    assert [r["epoch"] for r in val] == ["0", "1"]
    assert main(["eval", "-c", str(ini), "--data", str(root / "data"), "--out", str(out),
                 "--checkpoint", str(out / "best.ckpt"), "--grid"]) == 0
    rows = read_csv(out / "eval_report.csv")
    assert len(rows) == 2 and all(math.isfinite(float(r["nmse_db"])) for r in rows)
    assert main(["eval", "-c", str(ini), "--data", str(root / "data"), "--out", str(out),
                 "--checkpoint", str(out / "best.ckpt"), "--set", "model.c_enc=8"]) == 1


def test_baseline_eval(tiny):
    root, ini = tiny
    assert main(["eval", "-c", str(ini), "--data", str(root / "data"), "--out", str(root / "ev"),
                 "--baseline", "fxnlms", "--tag", "nlms"]) == 0
    assert len(read_csv(root / "ev" / "nlms_report.csv")) == 2
    spec = read_csv(root / "ev" / "nlms_spectrum.csv")
    assert len(spec) == 201 and float(spec[-1]["freq_hz"]) == 8000.0


def test_rir_cache_verb(tiny, tmp_path, capsys):
    _, ini = tiny
    assert main(["rir-cache", "-c", str(ini), "--out", str(tmp_path / "r")]) == 0
    names = {p.name for p in (tmp_path / "r").iterdir()}
    assert {"t60_0.15_primary.rir", "t60_0.15_secondary.rir"} <= names


def test_sweep_settings():
    runs = sweep_settings(["attention_on", "ssm_variant", "hybrid_loss_on"], full=False)
    assert [r[0] for r in runs] == ["reference", "attention_on-false", "ssm_variant-m1", "hybrid_loss_on-false"]
    assert len(sweep_settings(["attention_on", "ssm_variant"], full=True)) == 4


def test_grad_check_verb(capsys):
    assert main(["grad-check", "--skip-model"]) == 0
    out = capsys.readouterr().out
    assert "all passed" in out and "FAIL" not in out
