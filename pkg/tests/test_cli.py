import os

import numpy as np
import pytest

from xattn import cli
from xattn.checks import GradCheck, run_checks
from xattn.config import ConfigError, RunConfig, load_config, parse_config
from xattn.dataset import read_dataset, read_manifest
from xattn.netpbm import (NetpbmError, colorize, heatmap_to_gray, read_pgm, read_ppm, write_pgm, write_ppm)
from xattn.scenegen import compute_iou
from xattn.tensor import Tensor, record
from xattn.tensorio import load_checkpoint, load_tensor
from xattn.trainer import CSV_FIELDS, evaluate, model_from_config

TINY = """
seed = 3
image_size = 32
n_source = 3
n_target = 3
n_eval = 2
channels = 4
reduced_channels = 2
iterations = 4
pseudo_start = 0.5
pseudo_threshold = 0.2
disc_width = 0.0625
lr_seg = 0.001
"""


@pytest.fixture
def tiny(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(TINY + f"data_dir = {tmp_path / 'data'}\nout_dir = {tmp_path / 'run'}\n")
    return tmp_path, str(cfg_path)


def files_bytes(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


# config

def test_config_parse_defaults_and_types():
    cfg = parse_config("lambda_s = 0.5\nenable_cdsam = false  # comment\n\niterations = 10\n")
    assert cfg.lambda_s == 0.5 and cfg.enable_cdsam is False and cfg.iterations == 10
    assert cfg.lambda_t == 1.0 and cfg.num_classes == 5


@pytest.mark.parametrize("text", ["bogus = 1", "lambda_s = -1", "enable_cdcam = maybe", "iterations = x",
                                  "image_size = 60", "pseudo_threshold = 0", "seg_weights = 1,2",
                                  "reduced_channels = 40", "no equals sign"])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=9, lambda_adv=0.0025, enable_cdcam=False, data_dir="d x")
    path = tmp_path / "c.cfg"
    path.write_text(cfg.dumps())
    assert load_config(str(path)) == cfg


# netpbm

def test_netpbm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    gray = rng.integers(0, 256, size=(5, 7)).astype(np.uint8)
    rgb = rng.integers(0, 256, size=(4, 3, 3)).astype(np.uint8)
    write_pgm(str(tmp_path / "a.pgm"), gray)
    write_ppm(str(tmp_path / "a.ppm"), rgb)
    assert (tmp_path / "a.pgm").read_bytes()[:9] == b"P5\n7 5\n25"
    np.testing.assert_array_equal(read_pgm(str(tmp_path / "a.pgm")), gray)
    np.testing.assert_array_equal(read_ppm(str(tmp_path / "a.ppm")), rgb)
    with pytest.raises(NetpbmError):
        read_ppm(str(tmp_path / "a.pgm"))


def test_heatmap_and_palette():
    np.testing.assert_array_equal(heatmap_to_gray(np.full((2, 2), 0.25)), 128)
    g = heatmap_to_gray(np.array([[0.0, 0.5], [1.0, 0.25]]))
    assert g.min() == 0 and g.max() == 255
    c = colorize(np.array([[0, 255]], dtype=np.uint8))
    assert c.shape == (1, 2, 3) and c[0, 1].tolist() == [255, 255, 255]


# synth

def test_synth_deterministic_and_counts(tiny):
    tmp, cfg = tiny
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp / "d1")]) == 0
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp / "d2")]) == 0
    assert files_bytes(tmp / "d1") == files_bytes(tmp / "d2")
    rows = read_manifest(str(tmp / "d1"))
    assert [r[0] for r in rows].count("source") == 3 and len(rows) == 8
    bench = read_dataset(str(tmp / "d1"))
    assert len(bench.eval.images) == 2 and bench.source.images[0].shape == (3, 32, 32)
    assert (tmp / "d1" / "config.txt").exists()


def test_synth_empty(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("n_source = 0\nn_target = 0\nn_eval = 0\n")
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "manifest.txt").read_text() == ""


def test_synth_200_pairs(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_source = 200\nn_target = 0\nn_eval = 0\nimage_size = 8\n")
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    rows = read_manifest(str(tmp_path / "d"))
    assert len(rows) == 200
    assert all(os.path.exists(tmp_path / "d" / r[2]) and os.path.exists(tmp_path / "d" / r[3]) for r in rows)


def test_synth_disk_round_trip_is_lossless(tiny):
    from xattn.scenegen import make_benchmark
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    disk = read_dataset(str(tmp / "data"))
    mem = make_benchmark(3, 3, 3, 2, 32, 32)
    for a, b in zip(disk.target.images, mem.target.images):
        np.testing.assert_array_equal(a.data, b.data)


# train / eval / attn

def test_train_outputs_and_determinism(tiny):
    tmp, cfg = tiny
    assert cli.main(["synth", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp / "r1")]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp / "r2")]) == 0
    b1, b2 = files_bytes(tmp / "r1"), files_bytes(tmp / "r2")
    assert b1 == b2
    header = (tmp / "r1" / "train_log.csv").read_text().splitlines()
    assert header[0] == ",".join(CSV_FIELDS) and len(header) == 5
    assert (tmp / "r1" / "pseudo_labels" / "manifest.txt").read_text().startswith("target/0000.ppm\t0000.pgm")
    # the echoed config reproduces the run
    assert cli.main(["train", "--config", str(tmp / "r1" / "config.txt"), "--out", str(tmp / "r3")]) == 0
    assert files_bytes(tmp / "r3") == b1


def test_zero_iterations_checkpoint_equals_init(tiny):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    (tmp / "z.cfg").write_text(open(cfg).read() + "iterations = 0\n")
    assert cli.main(["train", "--config", str(tmp / "z.cfg"), "--out", str(tmp / "z")]) == 0
    ck = load_checkpoint(str(tmp / "z" / "checkpoint"))
    init = model_from_config(load_config(str(tmp / "z.cfg"))).parameters()
    assert set(ck) == set(init)
    for k in init:
        np.testing.assert_array_equal(ck[k].data, init[k].data)


def test_seed_flag_overrides_config(tiny):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    cli.main(["train", "--config", cfg, "--seed", "11", "--out", str(tmp / "s")])
    assert "seed = 11" in (tmp / "s" / "config.txt").read_text()


def test_eval_writes_csv_and_matches_iou_of_argmax(tiny):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    cli.main(["train", "--config", cfg])
    ck = str(tmp / "run" / "checkpoint")
    assert cli.main(["eval", "--config", cfg, "--checkpoint", ck, "--out", str(tmp / "ev")]) == 0
    lines = (tmp / "ev" / "eval.csv").read_text().splitlines()
    assert lines[0] == "class,iou" and lines[-1].startswith("mean,") and len(lines) == 7
    rc = load_config(cfg)
    model = model_from_config(rc)
    model.load_parameters(load_checkpoint(ck))
    bench = read_dataset(rc.data_dir)
    rep = evaluate(model, bench.eval.images, bench.eval.labels, bench.source.images)
    assert float(lines[-1].split(",")[1]) == rep.miou
    # threaded evaluation gives the same numbers
    assert evaluate(model, bench.eval.images, bench.eval.labels, bench.source.images, workers=3) == rep
    from xattn.model import predict_target
    preds = [predict_target(model, x, bench.source.images[i % 3]).argmax(axis=0)
             for i, x in enumerate(bench.eval.images)]
    assert compute_iou(np.stack(preds), np.stack(bench.eval.labels)).miou == pytest.approx(rep.miou)


def test_ground_truth_against_itself():
    lab = np.random.default_rng(0).integers(0, 5, size=(16, 16))
    assert compute_iou(lab, lab).miou == 1.0


def test_eval_missing_checkpoint_is_data_error(tiny, capsys):
    tmp, cfg = tiny
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(tmp / "nothing")]) == cli.EXIT_DATA
    assert "checkpoint" in capsys.readouterr().err


def test_train_without_dataset_is_data_error(tiny):
    _, cfg = tiny
    assert cli.main(["train", "--config", cfg]) == cli.EXIT_DATA


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert cli.main(["synth", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["synth", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG


def test_threads_env_validated(tiny, monkeypatch):
    _, cfg = tiny
    monkeypatch.setenv("XATTN_THREADS", "0")
    assert cli.main(["synth", "--config", cfg]) == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_exits_4(tiny, capsys):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    (tmp / "hot.cfg").write_text(open(cfg).read() + "lr_seg = 1e6\nlr_attn = 1e6\niterations = 30\n")
    assert cli.main(["train", "--config", str(tmp / "hot.cfg"), "--out", str(tmp / "hot")]) == cli.EXIT_NUMERIC
    assert "iteration" in capsys.readouterr().err


def test_attn_exports(tiny):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    cli.main(["train", "--config", cfg])
    out = tmp / "attn"
    rc = cli.main(["attn", "--config", cfg, "--checkpoint", str(tmp / "run" / "checkpoint"), "--out", str(out),
                   "--src-image", str(tmp / "data" / "source" / "0001.ppm"),
                   "--tgt-image", str(tmp / "data" / "eval" / "0000.ppm"),
                   "--src-pos", "1,2", "--tgt-pos", "3,0"])
    assert rc == 0
    m = load_tensor(str(out / "gamma_st_r1_c2.xten")).data
    assert m.shape == (4, 4) and m.sum() == pytest.approx(1.0, abs=1e-12)
    assert load_tensor(str(out / "gamma_ts_r3_c0.xten")).data.sum() == pytest.approx(1.0, abs=1e-12)
    assert read_pgm(str(out / "psi_st.pgm")).shape == (4, 4)
    assert len((out / "index.txt").read_text().splitlines()) == 4


def test_attn_zero_query_key_gives_uniform_gray(tiny):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    cli.main(["train", "--config", cfg])
    ck = tmp / "run" / "checkpoint"
    for name in ("sam.q.xten", "sam.k.xten"):
        t = load_tensor(str(ck / name))
        from xattn.tensorio import save_tensor
        save_tensor(str(ck / name), Tensor(np.zeros(t.shape)))
    out = tmp / "flat"
    assert cli.main(["attn", "--config", cfg, "--checkpoint", str(ck), "--out", str(out), "--src-pos", "0,0"]) == 0
    np.testing.assert_array_equal(read_pgm(str(out / "gamma_st_r0_c0.pgm")), 128)
    np.testing.assert_allclose(load_tensor(str(out / "gamma_st_r0_c0.xten")).data, 1 / 16)


def test_attn_out_of_bounds_position(tiny, capsys):
    tmp, cfg = tiny
    cli.main(["synth", "--config", cfg])
    cli.main(["train", "--config", cfg])
    rc = cli.main(["attn", "--config", cfg, "--checkpoint", str(tmp / "run" / "checkpoint"), "--src-pos", "4,0"])
    assert rc == cli.EXIT_CONFIG
    assert "outside" in capsys.readouterr().err


# gradcheck

def test_cmd_gradcheck_reports_injected_failure(capsys, monkeypatch):
    from xattn import checks, ops

    def corrupted(t):
        return record("bad", t.data ** 3, [t], lambda g, needs: [g * t.data ** 2])

    x = Tensor(np.array([0.5, -1.0, 2.0]))
    bad = GradCheck("corrupted_cube", lambda x: ops.sum(corrupted(x)), [x])
    monkeypatch.setattr(checks, "default_suite", lambda seed=0: checks.op_checks(seed)[:3] + [checks.linear_check(seed)])
    rc = cli.cmd_gradcheck(RunConfig(), extra=[bad])
    out = capsys.readouterr().out
    assert rc == cli.EXIT_NUMERIC
    assert "FAIL corrupted_cube" in out and "ok   linear_subgraph" in out


def test_linear_subgraph_error_tiny():
    from xattn.checks import linear_check
    assert run_checks([linear_check(0)])[0].error < 1e-8
