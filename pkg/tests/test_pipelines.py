import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from hybrid_recon.diffcore import Adam, Tensor
from hybrid_recon.pipelines import cli, exp1, exp2, runner
from hybrid_recon.pipelines.config import ExperimentConfig, default_config, load_config, parse_config
from hybrid_recon.pipelines.container import (load_checkpoint, load_into, read_array, save_bitmap,
                                              save_checkpoint, write_array)
from hybrid_recon.pipelines.data import TruthAccessError, TruthStore, case_ids, simulate
from hybrid_recon.pipelines.metrics import MetricsReport, binned_errors, nmse, relative_error_map, ssim_value

TINY_LUNG = """\
experiment = lung
matrix_size = 16
interleaves = 16
samples_per_readout = 32
train_cases = 2
val_cases = 1
test_cases = 2
epochs = 1
stage2_epochs = 1
blocks = 1
hidden = 4
"""

TINY_T1 = """\
experiment = t1map
matrix_size = 16
train_cases = 2
val_cases = 1
test_cases = 1
spokes_per_repetition = 16
repetitions = 4
repetition_budgets = 2, 3
blocks = 1
hidden = 4
epochs = 1
stage2_epochs = 1
fit_epochs = 2
"""


# ---------------------------------------------------------------- config

def test_parse_config_overrides_experiment_defaults():
    cfg = parse_config("experiment = t1map  # radial\n\nmatrix_size = 32\naccelerations = 2, 4\n")
    assert cfg.experiment == "t1map" and cfg.matrix_size == 32
    assert cfg.accelerations == (2, 4)
    assert cfg.coils == default_config("t1map").coils


def test_default_desk_scale():
    cfg = default_config("lung")
    assert (cfg.matrix_size, cfg.coils, cfg.blocks) == (48, 4, 6)
    assert cfg.train_cases == 20 and cfg.test_cases == 5
    assert cfg.repetition_budgets == (3, 5, 8)
    assert default_config("t1map").train_cases == 12


@pytest.mark.parametrize("text, match", [
    ("colour = red\n", "unknown config keys"),
    ("matrix_size 48\n", "expected 'key = value'"),
    ("seed = 1\nseed = 2\n", "duplicate"),
    ("matrix_size = big\n", "bad value"),
    ("experiment = cardiac\n", "experiment"),
    ("noise_sigma = -1\n", "non-negative"),
    ("split_pattern = blocks\n", "split_pattern"),
])
def test_config_errors(text, match):
    with pytest.raises((ValueError, KeyError), match=match):
        parse_config(text)


def test_config_text_round_trip(tmp_path):
    cfg = default_config("t1map").replace(seed=9, repetition_budgets=(2, 7))
    path = tmp_path / "c.txt"
    path.write_text(cfg.to_text(), encoding="utf-8")
    assert load_config(path) == cfg


def test_header_records_scale_and_seed():
    h = default_config("lung").replace(seed=3).header()
    assert h.startswith("# experiment=lung") and "seed=3" in h and "train=20" in h


# ---------------------------------------------------------------- container

@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6)), st.sampled_from(["f64", "f32", "c64"]))
def test_container_round_trip(tmp_path_factory, arr, code):
    path = tmp_path_factory.mktemp("hrc") / "a.hrc"
    data = arr * (1 + 1j) if code == "c64" else arr
    write_array(path, data, dtype=code)
    back = read_array(path)
    assert back.shape == arr.shape
    tol = 0 if code == "f64" else 1e-6
    np.testing.assert_allclose(back, data, rtol=tol, atol=tol * 1e-3)


def test_container_layout_is_header_then_little_endian_row_major(tmp_path):
    arr = np.array([[1 + 2j, 3 - 4j, 0.5j]], dtype=np.complex128)
    path = write_array(tmp_path / "c.hrc", arr)
    blob = path.read_bytes()
    assert blob.startswith(b"HRC1 c64 2 1 3\n")
    payload = np.frombuffer(blob[len(b"HRC1 c64 2 1 3\n"):], dtype="<f4")
    np.testing.assert_array_equal(payload, [1, 2, 3, -4, 0, 0.5])


@pytest.mark.parametrize("blob, match", [
    (b"no header", "missing"),
    (b"HRC2 f64 1 2\n", "not an HRC1"),
    (b"HRC1 f64 2 2\n", "dims"),
    (b"HRC1 f64 1 2\n\x00\x00", "payload"),
])
def test_container_rejects_malformed_files(tmp_path, blob, match):
    path = tmp_path / "bad.hrc"
    path.write_bytes(blob)
    with pytest.raises(ValueError, match=match):
        read_array(path)


def test_container_refuses_lossy_complex(tmp_path):
    with pytest.raises(TypeError):
        write_array(tmp_path / "x.hrc", np.ones(2, complex), dtype="f64")
    with pytest.raises(ValueError):
        write_array(tmp_path / "x.hrc", np.ones(2), dtype="i32")


def test_checkpoint_round_trip_with_optimizer_state(tmp_path):
    params = {"w": Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True),
              "b": Tensor(np.array([0.5]), requires_grad=True)}
    opt = Adam(params, lr=1e-3)
    opt.step({"w": np.ones((2, 3)), "b": np.array([2.0])})
    save_checkpoint(tmp_path / "ck", params, opt, {"experiment": "lung", "seed": 4})
    stored, state, meta = load_checkpoint(tmp_path / "ck")
    assert meta == {"experiment": "lung", "seed": "4"}
    assert state["step"] == 1 and state["lr"] == 1e-3
    np.testing.assert_array_equal(state["m"]["w"], opt.state_dict()["m"]["w"])
    fresh = {"w": Tensor(np.zeros((2, 3))), "b": Tensor(np.zeros(1))}
    load_into(fresh, stored)
    np.testing.assert_array_equal(fresh["w"].data, params["w"].data)


def test_checkpoint_mismatch_is_reported(tmp_path):
    save_checkpoint(tmp_path / "ck", {"w": Tensor(np.zeros(3))})
    stored, state, _ = load_checkpoint(tmp_path / "ck")
    assert state is None
    with pytest.raises(ValueError, match="differ"):
        load_into({"v": Tensor(np.zeros(3))}, stored)
    with pytest.raises(ValueError, match="shape"):
        load_into({"w": Tensor(np.zeros(4))}, stored)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")


@pytest.mark.parametrize("bits, mode, top", [(8, "L", 255), (16, "I;16", 65535)])
def test_bitmaps_are_windowed_grayscale(tmp_path, bits, mode, top):
    img = np.array([[0.0, 1500.0], [3000.0, 4500.0]])
    path = save_bitmap(tmp_path / "t1.png", img, 0.0, 3000.0, bits=bits)
    with Image.open(path) as im:
        assert im.mode == mode
        px = np.array(im)
    np.testing.assert_array_equal(px, [[0, round(top / 2)], [top, top]])


# ---------------------------------------------------------------- metrics

def test_nmse_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    assert nmse(x, x) == 0.0
    assert abs(nmse(1.01 * x, x) - 1e-4) < 1e-12
    with pytest.raises(ValueError):
        nmse(x, np.zeros_like(x))
    with pytest.raises(ValueError):
        nmse(x, x[:4])


def test_relative_error_examples():
    ref = np.array([1000.0, 1000.0, 0.0])
    err = relative_error_map(np.array([900.0, 1000.0, 50.0]), ref)
    assert err[0] == pytest.approx(10.0) and err[1] == 0.0 and np.isnan(err[2])
    err = relative_error_map(np.array([900.0, 1100.0, 5.0]), ref, valid=[True, False, True])
    assert np.isnan(err[1])


def test_binned_errors_use_400ms_bins_over_800_to_2000():
    ref = np.array([800.0, 1199.0, 1200.0, 1600.0, 2000.0, 2100.0, 500.0])
    err = np.array([1.0, 3.0, 5.0, 7.0, 9.0, 100.0, 100.0])
    assert binned_errors(err, ref) == {"800-1200": 2.0, "1200-1600": 5.0, "1600-2000": 8.0}


def test_ssim_of_identical_images_is_one():
    img = np.random.default_rng(1).random((16, 16))
    assert ssim_value(img, img) == pytest.approx(1.0, abs=1e-12)
    assert -1.0 <= ssim_value(img, np.flipud(img)) <= 1.0


def test_report_aggregates_and_round_trips(tmp_path):
    rep = MetricsReport()
    for i, v in enumerate([0.1, 0.3, float("nan")]):
        rep.add(f"c{i}", "m", v)
    rep.add("c0", "k", 2.0)
    agg = rep.aggregate()
    assert agg["m"] == pytest.approx((0.2, 0.1, 2))
    back = MetricsReport.read_csv(rep.write_csv(tmp_path / "m.csv"))
    assert back.aggregate() == agg
    assert "m" in back.summary("# hdr") and back.summary("# hdr").startswith("# hdr")


# ---------------------------------------------------------------- data and truth

def test_truth_store_refuses_other_callers_and_logs_everything():
    store = TruthStore()
    store.put("case", "image", np.ones(2))
    with pytest.raises(TruthAccessError):
        store.get("case", "image", caller="train")
    np.testing.assert_array_equal(store.get("case", "image", caller="evaluate"), np.ones(2))
    assert store.log == [("train", "case", "image"), ("evaluate", "case", "image")]


def test_simulation_is_seeded_and_splits_are_disjoint():
    cfg = parse_config(TINY_LUNG)
    a, truth = simulate(cfg)
    b, _ = simulate(cfg)
    c, _ = simulate(cfg.replace(seed=1))
    ids = [x.case_id for s in a.values() for x in s]
    assert len(set(ids)) == len(ids) == 5
    assert ids == [i for s in ("train", "val", "test") for i in case_ids(cfg, s)]
    np.testing.assert_array_equal(a["train"][0].kspace, b["train"][0].kspace)
    assert not np.allclose(a["train"][0].kspace, c["train"][0].kspace)
    assert set(truth.cases()) == set(ids)


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def lung_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("lung")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_LUNG, encoding="utf-8")
    out = root / "out"
    for sub in cli.SUBCOMMANDS:
        assert cli.main([sub, "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


def _tree_bytes(directory: Path) -> dict:
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_simulate_twice_is_byte_identical(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(TINY_LUNG, encoding="utf-8")
    for name in ("a", "b"):
        assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert any(str(k).endswith(".kspace.hrc") for k in a)


def test_seed_flag_changes_the_data(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(TINY_LUNG, encoding="utf-8")
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "2"])
    f = Path("data/train") / f"{case_ids(parse_config(TINY_LUNG), 'train')[0]}.kspace.hrc"
    assert (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()


def test_full_lung_run_writes_every_artifact(lung_run):
    cfg_path, out = lung_run
    cfg = load_config(cfg_path)
    for model in runner.lung_models(cfg):
        assert (out / "checkpoints" / model / "manifest.txt").exists()
    for model in runner.lung_models(cfg) + ["noisy"]:
        for cid in case_ids(cfg, "test"):
            assert (out / "predictions" / model / f"{cid}.hrc").exists()
            assert (out / "images" / model / f"{cid}.png").exists()
    summary = (out / "summary.txt").read_text(encoding="utf-8")
    assert summary.startswith(cfg.header())


def test_checkpoints_record_best_and_final_validation_losses(lung_run):
    _, out = lung_run
    _, _, meta = load_checkpoint(out / "checkpoints" / "hybrid_R2")
    assert {"best_epoch", "best_val_loss", "final_val_loss", "final_train_loss"} <= set(meta)
    assert float(meta["best_val_loss"]) <= float(meta["final_val_loss"])


def test_report_aggregate_equals_recomputation_from_rows(lung_run):
    _, out = lung_run
    with open(out / "metrics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    by_metric = {}
    for r in rows:
        by_metric.setdefault(r["metric"], []).append(float(r["value"]))
    lines = (out / "summary.txt").read_text(encoding="utf-8").splitlines()[2:]
    assert len(lines) == len(by_metric)
    for line in lines:
        metric, mean, std, n = line.split()
        vals = np.array(by_metric[metric])
        assert float(mean) == pytest.approx(vals.mean(), rel=1e-5)
        assert float(std) == pytest.approx(vals.std(), rel=1e-5, abs=1e-12)
        assert int(n) == vals.size


def test_only_evaluate_reads_truth(lung_run):
    _, out = lung_run
    lines = (out / "truth_access.log").read_text(encoding="utf-8").splitlines()
    assert lines and all(line.startswith("evaluate,") for line in lines)


def test_evaluate_identical_prediction_scores_perfectly(lung_run, tmp_path):
    cfg_path, out = lung_run
    cfg = load_config(cfg_path)
    truth = TruthStore.load(out / "truth")
    preds = {"oracle": {c: truth._data[(c, "image")] for c in case_ids(cfg, "test")}}
    rep = runner.evaluate(cfg, tmp_path, predictions=preds, truth=truth, bitmaps=False)
    agg = rep.aggregate()
    assert agg["oracle.ssim"][0] == pytest.approx(1.0, abs=1e-12)
    assert agg["oracle.nmse"][0] == 0.0


def test_checkpoint_reload_reproduces_outputs(lung_run):
    cfg_path, out = lung_run
    cfg = load_config(cfg_path)
    d = runner._dirs(out)
    cases = runner.load_cases(cfg, d["data"])
    net = runner._load_recon(d, "hybrid_R2", cfg)
    again = runner._load_recon(d, "hybrid_R2", cfg)
    case = cases["test"][0]
    a = exp1.infer(net, exp1.prepare(case, cfg.matrix_size, 2))
    b = exp1.infer(again, exp1.prepare(case, cfg.matrix_size, 2))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, read_array(d["predictions"] / "hybrid_R2" / f"{case.case_id}.hrc"),
                               rtol=1e-5, atol=1e-5 * np.abs(a).max())


def test_checkpoint_config_mismatch_is_an_error(lung_run):
    cfg_path, out = lung_run
    cfg = load_config(cfg_path).replace(blocks=3)
    with pytest.raises(ValueError, match="blocks"):
        runner._load_recon(runner._dirs(out), "stage1", cfg)


@pytest.mark.filterwarnings("ignore:some fitted pixels:RuntimeWarning")  # untrained fitter
def test_t1map_pipeline_runs_end_to_end(tmp_path):
    cfg_path = tmp_path / "t1.cfg"
    cfg_path.write_text(TINY_T1, encoding="utf-8")
    out = tmp_path / "out"
    for sub in cli.SUBCOMMANDS:
        assert cli.main([sub, "--config", str(cfg_path), "--out", str(out)]) == 0
    cfg = load_config(cfg_path)
    assert runner.t1map_models(cfg) == ["stage1", "hybrid_rep2", "selfsup_rep2", "hybrid_rep3", "selfsup_rep3"]
    rep = MetricsReport.read_csv(out / "metrics.csv")
    assert {m for _, m, _ in rep.rows} >= {"stage1.t1_error_median", "hybrid_rep3.t1_error_1200-1600"}
    cid = case_ids(cfg, "test")[0]
    with Image.open(out / "images" / "hybrid_rep2" / f"{cid}.png") as im:
        assert im.mode == "I;16"
    assert read_array(out / "predictions" / "stage1" / f"{cid}.hrc").shape == (16, 16)


def test_unknown_flag_prints_usage_and_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--config", "x.cfg", "--bogus"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly", "--config", "x.cfg"])
    assert exc.value.code != 0


def test_bad_config_returns_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n", encoding="utf-8")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_evaluate_without_predictions_dir_is_a_runtime_error(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(TINY_LUNG, encoding="utf-8")
    assert cli.main(["report", "--config", str(cfg_path), "--out", str(tmp_path / "none")]) == 1


def test_stage_two_needs_stage_one_outputs():
    cfg = parse_config(TINY_T1)
    with pytest.raises(ValueError, match="stage-1"):
        exp2.run_stage2(cfg, None, None, "hybrid", 2, [], [], None)
    with pytest.raises(ValueError, match="unknown method"):
        exp1.train_stage2(cfg, "magic", 2, [], [])


def test_experiment_config_is_a_plain_dataclass():
    assert isinstance(ExperimentConfig(), ExperimentConfig)


@pytest.mark.parametrize("name", ["lung", "t1map", "smoke_lung", "smoke_t1map"])
def test_shipped_configs_parse(name):
    cfg = load_config(Path(__file__).parents[1] / "configs" / f"{name}.cfg")
    assert cfg.experiment == name.split("_")[-1]
