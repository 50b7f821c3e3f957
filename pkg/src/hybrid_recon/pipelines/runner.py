"""File-based orchestration of both experiments: simulate, train, infer, evaluate, report.

Everything lives under one output directory::

    config.txt                     the configuration used
    data/<split>/<case>.kspace.hrc raw multi-coil k-space
    truth/<case>/<name>.hrc        ground truth, read only by ``evaluate``
    checkpoints/<model>/           network weights and ADAM state
    references/<case>.hrc          stage-1 outputs used as stage-2 targets
    predictions/<model>/<case>.hrc test-set outputs
    metrics.csv, summary.txt       evaluation results
    images/<model>/<case>.png      bitmaps for visual inspection

Only :func:`evaluate` opens the truth store; the store's access log is
written next to the metrics so the stage separation can be audited.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import exp1, exp2
from .config import ExperimentConfig, load_config
from .container import load_checkpoint, load_into, read_array, save_bitmap, save_checkpoint, write_array
from .data import TruthStore, load_cases, save_cases, simulate as simulate_cases
from .metrics import MetricsReport, binned_errors, nmse, relative_error_map, ssim_value
from ..fitting import FittingNetwork

log = logging.getLogger(__name__)

T1_WINDOW = (0.0, 3000.0)


def _dirs(out) -> dict:
    out = Path(out)
    return {k: out / k for k in ("data", "truth", "checkpoints", "references", "predictions", "images")}


def stored_config(out) -> ExperimentConfig:
    return load_config(Path(out) / "config.txt")


def simulate(cfg: ExperimentConfig, out) -> dict:
    """Write raw k-space and (separately) ground truth; returns the cases."""
    d = _dirs(out)
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    cases, truth = simulate_cases(cfg)
    save_cases(cases, d["data"])
    truth.save(d["truth"])
    log.info("simulated %d cases into %s", sum(len(v) for v in cases.values()), out)
    return cases


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    return {"experiment": cfg.experiment, "matrix_size": cfg.matrix_size, "blocks": cfg.blocks,
            "hidden": cfg.hidden, "components": cfg.components, "seed": cfg.seed, **extra}


def _save_net(d: dict, name: str, cfg: ExperimentConfig, net, optimizer=None, **extra) -> None:
    save_checkpoint(d["checkpoints"] / name, net.parameters(), optimizer, _meta(cfg, **extra))


def _train_meta(res) -> dict:
    """Best-validation epoch (the weights kept) next to the final-epoch losses."""
    meta = {"best_epoch": res.best_epoch, "final_train_loss": f"{res.train_loss[-1]:.6g}"}
    if res.val_loss:
        meta.update(best_val_loss=f"{res.val_loss[res.best_epoch]:.6g}", final_val_loss=f"{res.val_loss[-1]:.6g}")
    return meta


def _check_meta(cfg: ExperimentConfig, meta: dict, name: str) -> None:
    for key in ("experiment", "matrix_size", "blocks", "hidden", "components"):
        if key in meta and str(getattr(cfg, key)) != meta[key]:
            raise ValueError(f"checkpoint {name}: {key}={meta[key]} but config has {getattr(cfg, key)}")


def _load_recon(d: dict, name: str, cfg: ExperimentConfig):
    params, _, meta = load_checkpoint(d["checkpoints"] / name)
    _check_meta(cfg, meta, name)
    net = exp1.new_network(cfg, cfg.seed) if cfg.experiment == "lung" else exp2.new_network(cfg, cfg.seed)
    load_into(net.parameters(), params)
    return net


def _load_fit(d: dict, name: str, cfg: ExperimentConfig, n_times: int) -> FittingNetwork:
    params, _, meta = load_checkpoint(d["checkpoints"] / name)
    _check_meta(cfg, meta, name)
    net = FittingNetwork(n_times, seed=cfg.seed)
    load_into(net.parameters(), params)
    return net


def lung_models(cfg: ExperimentConfig) -> list:
    return ["stage1"] + [f"{m}_R{r}" for r in cfg.accelerations for m in exp1.METHODS]


def t1map_models(cfg: ExperimentConfig) -> list:
    return ["stage1"] + [f"{m}_rep{b}" for b in cfg.repetition_budgets for m in exp2.METHODS]


# ---------------------------------------------------------------- training

def train(cfg: ExperimentConfig, out, cases: dict | None = None) -> None:
    """Train both stages (and the baselines) from the raw data under ``out``."""
    cases = load_cases(cfg, _dirs(out)["data"]) if cases is None else cases
    if cfg.experiment == "lung":
        _train_lung(cfg, out, cases)
    else:
        _train_t1map(cfg, out, cases)


def _train_lung(cfg: ExperimentConfig, out, cases: dict) -> None:
    d = _dirs(out)
    n = cfg.matrix_size
    res = exp1.train_stage1(cfg, cases["train"], cases["val"])
    _save_net(d, "stage1", cfg, res.net, res.optimizer, **_train_meta(res))
    known = cases["train"] + cases["val"]
    refs = exp1.stage1_references(res.net, known, n)
    for cid, img in refs.items():
        write_array(d["references"] / f"{cid}.hrc", img)
    targets = {"hybrid": refs, "supervised_noisy": exp1.noisy_references(known, n), "selfsup": None}
    for rate in cfg.accelerations:
        for method in exp1.METHODS:
            r = exp1.train_stage2(cfg, method, rate, cases["train"], cases["val"], targets[method])
            _save_net(d, f"{method}_R{rate}", cfg, r.net, r.optimizer, rate=rate, **_train_meta(r))
            log.info("trained %s at R=%d (best epoch %d)", method, rate, r.best_epoch)


def _train_t1map(cfg: ExperimentConfig, out, cases: dict) -> None:
    d = _dirs(out)
    times = cases["train"][0].times
    U = exp2.temporal_basis(cfg, times).U
    s1 = exp2.run_stage1(cfg, U, times, cases["train"], cases["val"])
    _save_net(d, "stage1", cfg, s1.recon.net, s1.recon.optimizer, **_train_meta(s1.recon))
    _save_net(d, "stage1_fit", cfg, s1.fit)
    for cid, series in s1.series.items():
        write_array(d["references"] / f"{cid}.hrc", series)
    for budget in cfg.repetition_budgets:
        for method in exp2.METHODS:
            s2 = exp2.run_stage2(cfg, U, times, method, budget, cases["train"], cases["val"], s1)
            name = f"{method}_rep{budget}"
            _save_net(d, name, cfg, s2.recon.net, s2.recon.optimizer, repetitions=budget, **_train_meta(s2.recon))
            _save_net(d, name + "_fit", cfg, s2.fit)
            log.info("trained %s with %d repetitions", method, budget)


# ---------------------------------------------------------------- inference

def infer(cfg: ExperimentConfig, out, cases: dict | None = None) -> dict:
    """Run every trained model on the test cases; returns ``{model: {case: array}}``."""
    d = _dirs(out)
    cases = load_cases(cfg, d["data"]) if cases is None else cases
    preds = {}
    if cfg.experiment == "lung":
        n = cfg.matrix_size
        full = [exp1.prepare(c, n) for c in cases["test"]]
        preds["noisy"] = {p.case_id: p.adjoint_image() * p.scale for p in full}
        for name in lung_models(cfg):
            net = _load_recon(d, name, cfg)
            rate = 1 if name == "stage1" else int(name.rsplit("_R", 1)[1])
            preds[name] = {c.case_id: exp1.infer(net, exp1.prepare(c, n, rate)) for c in cases["test"]}
    else:
        times = cases["test"][0].times
        U = exp2.temporal_basis(cfg, times).U
        for name in t1map_models(cfg):
            net = _load_recon(d, name, cfg)
            fit = _load_fit(d, name + "_fit", cfg, times.size)
            reps = None if name == "stage1" else int(name.rsplit("_rep", 1)[1])
            preds[name] = {c.case_id: exp2.predict_t1(net, fit, c, cfg, U, reps)[1].t1 for c in cases["test"]}
    for name, items in preds.items():
        for cid, arr in items.items():
            write_array(d["predictions"] / name / f"{cid}.hrc", arr)
    return preds


def load_predictions(out) -> dict:
    preds = {}
    for path in sorted(_dirs(out)["predictions"].glob("*/*.hrc")):
        preds.setdefault(path.parent.name, {})[path.stem] = read_array(path)
    return preds


# ---------------------------------------------------------------- evaluation

def evaluate(cfg: ExperimentConfig, out, predictions: dict | None = None,
             truth: TruthStore | None = None, bitmaps: bool = True) -> MetricsReport:
    """Score predictions against ground truth; the only step that reads truth."""
    d = _dirs(out)
    predictions = load_predictions(out) if predictions is None else predictions
    truth = TruthStore.load(d["truth"]) if truth is None else truth
    report = MetricsReport()
    for model, items in sorted(predictions.items()):
        for cid, pred in sorted(items.items()):
            if cfg.experiment == "lung":
                ref = truth.get(cid, "image", caller="evaluate")
                report.add(cid, f"{model}.ssim", ssim_value(pred, ref))
                report.add(cid, f"{model}.nmse", nmse(np.abs(pred), np.abs(ref)))
                if bitmaps:
                    save_bitmap(d["images"] / model / f"{cid}.png", pred, 0.0, float(np.abs(ref).max()))
            else:
                ref = truth.get(cid, "t1", caller="evaluate")
                err = relative_error_map(pred, ref)
                for label, value in binned_errors(err, ref).items():
                    report.add(cid, f"{model}.t1_error_{label}", value)
                inside = (ref >= 800) & np.isfinite(err)
                report.add(cid, f"{model}.t1_error_median", float(np.median(err[inside])))
                if bitmaps:
                    save_bitmap(d["images"] / model / f"{cid}.png", np.nan_to_num(pred), *T1_WINDOW, bits=16)
    Path(out).mkdir(parents=True, exist_ok=True)
    report.write_csv(Path(out) / "metrics.csv")
    (Path(out) / "truth_access.log").write_text(
        "".join(f"{caller},{case},{name}\n" for caller, case, name in truth.log), encoding="utf-8")
    return report


def report(cfg: ExperimentConfig, out) -> str:
    """Human summary of ``metrics.csv`` headed by the configuration line."""
    rep = MetricsReport.read_csv(Path(out) / "metrics.csv")
    text = rep.summary(cfg.header())
    (Path(out) / "summary.txt").write_text(text, encoding="utf-8")
    return text
