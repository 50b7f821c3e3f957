"""
=====================================
Two-stage training on spiral lung data
=====================================

A small version of the spiral lung experiment: stage 1 learns to denoise
fully sampled noisy data from readout splits alone, and stage 2 learns R=2
reconstruction against the stage-1 outputs.  Scaled down to finish in a few
minutes on one core; the desk-scale numbers come from ``hybrid-recon`` with
the default lung config.
"""

from pathlib import Path

import numpy as np

from hybrid_recon.pipelines import exp1
from hybrid_recon.pipelines.config import default_config
from hybrid_recon.pipelines.container import save_bitmap
from hybrid_recon.pipelines.data import simulate
from hybrid_recon.pipelines.metrics import nmse, ssim_value

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

# %%
# Data
# ====

cfg = default_config("lung").replace(matrix_size=32, interleaves=32, samples_per_readout=100,
                                     train_cases=6, val_cases=1, test_cases=2, epochs=10, stage2_epochs=10,
                                     blocks=3, hidden=8)
cases, truth = simulate(cfg)
print(cfg.header())

# %%
# Stage 1: self-supervised denoising
# ==================================

stage1 = exp1.train_stage1(cfg, cases["train"], cases["val"])
print("stage-1 training loss by epoch:", np.round(stage1.train_loss, 4))

n = cfg.matrix_size
for case in cases["test"]:
    ref = truth.get(case.case_id, "image", caller="evaluate")
    noisy = exp1.noisy_references([case], n)[case.case_id]
    den = exp1.infer(stage1.net, exp1.prepare(case, n))
    print(f"{case.case_id}: NMSE noisy {nmse(np.abs(noisy), np.abs(ref)):.4f} -> "
          f"stage 1 {nmse(np.abs(den), np.abs(ref)):.4f}")
    top = float(np.abs(ref).max())
    save_bitmap(OUT / f"{case.case_id}_noisy.png", noisy, 0.0, top)
    save_bitmap(OUT / f"{case.case_id}_stage1.png", den, 0.0, top)

# %%
# Stage 2: supervised R=2 reconstruction against stage-1 references
# ================================================================

refs = exp1.stage1_references(stage1.net, cases["train"] + cases["val"], n)
hybrid = exp1.train_stage2(cfg, "hybrid", 2, cases["train"], cases["val"], refs)
selfsup = exp1.train_stage2(cfg, "selfsup", 2, cases["train"], cases["val"])
for case in cases["test"]:
    ref = truth.get(case.case_id, "image", caller="evaluate")
    prep = exp1.prepare(case, n, 2)
    for name, res in (("hybrid", hybrid), ("selfsup", selfsup)):
        out = exp1.infer(res.net, prep)
        print(f"{case.case_id} R=2 {name}: SSIM {ssim_value(out, ref):.4f}  NMSE {nmse(np.abs(out), np.abs(ref)):.4f}")
        save_bitmap(OUT / f"{case.case_id}_R2_{name}.png", out, 0.0, float(np.abs(ref).max()))
