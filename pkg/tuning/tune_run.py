"""Tuning harness: one (config-variant, seed) run per invocation, JSON result to stdout."""
import json, sys, time
import numpy as np
from ssdc.data import generate_dataset, DataCfg
from ssdc.model import Detector, ModelCfg
from ssdc.trainer import TrainCfg, EmaSsmCfg, run_training

variant, seed = sys.argv[1], int(sys.argv[2])
n_src, n_tgt, n_held = int(sys.argv[3]), int(sys.argv[4]), int(sys.argv[5])
thr = float(sys.argv[6]); ema = float(sys.argv[7]); trms = float(sys.argv[8])

mcfgs = {
    "src":    (ModelCfg(use_said=False, use_coupling=False, channels=16), True),
    "nosaid": (ModelCfg(use_said=False, use_coupling=False, channels=16), False),
    "hard":   (ModelCfg(said_mode="hard", sigma_h=0.18, low_pass_invariant=True, channels=16), False),
    "soft":   (ModelCfg(said_mode="soft", channels=16), False),
    "nocouple": (ModelCfg(said_mode="hard", sigma_h=0.18, low_pass_invariant=True, channels=16, use_coupling=False), False),
}
mcfg, source_only = mcfgs[variant]
ds = generate_dataset(seed, n_src, 3, n_target=n_tgt, n_heldout=n_held, cfg=DataCfg(target_style_rms=trms))
det = Detector(mcfg)
cfg = TrainCfg(burn_in_steps=500, mutual_steps=2000, lr=0.1, source_only=source_only,
               conf_threshold=thr, ema=EmaSsmCfg(alpha_ema=ema))
t0 = time.time()
state, summary = run_training(det, ds, cfg, seed)
print(json.dumps({"variant": variant, "seed": seed,
                  "teacher": summary["final_eval"]["mean_accuracy"],
                  "student": summary["student_eval"]["mean_accuracy"],
                  "secs": round(time.time()-t0)}))
