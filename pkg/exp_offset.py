"""A/B test: does a fixed DC offset on 3D patch features unblock learning?"""
import sys
import time

import numpy as np

import geofuse.training as T
from geofuse.scene import Feature3D, ProviderTables, SceneConfig, generate_corpus
from geofuse.scene import provide_3d as orig_provide_3d
from geofuse.geometry import default_rig
from geofuse.model import Model, SchemeConfig
from geofuse.training import StageConfig, TrainConfig, evaluate, model_config_for, prepare, train

USE_OFFSET = sys.argv[1] == "offset"
SCHEME = sys.argv[2] if len(sys.argv) > 2 else "swap"
N = int(sys.argv[3]) if len(sys.argv) > 3 else 32
EPOCHS = int(sys.argv[4]) if len(sys.argv) > 4 else 30

cfg = SceneConfig()
rig = default_rig(cfg.views)

_offset_cache = {}


def patched_provide_3d(sample, tables, cfg, rig):
    out = orig_provide_3d(sample, tables, cfg, rig)
    key = (cfg.provider_seed, cfg.feat3d_dim)
    if key not in _offset_cache:
        r = np.random.default_rng(np.random.SeedSequence((int(cfg.provider_seed), 7)))
        _offset_cache[key] = r.standard_normal(cfg.feat3d_dim)
    v = out.values.copy()
    v[0, :, 1 + out.registers :, :] += _offset_cache[key]
    return Feature3D(values=v, registers=out.registers)


if USE_OFFSET:
    T.provide_3d = patched_provide_3d

samples = generate_corpus(cfg, N, root_seed=0)
tables = ProviderTables(cfg)
tcfg = TrainConfig(
    stage1=StageConfig(epochs=0, lr=1e-3),
    stage2=StageConfig(epochs=EPOCHS, lr=1e-3),
    batch_size=16,
    seed=0,
    holdout_frac=0.0,
)
data = prepare(samples, tables, cfg, rig)
scfg = SchemeConfig(scheme=SCHEME)
model = Model(model_config_for(cfg, data.layout), scfg, data.layout, seed=0)
t0 = time.time()
hist = train(model, data, tcfg)
idx = np.arange(N)
acc, ce = evaluate(model, data, idx)
print(f"mode={'offset' if USE_OFFSET else 'plain '} scheme={SCHEME} n={N} ep={EPOCHS} "
      f"final_train_acc={acc:.3f} ce={ce:.4f} time={time.time()-t0:.1f}s")
losses = [h["train_loss"] for h in hist]
print("loss trail:", " ".join(f"{x:.3f}" for x in losses[:: max(1, len(losses)//10)]))
