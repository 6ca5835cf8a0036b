"""Scratch tuning driver (not part of the package)."""
import argparse
import json
import time

import numpy as np

from geofuse.scene import SceneConfig, ProviderTables, generate_corpus
from geofuse.geometry import default_rig
from geofuse.training import prepare, model_config_for, TrainConfig, StageConfig, train
from geofuse.model import Model, SchemeConfig

p = argparse.ArgumentParser()
p.add_argument("--patches", type=int, default=8)
p.add_argument("--objects", type=int, default=2)
p.add_argument("--margin", type=float, default=4.0)
p.add_argument("--samples", type=int, default=1536)
p.add_argument("--batch", type=int, default=16)
p.add_argument("--e1", type=int, default=14)
p.add_argument("--e2", type=int, default=8)
p.add_argument("--lr1", type=float, default=3e-3)
p.add_argument("--lr2", type=float, default=1.5e-3)
p.add_argument("--one-stage", action="store_true")
p.add_argument("--scheme", default="inject")
p.add_argument("--fheads", type=int, default=8)
p.add_argument("--fscale", type=int, default=4)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--text", type=int, default=6)
p.add_argument("--noise", type=float, default=0.01)
p.add_argument("--d1", type=int, default=128)
p.add_argument("--fhid", type=int, default=64)
p.add_argument("--layers", type=int, default=4)
p.add_argument("--inject", default="", help="comma list of layers; empty = scheme default")
p.add_argument("--mseed", type=int, default=-1, help="model init seed; -1 = same as --seed")
args = p.parse_args()

cfg = SceneConfig(
    patches_per_view=args.patches,
    objects_per_view=(args.objects, args.objects),
    margin=args.margin,
    text_tokens=args.text,
    noise_sigma=args.noise,
    feat3d_dim=args.d1,
)
rig = default_rig(cfg.views)
t0 = time.perf_counter()
samples = generate_corpus(cfg, args.samples, 0)
data = prepare(samples, ProviderTables(cfg), cfg, rig)
gen_s = time.perf_counter() - t0

skw = dict(scheme=args.scheme, heads=args.fheads, scale=args.fscale)
if args.inject:
    skw["inject_layers"] = tuple(int(x) for x in args.inject.split(","))
t0 = time.perf_counter()
m = Model(
    model_config_for(cfg, data.layout, fuser_hidden=args.fhid, layers=args.layers),
    SchemeConfig(**skw),
    data.layout,
    seed=args.seed if args.mseed < 0 else args.mseed,
)
tc = TrainConfig(
    stage1=StageConfig(args.e1, args.lr1),
    stage2=StageConfig(args.e2, args.lr2),
    batch_size=args.batch,
    seed=args.seed,
    one_stage=args.one_stage,
)
hist = train(m, data, tc)
dt = time.perf_counter() - t0
accs = [round(h["holdout_acc"], 3) for h in hist]
print(json.dumps({"args": vars(args), "gen_s": round(gen_s, 1), "train_s": round(dt, 1), "accs": accs}))
