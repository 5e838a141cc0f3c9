"""A short tour: render the box-bump families, train a small cooperative model,
and look at what it learned.

    python3 demos/quickstart.py [output_dir]

Takes about a minute on one CPU core. The model is far too small and too
briefly trained to be good; the point is to show the moving parts.
"""

import sys
from pathlib import Path

import numpy as np

from coopreg.experiments import latent_sweep, sweep_monotonicity
from coopreg.fields import warp_image
from coopreg.figures import pair_figure
from coopreg.metrics import dice, landmark_error, predict_fields, reconstruct, ae_relative_error
from coopreg.networks import CAEConfig, PrimaryConfig
from coopreg.rawio import write_png
from coopreg.synth import build_pair_dataset, make_sample
from coopreg.training import TrainConfig, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "quickstart_out")
out.mkdir(parents=True, exist_ok=True)

# The two synthetic families. Each sample carries its analytic landmarks.
for family, params in (("linear", (0.0, 0.5, 1.0)), ("rotating", (-50.0, 0.0, 50.0))):
    strip = np.concatenate([make_sample(family, p).image for p in params], axis=1)
    write_png(out / f"{family}_samples.png", strip)
s = make_sample("linear", 0.5)
print("linear t=0.5 landmarks (row, col):\n", s.landmarks)

# 20 shapes give 380 ordered pairs; a quarter of them are held out.
ds = build_pair_dataset("linear", n_shapes=20, seed=0)
print(f"{len(ds.train_index)} train pairs, {len(ds.test_index)} test pairs")

# Warm-up with a smoothness penalty, then hand regularization to the CAE.
config = TrainConfig(
    total_iterations=300, batch_size=8, learning_rate=1e-3, beta=1.0, log_every=50,
    primary=PrimaryConfig(levels=3, base_channels=4), cae=CAEConfig(h=1),
)
model = train(config, ds, progress=lambda it, v: print(f"  it {it:4d}  " + "  ".join(
    f"{k}={x:.4f}" for k, x in v.items())))

# Evaluate on held-out pairs.
idx = np.asarray(ds.test_index)
images = ds.images()
fields = predict_fields(model.primary, images[idx[:, 0]], images[idx[:, 1]])
registered = warp_image(images[idx[:, 0]], fields.astype(np.float64))
print("mean Dice      ", np.mean([dice(r, images[j]) for r, (_, j) in zip(registered, idx)]))
print("landmark error ", np.mean([landmark_error(f, ds.pair(i, j), ds.bump_width)
                                  for f, (i, j) in zip(fields, idx)]), "% of bump width")
print("CAE AE error   ", ae_relative_error(fields, reconstruct(model.cae, fields)), "%")

i, j = idx[0]
pair_figure(out / "pair.png", images[i], images[j], registered[0], fields[0])

# Sweep sources against the centered target and read the 1-D latent code.
rows = latent_sweep(model, "linear", 20, figure_path=out / "sweep.png")
print("Spearman(param, latent) =", round(sweep_monotonicity(rows), 3))
print("figures in", out)
