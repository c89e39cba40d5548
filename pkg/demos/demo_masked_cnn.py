"""Tour of the masked-kernel CNN pieces: Bernoulli masks, the distance
transform pooling limits, and the two-stage training loop on a toy target.
"""

import numpy as np

from spatrack import masked_cnn as mc
from spatrack.numerics import gaussian_map, rotate_image

rng = np.random.default_rng(1)

# masks: fixed sparse attention patterns per output channel
masks = mc.make_masks(4, 5, 5, 0.3, seed=7)
print("mask fill fractions:", masks.mean(axis=(1, 2)))
print("first mask:\n", masks[0].astype(int))

# distance transform pooling between its two limits
f = rng.normal(size=(7, 7))
flat = mc.dt_pool(f, mc.DtPoolParams(0, 0, 0, 0, bound=12))
sharp = mc.dt_pool(f, mc.DtPoolParams(50, 50, 0, 0, bound=12))
print(f"\nflat penalty -> constant map (max={f.max():.3f}): "
      f"{np.allclose(flat, f.max())}")
print(f"steep penalty -> identity: {np.array_equal(sharp, f)}")
mid = mc.dt_pool(f, mc.DtPoolParams(0.3, 0.3, 0, 0, bound=12))
print(f"in between, the map is smoothed: range {f.max()-f.min():.2f} -> "
      f"{mid.max()-mid.min():.2f}")

# two-stage training toward a centered bump
size = 24
model = mc.build_cnn(in_channels=3, out_channels=8, group_size=4, seed=2,
                     input_size=size)
x = rng.normal(size=(size, size, 3))
x_rot = rotate_image(x, 180.0)
target = gaussian_map(((size - 1) / 2, (size - 1) / 2), 2.5, size, size)

print("\ntwo-stage training:")
for step in range(301):
    mc.cnn_stage1_step(model, x, x_rot, target, 3e-4)
    if step % 100 == 0:
        print(f"  stage-1 step {step:3d}: loss {mc.stage1_loss(model, x, x_rot, target):9.2f}")
for step in range(151):
    mc.cnn_stage2_step(model, x, target, 3e-4)
    if step % 75 == 0:
        print(f"  stage-2 step {step:3d}: loss {mc.stage2_loss(model, x, target):9.3f}")

heat = mc.cnn_forward(model, x)
peak = np.unravel_index(np.argmax(heat), heat.shape)
print(f"final heat map peaks at {peak} (target center is "
      f"({(size-1)/2}, {(size-1)/2}))")
print("learned pooling curvatures:", [round(p.varpi_x, 4) for p in model.dt])
