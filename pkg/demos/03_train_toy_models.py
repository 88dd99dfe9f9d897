"""Train the two toy video models on the moving-sprite dataset.

The image-conditioned model sees the reference frame as extra input
channels; the text-only twin predicts velocity from the class label alone.
Small configs keep this under a minute; scale up `FRAMES`, `SIZE` and
`STEPS` for the full desk-scale run.
"""

import pathlib
import time

import numpy as np

from i2vlab import (
    SpriteDatasetConfig,
    ToyDiT,
    ToyDiTConfig,
    TrainConfig,
    evaluate_loss,
    make_dataset,
    save_weights,
    train,
)

FRAMES = 4
SIZE = 4
STEPS = 400
OUT = pathlib.Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

dcfg = SpriteDatasetConfig(num_videos=32, frames=FRAMES, height=SIZE, width=SIZE, seed=0)
dataset = make_dataset(dcfg)
print(f"dataset: {len(dataset)} videos, class counts {dataset.class_counts()}")

for tag, in_channels in (("i2v", 2), ("t2v", 1)):
    cfg = ToyDiTConfig(
        frames=FRAMES, height=SIZE, width=SIZE,
        in_channels=in_channels, out_channels=1, layers=2,
    )
    model = ToyDiT(cfg, seed=0)
    print(f"\n{tag}: {model.parameter_count()} parameters, "
          f"uses_reference={cfg.uses_reference}")
    before = evaluate_loss(model, dataset, seed=99)
    t0 = time.time()
    result = train(model, dataset, TrainConfig(steps=STEPS, learning_rate=0.02, seed=0))
    after = evaluate_loss(model, dataset, seed=99)
    print(f"trained {STEPS} steps in {time.time() - t0:.1f}s")
    k = STEPS // 8
    curve = [float(np.mean(result.losses[i : i + k])) for i in range(0, STEPS, k)]
    print("loss curve (block means):", np.round(curve, 3))
    print(f"eval loss {before:.4f} -> {after:.4f} ({before / after:.1f}x lower)")
    path = OUT / f"{tag}.weights"
    save_weights(path, model.params)
    print("saved", path)
