"""Inspect the learned per-keypoint attention on fresh scenes.

Trains briefly, then prints which keypoints the attention head highlights
for each positive pair, grouped by the pair's action. With enough training
the anchor joints of an action (wrist for hold, ankle for kick, ...) should
float to the top. Overlays are written to demos/out/attention/.
"""

import os
from collections import defaultdict

import numpy as np

from posehoi.config import ModelConfig, TrainConfig
from posehoi.data import SyntheticSpec, generate_synthetic, render_image
from posehoi.evaluation import predict_image
from posehoi.geometry import KEYPOINT_NAMES, union_box
from posehoi.training import train
from posehoi.visualize import draw_overlay

OUT = os.path.join(os.path.dirname(__file__), "out", "attention")


def main():
    os.makedirs(OUT, exist_ok=True)
    train_ds = generate_synthetic(SyntheticSpec(n_images=80, seed=5))
    cfg = TrainConfig(model=ModelConfig(d=16, d_hol=48, d_loc=96),
                      iterations=400, lr=1e-2, lr_drop_iteration=320, seed=0, log_every=100)
    result = train(train_ds, cfg, progress=lambda it, loss: print(f"  iter {it:4d}  loss {loss:.4f}"))
    model = result.model

    test_ds = generate_synthetic(SyntheticSpec(n_images=40, seed=99))
    sums = defaultdict(lambda: np.zeros(len(KEYPOINT_NAMES)))
    counts = defaultdict(int)
    saved = 0
    for im in test_ds.images:
        res = predict_image(model, test_ds, im.id)
        if res["scores"] is None:
            continue
        for i, (h, o) in enumerate(res["records"]):
            actions = test_ds.pair_actions(h.id, o.id)
            if len(actions) != 1:
                continue
            beta = res["scores"]["beta"][i]
            action = test_ds.actions[actions[0]]
            sums[action] += beta
            counts[action] += 1
            if saved < 8:
                prop = res["proposals"][i]
                overlay = draw_overlay(render_image(test_ds, im.id), prop, beta,
                                       union_box(prop.human, prop.object))
                overlay.save(os.path.join(OUT, f"{action}_{saved}.png"))
                saved += 1

    print("\nmean attention per keypoint (top four), by action:")
    for action in test_ds.actions:
        if not counts[action]:
            continue
        mean = sums[action] / counts[action]
        top = np.argsort(mean)[::-1][:4]
        shown = ", ".join(f"{KEYPOINT_NAMES[k]}={mean[k]:.2f}" for k in top)
        print(f"  {action:>6} (bound to {test_ds.action_bindings[action]}, n={counts[action]}): {shown}")
    print(f"\noverlays in {OUT}")


if __name__ == "__main__":
    main()
