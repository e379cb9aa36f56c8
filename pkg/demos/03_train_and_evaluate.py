"""Train the relation network on a small synthetic set and score it.

A compressed version of the overfit recipe: ~40 images, 250 iterations,
then role AP per action on the training split. Takes around a minute.
"""

from posehoi.config import ModelConfig, TrainConfig
from posehoi.data import SyntheticSpec, generate_synthetic
from posehoi.evaluation import dataset_ground_truth, evaluate, run_inference
from posehoi.training import train


def main():
    dataset = generate_synthetic(SyntheticSpec(n_images=40, seed=5))
    pairs = sum(len(dataset.humans_in(im.id)) * len(dataset.objects_in(im.id))
                for im in dataset.images)
    print(f"dataset: {len(dataset.images)} images, {pairs} pairs, "
          f"{len(dataset.interactions)} positive")

    cfg = TrainConfig(model=ModelConfig(d=16, d_hol=48, d_loc=96),
                      iterations=250, lr=1e-2, lr_drop_iteration=200, seed=0, log_every=50)
    result = train(dataset, cfg, progress=lambda it, loss: print(f"  iter {it:4d}  loss {loss:.4f}"))

    detections = run_inference(result.model, dataset)
    report = evaluate(detections, dataset_ground_truth(dataset), n_actions=cfg.model.a,
                      known_images={im.id for im in dataset.images})
    print()
    print(report.table(dataset.actions))


if __name__ == "__main__":
    main()
