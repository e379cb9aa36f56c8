"""Build spatial configuration maps for a synthetic scene and save them as PNGs.

The map is the pair's geometric fingerprint: two binary masks plus a graded
skeleton raster, all drawn in the stretched union frame. Output lands in
demos/out/spatial_maps/.
"""

import os

from posehoi.data import SyntheticSpec, generate_synthetic, pair_proposals, render_image
from posehoi.spatial import build_scm
from posehoi.visualize import array_to_image, scm_channel_images

OUT = os.path.join(os.path.dirname(__file__), "out", "spatial_maps")


def main():
    os.makedirs(OUT, exist_ok=True)
    dataset = generate_synthetic(SyntheticSpec(n_images=3, seed=7))
    image_id = dataset.images[0].id

    array_to_image(render_image(dataset, image_id)).resize((256, 256)).save(
        os.path.join(OUT, "scene.png")
    )

    for i, proposal in enumerate(pair_proposals(dataset, image_id)):
        scm = build_scm(proposal, m=64)
        print(f"proposal {i}: map shape {scm.shape}, "
              f"human cells {int(scm[:, :, 0].sum())}, "
              f"object cells {int(scm[:, :, 1].sum())}, "
              f"skeleton cells {int((scm[:, :, 2] > 0).sum())}")
        for c, img in enumerate(scm_channel_images(scm)):
            img.resize((256, 256)).save(os.path.join(OUT, f"pair{i}_channel{c}.png"))
    print(f"wrote images to {OUT}")


if __name__ == "__main__":
    main()
