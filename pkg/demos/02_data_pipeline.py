"""Walk the data pipeline end to end in a scratch directory.

Generates a synthetic PGM dataset, splits it 70/10/20, builds the
3-class rotated variant, and shows augmentation plus normalization on
a single image.
"""

import tempfile
from pathlib import Path

from daylearn import data
from daylearn.rng import substream


def main():
    with tempfile.TemporaryDirectory() as scratch:
        root = Path(scratch) / "synth"
        root.mkdir()
        manifest = data.gen_synthetic(2, 30, 32, 0.05, seed=0, out_root=root)
        print(f"generated {len(manifest)} images, classes {manifest.class_names}")

        train, val, test = data.split_manifest(manifest, seed=0)
        print(f"split: {len(train)} train / {len(val)} val / {len(test)} test")

        rot_root = Path(scratch) / "rotated"
        rot_root.mkdir()
        rotated = data.build_rotated_dataset(manifest, root, rot_root, seed=0)
        counts = {c: 0 for c in rotated.class_names}
        for _, label in rotated.entries:
            counts[label] += 1
        print(f"rotated dataset: {counts}")

        rel, _ = manifest.entries[0]
        img = data.pgm_read(root / rel)
        aug = data.augment(img, data.AugmentConfig(), substream(0, "demo-aug"))
        tensor = data.normalize(aug)
        print(f"augmented {rel}: tensor shape {tensor.shape}, "
              f"range [{tensor.min():.2f}, {tensor.max():.2f}]")


if __name__ == "__main__":
    main()
