"""Run a small day-by-day experiment and print the per-day test accuracy.

Images arrive in daily batches of 20; the model trains one epoch per day
and is evaluated on the global test split after each day. Compares a
short pre-training phase against starting from scratch.
"""

import tempfile
from pathlib import Path

from daylearn.config import parse_layers
from daylearn.data import gen_synthetic
from daylearn.protocol import ExperimentConfig, run_experiment

LAYERS = "conv:16:3:1:1,relu,pool:2,conv:16:3:1:1,relu,pool:2,flatten,dense:3"


def config(root, pretrain_size):
    return ExperimentConfig(
        layers=parse_layers(LAYERS, 32),
        image_size=32,
        optimizer_kind="adam",
        learning_rate=1e-3,
        loss_kind="softmax_ce",
        batch_size=16,
        pretrain_size=pretrain_size,
        pretrain_epochs=5,
        pretrain_target=0.70,
        total_days=8,
        n_per_day=20,
        epochs_per_day=1,
        strategy="global",
        seed=1,
        checkpoint_every=0,
        data_root=str(root),
    )


def main():
    with tempfile.TemporaryDirectory() as scratch:
        root = Path(scratch) / "synth"
        root.mkdir()
        gen_synthetic(3, 120, 32, 0.05, seed=0, out_root=root)

        for label, pre in (("pretrained", 60), ("from scratch", 0)):
            log = run_experiment(config(root, pre), Path(scratch) / f"run_{pre}")
            accs = {r.day: r.test_acc for r in log.records
                    if r.phase == "sequential" and r.test_acc is not None}
            trace = "  ".join(f"d{d}:{accs[d]:.2f}" for d in sorted(accs))
            print(f"{label:12s} test acc by day: {trace}")


if __name__ == "__main__":
    main()
