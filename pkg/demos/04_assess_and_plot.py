"""Detect plateaus and accuracy spikes in a run log, then plot it.

Uses the hold-out-free assessment: a run can be stopped once day-local
validation accuracy has plateaued with no forgetting events in the
trailing window. Writes an SVG chart next to the run directory.
"""

import tempfile
from pathlib import Path

from daylearn.config import parse_layers
from daylearn.data import gen_synthetic
from daylearn.metrics import DetectorConfig, emit_plot, spike_detect, training_assessment
from daylearn.protocol import ExperimentConfig, run_experiment

LAYERS = "conv:16:3:1:1,relu,pool:2,conv:16:3:1:1,relu,pool:2,flatten,dense:3"


def main():
    with tempfile.TemporaryDirectory() as scratch:
        root = Path(scratch) / "synth"
        root.mkdir()
        gen_synthetic(3, 150, 32, 0.05, seed=0, out_root=root)

        cfg = ExperimentConfig(
            layers=parse_layers(LAYERS, 32), image_size=32,
            optimizer_kind="adam", learning_rate=1e-3, loss_kind="softmax_ce",
            batch_size=16, total_days=15, n_per_day=20, epochs_per_day=1,
            strategy="half_split", seed=2, checkpoint_every=0, data_root=str(root),
        )
        out = Path(scratch) / "run"
        log = run_experiment(cfg, out)

        detectors = DetectorConfig(window=5, slope_tolerance=0.02,
                                   variance_tolerance=0.01, spike_drop=0.15)
        report = training_assessment(log, detectors)
        print(f"plateaued={report['plateaued']} at index {report['plateau_index']}")
        print(f"forgetting events: {report['forgetting_events']}")
        print(f"recommendation: {report['recommendation']}")

        val = log.series("val_acc", phase="sequential")
        print(f"spike check on val acc: drops >= 0.15 at {spike_detect(val, 0.15)}")

        svg = Path(scratch) / "accuracy.svg"
        emit_plot(log, ["val_acc", "test_acc"], svg, phase="sequential")
        print(f"wrote {svg.name} ({svg.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
