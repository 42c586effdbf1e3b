"""End-to-end detection on synthetic data with a known anomaly script.

Generates a 5-channel series whose channel couplings rewire inside one
interval (marginals untouched) and whose single channel spikes inside
another, trains the detector on the clean 60% prefix, and scores the test
tail. Prints the seed-level AUC and the highest-scoring windows so the two
anomaly regimes are visible in the ranking.
"""

import numpy as np

from tsgad.dataio import split_normalize, synth_generate
from tsgad.train import TrainConfig, score, train

SEED = 7

dataset = synth_generate(
    n_channels=5,
    length=2000,
    anomaly_spec=[("interdependency_shift", 1400, 1520), ("spike", 1650, 1710)],
    seed=SEED,
    noise=0.05,
)
train_ds, test_ds = split_normalize(dataset, 0.6)
print(f"train rows: {train_ds.length} (all normal), "
      f"test rows: {test_ds.length} ({int(test_ds.labels.sum())} anomalous steps)")

config = TrainConfig(
    window=40, stride=10, batch_size=16, epochs=10, seed=SEED,
    learning_rate=0.01, encoder_out_scale=8.0,
)
result = train(train_ds, config)
print(f"epoch losses: {[round(x, 1) for x in result.epoch_means]}")

report = score(test_ds, result.checkpoint)
print(f"\nAUC-ROC {report.auc:.3f} over {len(report.scores)} windows; "
      f"threshold {report.threshold:.2f}; flagged {int(report.predicted.sum())}")

order = np.argsort(-report.scores)
print("\ntop 12 windows by anomaly score (starts are test-split-relative):")
print("start  label   score      d_ga     nll")
for idx in order[:12]:
    print(f"{int(report.window_starts[idx]):5d}  {int(report.labels[idx]):5d}"
          f"  {report.scores[idx]:9.2f}  {report.d_ga[idx]:7.3f}  {report.nll[idx]:9.2f}")
