"""
Scoring with the encoders alone
===============================

After training, decoders, discriminators and the perceptual network are no
longer needed. Strip a checkpoint down to the two encoders and check that the
verification scores do not change.
"""

import tempfile
from pathlib import Path

import numpy as np

from cogan.data import SyntheticSpec, generate_synthetic_dataset
from cogan.evaluation import evaluate_encoders
from cogan.models import load_encoders, strip_to_encoders
from cogan.training import TrainConfig, latest_checkpoint, train_cogan

work = Path(tempfile.mkdtemp())
manifest = generate_synthetic_dataset(SyntheticSpec(num_classes=12, samples_per_class=4, seed=3), work / "data")

# two quick epochs of the full objective
train_cogan(TrainConfig(seed=5, epochs=2), manifest, work / "run")
full = latest_checkpoint(work / "run")
lean = strip_to_encoders(full, work / "encoders_only")

for path in (full, lean):
    size = sum(p.stat().st_size for p in path.glob("*.pt")) / 1e6
    print(f"{path.name:14s} {sorted(p.stem for p in path.glob('*.pt'))}  {size:.1f} MB")

scores = []
for path in (full, lean):
    _, enc_v, enc_i = load_encoders(path)
    report, s, _ = evaluate_encoders((enc_v, enc_i), manifest)
    scores.append(s.distances)
    print(f"{path.name:14s} AUC {report.auc:.4f}")

print("bit-identical distances:", np.array_equal(*scores))
