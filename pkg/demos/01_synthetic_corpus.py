"""
A synthetic two-spectrum periocular corpus
==========================================

Render a small deterministic dataset, look at a few visible/NIR pairs, and
check the split and the open-world pair counts.
"""

import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cogan.data import NIR, TEST, TRAIN, VIS, SyntheticSpec, generate_synthetic_dataset, load_raw
from cogan.evaluation import enumerate_test_pairs

out = Path(tempfile.mkdtemp()) / "corpus"

# 12 classes (6 subjects x 2 eyes), 4 samples per spectrum; 3 subjects go to TRAIN
manifest = generate_synthetic_dataset(SyntheticSpec(num_classes=12, samples_per_class=4, seed=1), out)
print("TRAIN classes:", manifest.classes(TRAIN))
print("TEST classes: ", manifest.classes(TEST))

# channel statistics come from TRAIN pixels only
print("mean", np.round(manifest.channel_stats.mean, 3), "std", np.round(manifest.channel_stats.std, 3))

# first two samples of three classes, visible on top of NIR
fig, axes = plt.subplots(2, 6, figsize=(9, 3.4))
for col, (cls, sample) in enumerate([(c, s) for c in manifest.classes(TRAIN)[:3] for s in (0, 1)]):
    for row, spectrum in enumerate((VIS, NIR)):
        rec = next(r for r in manifest.records if r.class_id == cls and r.spectrum == spectrum and r.sample_index == sample)
        axes[row, col].imshow(load_raw(manifest.abspath(rec), "desk"))
        axes[row, col].set_axis_off()
        if row == 0:
            axes[row, col].set_title(f"{cls} #{sample}", fontsize=8)
fig.tight_layout()
fig.savefig(out / "samples.png", dpi=90)
print("wrote", out / "samples.png")

# genuine pairs need vis index < nir index within a class; imposters are all cross-class pairs
pairs = enumerate_test_pairs(manifest)
print("TEST pairs (genuine, imposter):", pairs.counts)   # 6 classes x C(4,2) = 36; 24*24 - 6*16 = 480
