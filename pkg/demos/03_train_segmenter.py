"""Pretrain a small segmenter on synthetic phantoms and segment a held-out case.

Runs a miniature version of the full recipe (seconds, not minutes).
Run:  python3 demos/03_train_segmenter.py
"""

import tempfile
from pathlib import Path

import numpy as np

from voxseg import train as tr
from voxseg.checkpoint import load_checkpoint
from voxseg.metrics import binarize, dice
from voxseg.phantoms import make_training_case
from voxseg.tensor import Tensor, no_grad
from voxseg.volume import VolumeGrid

# Eight 16-cube training phantoms plus two held-out ones, all from one seed.
dataset = [make_training_case(seed=5, case_index=i, size=16) for i in range(8)]
heldout = [make_training_case(seed=99, case_index=i, size=16) for i in range(2)]

# A scaled-down config: the real defaults use 200 iterations at 32 cubes.
config = tr.TrainConfig(
    pretrain_iterations=40,
    pretrain_batch=4,
    lr_initial=0.01,
    lr_drop_at=20,
    lr_drop_factor=10,
    seed=3,
    checkpoint_every=20,
    loss_weights=(1.0, 1.0, 1.0),
    g_base_filters=4,
    g_levels=2,
    g_attach_levels=(2, 0),
)

with tempfile.TemporaryDirectory() as d:
    gen, records = tr.pretrain_generator(config, dataset, Path(d))
    print("loss first 3 steps:", [f"{r.loss:.3f}" for r in records[:3]])
    print("loss last 3 steps: ", [f"{r.loss:.3f}" for r in records[-3:]])
    print("lr honored the drop:", records[0].lr == 0.01 and records[-1].lr == 0.001)

    # Checkpoints are byte-stable and reload to the identical network.
    reloaded = load_checkpoint(Path(d) / "pretrained.vxck")
    print("reload checksum matches:", reloaded.checksum() == gen.checksum())

# Segment the held-out phantoms: forward in inference mode, threshold at 0.5.
for i, (image, label) in enumerate(heldout):
    with no_grad():
        prob = gen(Tensor(image.values[None, None]), mode="infer").final_prob.data[0, 0]
    mask = binarize(VolumeGrid(prob, image.spacing, image.origin), 0.5)
    print(f"held-out case {i}: dice {dice(mask, label):.3f}, "
          f"predicted voxels {int(mask.values.sum())}, true {int(label.values.sum())}")

print("note: the full-scale recipe (200 iterations, 32-cube volumes, 64 cases)")
print("reaches held-out mean dice around 0.93; see the training pipeline demo.")
