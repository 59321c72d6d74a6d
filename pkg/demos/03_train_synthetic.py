# Training hybrid(3) on synthetic gaze-like images
#
# TD images are one concentrated blob, ASD images are several blobs joined by
# thin traces. The run below is kept short; `involnet train --synthetic 250`
# does the full 30 epochs.

import sys

from involnet.data import AugmentSpec, SyntheticSpec, augment_dataset, generate_synthetic, split_dataset
from involnet.model import build_model
from involnet.train import TrainConfig, evaluate, train

per_class = int(sys.argv[1]) if len(sys.argv) > 1 else 100
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 3
seed = 7

ds = generate_synthetic(SyntheticSpec(per_class=per_class), seed=seed)
ds = split_dataset(ds, seed=seed)
ds = augment_dataset(ds, AugmentSpec(), seed=seed)
print(ds.split_sizes())

model = build_model("hybrid", seed=seed)


def progress(rec):
    print(f"epoch {rec.epoch:2d}  loss {rec.train_loss:.4f}  val acc {rec.val_accuracy:.1f}")


model, _ = train(model, ds, TrainConfig(epochs=epochs, seed=seed), progress=progress)

x, y = ds.arrays("test")
m = evaluate(model, x, y)
print(f"test accuracy {m.accuracy:.1f}  recall {m.recall:.1f}  f1 {m.f1:.1f}")
print(m.confusion)
