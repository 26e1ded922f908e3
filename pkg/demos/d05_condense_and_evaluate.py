"""
Condensing digits and retrieving with the condensed set
=======================================================

Ten images per class are synthesized from the digits training split, a
hashing network is trained on them, and the query split is retrieved from
the full training database. Random real images and plain distribution
matching (no weight perturbation, one image per canvas) serve as baselines.
Takes a few minutes on one CPU core.
"""

import time
from dataclasses import replace

import torch

from hashcondense import CondenseConfig, HashLossConfig, condense, condense_dm_baseline, select_random
from hashcondense.data import load_dataset
from hashcondense.hashing import encode, train_hash
from hashcondense.retrieval import binarize, mean_average_precision

torch.set_num_threads(1)
train = load_dataset(None, "digits", "train")
query = load_dataset(None, "digits", "query")
cfg = CondenseConfig(ipc=10, iterations=50, arch="tiny-conv", seed=0)
hcfg = HashLossConfig(code_bits=32, seed=0)


def retrieval_map(train_set):
    model = train_hash(train_set, hcfg, "tiny-conv")
    db = binarize(encode(model.params, train.images), train.labels.numpy())
    q = binarize(encode(model.params, query.images), query.labels.numpy())
    return mean_average_precision(q, db).map_value


sets = {"random": select_random(train, 10, seed=0).to_synthetic(train)}
for name, fn in (("dm-plain", condense_dm_baseline), ("iem", condense)):
    t0 = time.perf_counter()
    syn, trace = fn(train, cfg)
    print(f"{name:<8} condensed in {time.perf_counter() - t0:5.1f}s, "
          f"loss {trace.losses[0]:.3f} -> {trace.losses[-1]:.3f}, f={syn.formation_factor}")
    sets[name] = replace(syn, pixels=syn.exported())

for name, s in sets.items():
    print(f"{name:<8} mAP@32 bits {100 * retrieval_map(s):6.2f}")
