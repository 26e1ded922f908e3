"""
Random and herding coresets
===========================

Before synthesizing anything, one can simply keep a few real images per
class. Herding keeps the running mean of the chosen embeddings close to the
class mean; random selection draws uniformly.
"""

import numpy as np

from hashcondense.coreset import herding_order, select_herding, select_random
from hashcondense.data import load_dataset
from hashcondense.models import init_network

# A 2-D picture of herding. The running mean gets close to the class mean
# quickly. It is not monotone, though: each step is the best extension of the
# current prefix, and a good prefix can leave only poor extensions.
pts = np.random.default_rng(1).normal(size=(40, 2)) * [3.0, 1.0]
order = herding_order(pts, 10)
for t in (1, 2, 5, 10):
    print(f"{t:2d} points: distance of running mean to class mean "
          f"{np.linalg.norm(pts[order[:t]].mean(0) - pts.mean(0)):.4f}")

# On the built-in digits set (8x8 scans upsampled to 16x16).
train = load_dataset(None, "digits", "train")
print(train.name, len(train), "images, class sizes", train.class_sizes())
rand = select_random(train, ipc=5, seed=0)
theta = init_network("tiny-conv", 32, seed=0, channels=train.channels, image_side=train.image_side)
herd = select_herding(train, ipc=5, theta=theta)
print("random  class 0:", rand.selected_indices[0])
print("herding class 0:", herd.selected_indices[0])
syn = herd.to_synthetic(train)
print("materialized:", tuple(syn.pixels.shape), f"ratio {100 * syn.provenance['ratio']:.1f}% of the train split")
