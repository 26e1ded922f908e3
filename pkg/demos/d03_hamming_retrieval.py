"""
Binary codes, Hamming ranking and mAP
=====================================

Continuous codes are binarized by sign, packed into 64-bit words and ranked
by popcount distance. Mean average precision is then computed over the
ranking of every query.
"""

import numpy as np

from hashcondense.hashing import build_codebook
from hashcondense.retrieval import binarize, hamming_distances, hamming_rank, mean_average_precision

rng = np.random.default_rng(0)
K, classes = 32, 5

# Class centers from a Hadamard matrix are K/2 bits apart from each other.
centers = build_codebook(classes, K, seed=0)
print("pairwise center distances:", sorted(set(((K - centers @ centers.T) // 2)[np.triu_indices(classes, 1)].tolist())))

# Database and queries are noisy copies of their class center.
def noisy(labels, noise):
    return centers[labels] + noise * rng.normal(size=(len(labels), K))

db_labels = rng.integers(0, classes, 500)
q_labels = rng.integers(0, classes, 50)
for noise in (0.5, 1.0, 2.0, 4.0):
    db = binarize(noisy(db_labels, noise), db_labels)
    q = binarize(noisy(q_labels, noise), q_labels)
    rep = mean_average_precision(q, db, precision_ks=[10, 100])
    print(f"noise {noise}: mAP {100 * rep.map_value:6.2f}  P@10 {rep.precision_at_k[10]:.2f}")

# Distances are a linear function of the +-1 inner product.
a, b = rng.choice([-1, 1], size=(1, K)), rng.choice([-1, 1], size=(4, K))
print("hamming:", hamming_distances(binarize(a), binarize(b))[0], " (K - dot)/2:", (K - b @ a[0]) // 2)
print("ranking:", hamming_rank(binarize(a), binarize(b)))
