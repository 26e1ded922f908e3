import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hashcondense.coreset import CoresetResult, herding_order, select_herding, select_random
from hashcondense.data import DataValidationError, LabeledDataset, NormStats
from hashcondense.models import extract_features, init_network

from conftest import make_toy
from oracles import brute_herding


def test_random_counts_and_full_class():
    ds = make_toy()
    res = select_random(ds, 2, seed=0)
    assert sum(len(v) for v in res.selected_indices.values()) == 6
    assert all(len(v) == 2 for v in res.selected_indices.values())
    full = select_random(ds, 10, seed=3)
    assert all(sorted(full.selected_indices[c]) == ds.class_index[c] for c in range(3))


def test_random_deterministic_and_valid():
    ds = make_toy()
    assert select_random(ds, 3, 7).selected_indices == select_random(ds, 3, 7).selected_indices
    res = select_random(ds, 3, 7)
    for c, rows in res.selected_indices.items():
        assert all(int(ds.labels[r]) == c for r in rows)


def test_ipc_too_large():
    with pytest.raises(DataValidationError):
        select_random(make_toy(), 11, 0)
    with pytest.raises(DataValidationError):
        select_herding(make_toy(), 0, init_network("tiny-conv", 8, 0, channels=3, image_side=8))


def test_duplicates_rejected():
    with pytest.raises(DataValidationError):
        CoresetResult({0: [1, 1]}, "random")


def test_herding_ipc1_nearest_mean():
    ds = make_toy()
    theta = init_network("tiny-conv", 8, 0, channels=3, image_side=8)
    res = select_herding(ds, 1, theta)
    with torch.no_grad():
        for c in range(3):
            rows = ds.class_index[c]
            f = extract_features(theta, ds.images[rows]).double()
            d = (f - f.mean(0)).norm(dim=1)
            assert res.selected_indices[c] == [rows[int(d.argmin())]]


def test_herding_identical_images_tie_break():
    img = torch.randn(1, 3, 8, 8).repeat(6, 1, 1, 1)
    ds = LabeledDataset(img, torch.zeros(6, dtype=torch.long), 1, "train", NormStats((0,) * 3, (1,) * 3))
    res = select_herding(ds, 3, init_network("tiny-conv", 8, 0, channels=3, image_side=8))
    assert res.selected_indices[0] == [0, 1, 2]


def test_herding_matches_bruteforce_stub():
    pts = [[0.0, 0.0], [2.0, 0.5], [-1.0, 1.0], [0.3, -2.0], [1.5, 1.5]]
    assert herding_order(np.array(pts), 3) == brute_herding(pts, 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 9))
def test_herding_oracle_random(seed, n):
    pts = np.random.default_rng(seed).normal(size=(n, 2)).round(3)
    k = min(n, 4)
    assert herding_order(pts, k) == brute_herding(pts.tolist(), k)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_herding_running_mean_distance_trend(seed):
    # The greedy step minimizes the distance at each prefix length, so every
    # prefix is no worse than extending the previous prefix by any other point.
    pts = np.random.default_rng(seed).normal(size=(8, 2))
    mu = pts.mean(0)
    order = herding_order(pts, 8)
    for t in range(1, 8):
        prefix = pts[order[:t]]
        best = np.linalg.norm(mu - prefix.mean(0))
        for j in set(range(8)) - set(order[:t - 1]):
            alt = np.vstack([pts[order[:t - 1]], pts[j:j + 1]])
            assert best <= np.linalg.norm(mu - alt.mean(0)) + 1e-12
    assert np.linalg.norm(mu - pts[order].mean(0)) < 1e-12


def test_json_and_materialize():
    ds = make_toy()
    res = select_random(ds, 2, seed=1)
    back = CoresetResult.from_json(res.to_json())
    assert back.selected_indices == res.selected_indices
    syn = back.to_synthetic(ds, seed=1)
    assert syn.formation_factor == 1 and len(syn) == 6
    assert syn.labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert torch.equal(syn.pixels[0], ds.images[res.selected_indices[0][0]])


def test_selectors_leave_data_untouched():
    ds = make_toy()
    before = ds.checksum()
    select_random(ds, 2, 0)
    select_herding(ds, 2, init_network("tiny-conv", 8, 0, channels=3, image_side=8))
    assert ds.checksum() == before
