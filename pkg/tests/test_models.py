import math

import pytest
import torch

from hashcondense.models import (ConfigError, PerturbationConfig, extract_features, get_arch, hash_forward,
                                 hash_head, init_network, perturb, perturb_tensor, perturbation_delta)


def test_init_deterministic():
    a = init_network("convnet-3", 32, seed=0)
    b = init_network("convnet-3", 32, seed=0)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb and torch.equal(ta, tb)


def test_hash_weight_shape():
    theta = init_network("convnet-3", 64, seed=0)
    assert theta.hash_params["weight"].shape == (128 * 4 * 4, 64)
    assert theta.arch.feature_dim == 2048


def test_unknown_arch():
    with pytest.raises(ConfigError):
        init_network("resnetap-10", 32, 0)


def test_params_partition():
    theta = init_network("tiny-conv", 16, 1)
    names = [n for n, _ in theta.named_tensors()]
    assert len(names) == len(set(names))
    assert {n.split(".")[0] for n in names} == {"feature", "hash"}


def test_tiny_forward_shapes():
    theta = init_network("tiny-conv", 16, seed=1)
    x = torch.randn(4, 3, 16, 16)
    # 16px -> two 2x2 pools -> 4x4 spatial, width 32
    assert extract_features(theta, x).shape == (4, 32 * 4 * 4)
    codes = hash_forward(theta, x[:1])
    assert codes.shape == (1, 16) and torch.isfinite(codes).all()


def test_empty_and_identical_rows():
    theta = init_network("tiny-conv", 16, seed=1)
    assert extract_features(theta, torch.zeros(0, 3, 16, 16)).shape == (0, 512)
    img = torch.randn(1, 3, 16, 16)
    f = extract_features(theta, torch.cat([img, img]))
    assert torch.equal(f[0], f[1])


def test_rows_independent_of_batch():
    theta = init_network("tiny-conv", 8, seed=2)
    x = torch.randn(5, 3, 16, 16)
    full = extract_features(theta, x)
    assert torch.allclose(full[2], extract_features(theta, x[2:3])[0], atol=1e-6)
    assert torch.equal(extract_features(theta, x), full)


def test_shape_mismatch():
    theta = init_network("tiny-conv", 8, seed=2)
    with pytest.raises(ValueError):
        extract_features(theta, torch.zeros(2, 3, 32, 32))


def test_hash_is_head_of_features():
    theta = init_network("tiny-conv", 12, seed=3)
    x = torch.randn(3, 3, 16, 16)
    assert torch.allclose(hash_forward(theta, x), hash_head(theta, extract_features(theta, x)), atol=1e-6)


def test_zero_head_gives_zero_codes():
    theta = init_network("tiny-conv", 12, seed=3)
    theta.hash_params["weight"].zero_()
    theta.hash_params["bias"].zero_()
    assert torch.count_nonzero(hash_forward(theta, torch.randn(2, 3, 16, 16))) == 0


def test_arch_override_side():
    assert get_arch("tiny-conv", 1, 8).feature_dim == 32 * 2 * 2
    with pytest.raises(ConfigError):
        get_arch("convnet-3", 3, 12)


# --- weight perturbation ---------------------------------------------------

def test_perturb_alpha_zero_identity():
    theta = init_network("tiny-conv", 8, 0)
    out = perturb(theta, PerturbationConfig(alpha=0.0, noise_seed=5))
    for a, b in zip(theta.tensors(), out.tensors()):
        assert torch.equal(a, b)


def test_perturb_zero_layer_fixed():
    theta = init_network("tiny-conv", 8, 0)
    out = perturb(theta, PerturbationConfig(alpha=0.7, noise_seed=1))
    # instance-norm biases start at zero
    assert torch.count_nonzero(theta.feature_params["norm0.bias"]) == 0
    assert torch.equal(out.feature_params["norm0.bias"], theta.feature_params["norm0.bias"])


def test_perturb_hand_case():
    w = torch.tensor([3.0, 4.0], dtype=torch.float64)
    out = perturb_tensor(w, torch.tensor([1.0, 1.0], dtype=torch.float64), 0.1)
    expected = torch.tensor([3 + 0.3 / math.sqrt(2), 4 + 0.4 / math.sqrt(2)], dtype=torch.float64)
    assert torch.allclose(out, expected, atol=1e-12)
    assert torch.allclose(out, torch.tensor([3.2121, 4.2828], dtype=torch.float64), atol=1e-4)


def test_perturb_does_not_mutate():
    theta = init_network("tiny-conv", 8, 0)
    before = [t.clone() for t in theta.tensors()]
    perturb(theta, PerturbationConfig(alpha=0.5, noise_seed=2))
    assert all(torch.equal(a, b) for a, b in zip(before, theta.tensors()))


def test_perturb_reproducible_and_linear():
    theta = init_network("tiny-conv", 8, 0).to(torch.float64)
    a1 = perturb(theta, PerturbationConfig(alpha=0.1, noise_seed=9))
    a1b = perturb(theta, PerturbationConfig(alpha=0.1, noise_seed=9))
    a2 = perturb(theta, PerturbationConfig(alpha=0.2, noise_seed=9))
    for w, x, xb, y in zip(theta.tensors(), a1.tensors(), a1b.tensors(), a2.tensors()):
        assert torch.equal(x, xb)
        assert torch.allclose(y - w, 2 * (x - w), rtol=1e-12, atol=1e-15)


def test_delta_norm_bound():
    g = torch.Generator().manual_seed(0)
    w = torch.randn(6, 5, generator=g, dtype=torch.float64)
    d = torch.randn(6, 5, generator=g, dtype=torch.float64)
    delta = perturbation_delta(w, d, 0.3)
    assert torch.equal(perturbation_delta(w, d, 0.6), 2 * delta)
    expected = 0.3 * torch.linalg.vector_norm(d * w) / torch.linalg.vector_norm(d)
    assert torch.isclose(torch.linalg.vector_norm(delta), expected, rtol=1e-12)


def test_negative_alpha():
    with pytest.raises(ValueError):
        PerturbationConfig(alpha=-0.1)
