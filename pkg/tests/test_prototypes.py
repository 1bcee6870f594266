import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_gradients
from shapefm import (
    ContrastiveConfig,
    PrototypeStore,
    ValidationError,
    init_prototypes,
    instance_loss,
    proto_loss,
    pseudo_label,
    shape_loss,
)
from shapefm.prototypes import prototype_nll, top_score_indices

TWO_CLASS_ORTHONORMAL_LOSS = -math.log(math.e / (math.e + 1.0))  # ~0.31326


def orthonormal_store(c=2, d=4):
    protos = torch.zeros(c, d, dtype=torch.float64)
    for i in range(c):
        protos[i, i] = 1.0
    return PrototypeStore(protos, beta=0.9)


class TestInitPrototypes:
    def test_same_seed_identical(self):
        a = init_prototypes(5, 16, seed=3)
        b = init_prototypes(5, 16, seed=3)
        assert torch.equal(a.prototypes, b.prototypes)
        assert torch.all(a.update_counts == 0)

    def test_expected_squared_norm_is_one(self):
        store = init_prototypes(10000, 32, seed=0)
        mean_sq = float((store.prototypes**2).sum(dim=1).mean())
        assert abs(mean_sq - 1.0) < 0.05

    def test_single_class_losses_vanish(self):
        store = init_prototypes(1, 8, seed=0)
        token = torch.randn(8, dtype=store.prototypes.dtype)
        assert float(instance_loss(token, store, 0, tau=1.0)) == pytest.approx(0.0)
        loss = shape_loss(
            torch.randn(5, 8), torch.rand(5), store, 0, tau=1.0, epsilon=1.0
        )
        assert float(loss) == pytest.approx(0.0)

    def test_bad_args(self):
        with pytest.raises(ValidationError):
            init_prototypes(0, 8, seed=0)
        with pytest.raises(ValidationError):
            init_prototypes(2, 0, seed=0)


class TestEmaUpdate:
    def test_arithmetic(self):
        store = PrototypeStore(torch.zeros(1, 2), beta=0.9)
        store.ema_update(0, torch.tensor([1.0, 1.0]))
        torch.testing.assert_close(store.prototypes[0], torch.tensor([0.1, 0.1]))
        assert store.update_counts.tolist() == [1]

    def test_two_updates_geometric(self):
        store = PrototypeStore(torch.zeros(1, 2, dtype=torch.float64), beta=0.7)
        c = torch.tensor([2.0, -1.0], dtype=torch.float64)
        store.ema_update(0, c)
        store.ema_update(0, c)
        torch.testing.assert_close(store.prototypes[0], (1 - 0.7**2) * c)

    def test_only_target_changes(self):
        store = init_prototypes(4, 8, seed=1)
        before = store.prototypes.clone()
        store.ema_update(2, torch.ones(8))
        for c in (0, 1, 3):
            assert torch.equal(store.prototypes[c], before[c])
        assert not torch.equal(store.prototypes[2], before[2])

    def test_out_of_range_rejected(self):
        store = init_prototypes(2, 4, seed=0)
        with pytest.raises(ValidationError):
            store.ema_update(2, torch.ones(4))
        with pytest.raises(ValidationError):
            store.ema_update(-1, torch.ones(4))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_contraction(self, seed):
        rng = torch.Generator().manual_seed(seed)
        beta = 0.1 + 0.8 * torch.rand((), generator=rng).item()
        p = torch.randn(1, 6, generator=rng, dtype=torch.float64)
        store = PrototypeStore(p, beta=beta)
        c = torch.randn(6, generator=rng, dtype=torch.float64)
        before = (p[0] - c).norm()
        store.ema_update(0, c)
        after = (store.prototypes[0] - c).norm()
        assert float(after) == pytest.approx(beta * float(before), rel=1e-12)

    def test_no_gradient_reaches_prototypes(self):
        store = init_prototypes(3, 8, seed=0)
        assert not store.prototypes.requires_grad
        token = torch.randn(8, requires_grad=True)
        loss = instance_loss(token, store, 1, tau=0.5)
        loss.backward()
        assert store.prototypes.grad is None
        assert token.grad is not None


class TestPseudoLabel:
    def test_nearest_by_cosine(self):
        store = orthonormal_store(2, 2)
        assert int(pseudo_label(store, torch.tensor([0.9, 0.1], dtype=torch.float64))) == 0
        assert int(pseudo_label(store, torch.tensor([0.1, 0.9], dtype=torch.float64))) == 1

    def test_scale_invariance(self):
        store = init_prototypes(5, 8, seed=2)
        token = torch.randn(8)
        base = int(pseudo_label(store, token))
        for scale in (1e-3, 0.5, 7.0, 1e4):
            assert int(pseudo_label(store, scale * token)) == base

    def test_tie_breaks_to_lowest(self):
        store = orthonormal_store(2, 2)
        label = pseudo_label(store, torch.tensor([0.5, 0.5], dtype=torch.float64))
        assert int(label) == 0

    def test_zero_norm_token_warns(self):
        store = orthonormal_store(2, 2)
        with pytest.warns(UserWarning):
            label = pseudo_label(store, torch.zeros(2, dtype=torch.float64))
        assert int(label) == 0

    def test_zero_norm_prototype_warns_and_loses(self):
        protos = torch.tensor([[0.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
        store = PrototypeStore(protos, beta=0.5)
        with pytest.warns(UserWarning):
            label = pseudo_label(store, torch.tensor([1.0, 1.0], dtype=torch.float64))
        # cosine to p1 is negative but defined; p0 is undefined (-1), tie -> p1 wins
        assert int(label) == 1

    def test_batched(self):
        store = orthonormal_store(2, 2)
        tokens = torch.tensor([[0.9, 0.1], [0.2, 0.8]], dtype=torch.float64)
        assert pseudo_label(store, tokens).tolist() == [0, 1]


class TestInstanceLoss:
    def test_orthonormal_two_prototype_value(self):
        store = orthonormal_store(2, 4)
        token = store.prototypes[0].clone()
        loss = instance_loss(token, store, 0, tau=1.0)
        assert float(loss) == pytest.approx(TWO_CLASS_ORTHONORMAL_LOSS, abs=1e-9)

    def test_equidistant_gives_log_c(self):
        for c in (2, 3, 7):
            store = orthonormal_store(c, c)
            token = torch.ones(c, dtype=torch.float64)
            loss = instance_loss(token, store, 0, tau=0.7)
            assert float(loss) == pytest.approx(math.log(c), abs=1e-9)

    def test_nonpositive_tau_rejected(self):
        store = orthonormal_store()
        with pytest.raises(ValidationError):
            instance_loss(torch.ones(4, dtype=torch.float64), store, 0, tau=0.0)
        with pytest.raises(ValidationError):
            instance_loss(torch.ones(4, dtype=torch.float64), store, 0, tau=-1.0)

    def test_bounds_for_unit_inputs(self):
        rng = torch.Generator().manual_seed(0)
        for _ in range(200):
            c = int(torch.randint(2, 6, (1,), generator=rng))
            tau = 0.2 + float(torch.rand((), generator=rng))
            store = init_prototypes(c, 8, seed=int(torch.randint(0, 999, (1,), generator=rng)))
            token = torch.randn(8, generator=rng)
            token = token / token.norm()
            val = float(instance_loss(token, store, 0, tau=tau))
            assert 0.0 <= val <= 2.0 / tau + math.log(c) + 1e-9

    def test_gradients_match_finite_differences(self):
        store = orthonormal_store(3, 5)
        token = torch.randn(5, dtype=torch.float64, requires_grad=True)
        check_gradients(lambda: instance_loss(token, store, 1, tau=0.5), [token])


class TestShapeLoss:
    def test_top_k_count(self):
        scores = torch.rand(128)
        assert top_score_indices(scores, 0.6).shape[-1] == 77  # ceil(76.8)
        assert top_score_indices(scores, 1.0).shape[-1] == 128
        assert top_score_indices(torch.rand(5), 0.2).shape[-1] == 1

    def test_score_ties_break_to_lower_index(self):
        scores = torch.tensor([0.5, 0.9, 0.5, 0.9])
        idx = top_score_indices(scores, 0.5)
        assert idx.tolist() == [1, 3]
        idx = top_score_indices(torch.ones(6), 0.5)
        assert idx.tolist() == [0, 1, 2]

    def test_all_tokens_at_positive_prototype(self):
        store = orthonormal_store(2, 4)
        tokens = store.prototypes[0].expand(10, 4).clone()
        loss = shape_loss(tokens, torch.rand(10), store, 0, tau=1.0, epsilon=0.6)
        assert float(loss) == pytest.approx(TWO_CLASS_ORTHONORMAL_LOSS, abs=1e-9)

    def test_epsilon_one_averages_everything(self):
        store = orthonormal_store(2, 4)
        tokens = torch.randn(7, 4, dtype=torch.float64)
        scores = torch.rand(7)
        loss = shape_loss(tokens, scores, store, 1, tau=0.5, epsilon=1.0)
        per_token = prototype_nll(
            tokens, torch.full((7,), 1), store.prototypes, tau=0.5
        )
        assert float(loss) == pytest.approx(float(per_token.mean()), abs=1e-12)

    def test_matches_brute_force_oracle(self):
        # oracle: sort (score desc, index asc) with python, average single-token losses
        rng = torch.Generator().manual_seed(7)
        for trial in range(30):
            n = int(torch.randint(1, 33, (1,), generator=rng))
            c = int(torch.randint(2, 5, (1,), generator=rng))
            store = init_prototypes(c, 6, seed=trial)
            store.prototypes = store.prototypes.double()
            tokens = torch.randn(n, 6, generator=rng, dtype=torch.float64)
            scores = torch.rand(n, generator=rng)
            eps = float(torch.rand((), generator=rng)) * 0.99 + 0.01
            target = int(torch.randint(0, c, (1,), generator=rng))
            tau = 0.3 + float(torch.rand((), generator=rng))

            k = math.ceil(eps * n - 1e-9)
            order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
            expected = np.mean(
                [float(instance_loss(tokens[i], store, target, tau)) for i in order[:k]]
            )
            actual = float(shape_loss(tokens, scores, store, target, tau, eps))
            assert actual == pytest.approx(expected, rel=1e-10)

    def test_invalid_args(self):
        store = orthonormal_store()
        tokens = torch.randn(4, 4, dtype=torch.float64)
        with pytest.raises(ValidationError):
            shape_loss(tokens, torch.rand(4), store, 0, tau=0.0, epsilon=0.5)
        with pytest.raises(ValidationError):
            shape_loss(tokens, torch.rand(4), store, 0, tau=1.0, epsilon=0.0)
        with pytest.raises(ValidationError):
            shape_loss(tokens, torch.rand(3), store, 0, tau=1.0, epsilon=0.5)

    def test_gradients_match_finite_differences(self):
        store = orthonormal_store(3, 5)
        tokens = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
        scores = torch.rand(6)
        check_gradients(
            lambda: shape_loss(tokens, scores, store, 2, tau=0.4, epsilon=0.5), [tokens]
        )


class TestProtoLoss:
    def test_paper_default_weighting(self):
        assert proto_loss(1.0, 0.0, lam=0.01) == pytest.approx(0.99)

    def test_equal_losses_fixed_point(self):
        for lam in (0.01, 0.3, 0.9):
            assert proto_loss(2.5, 2.5, lam) == pytest.approx(2.5)

    def test_small_lambda_approaches_instance_loss(self):
        assert proto_loss(1.0, 100.0, lam=1e-9) == pytest.approx(1.0, abs=1e-6)

    def test_lambda_range_enforced(self):
        with pytest.raises(ValidationError):
            proto_loss(1.0, 1.0, lam=0.0)
        with pytest.raises(ValidationError):
            proto_loss(1.0, 1.0, lam=1.0)


class TestContrastiveConfig:
    def test_valid_defaults(self):
        cfg = ContrastiveConfig()
        assert cfg.tau == 0.2 and cfg.epsilon == 0.6 and cfg.lam == 0.01

    def test_invalid_rejected(self):
        with pytest.raises(ValidationError):
            ContrastiveConfig(tau=0.0)
        with pytest.raises(ValidationError):
            ContrastiveConfig(epsilon=1.5)
        with pytest.raises(ValidationError):
            ContrastiveConfig(lam=1.0)
