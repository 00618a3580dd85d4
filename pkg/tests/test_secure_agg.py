import numpy as np
import pytest

from privfed.errors import ProtocolError
from privfed.secure_agg import (
    MASK_BOUND,
    aggregate_masked,
    derive_pairwise_masks,
    mask_update,
    pair_seed,
)
from privfed.wire import ClientUpdate


def ids(n):
    return [f"inst{i:02d}" for i in range(n)]


class TestDeriveMasks:
    def test_single_participant_gets_zero_mask(self):
        masks = derive_pairwise_masks(["a"], 0, 123, 8)
        assert (masks["a"] == 0).all()

    def test_two_participants_antisymmetric(self):
        masks = derive_pairwise_masks(["a", "b"], 0, 123, 16)
        assert (masks["a"] == -masks["b"]).all()
        assert np.abs(masks["a"]).max() <= MASK_BOUND

    def test_masks_cancel(self):
        masks = derive_pairwise_masks(ids(5), 3, 9, 100)
        total = sum(masks.values())
        assert np.abs(total).max() < 1e-9

    def test_masks_cancel_many_sizes(self):
        for n in (2, 3, 7, 12, 20):
            masks = derive_pairwise_masks(ids(n), 1, 77, 33)
            assert np.abs(sum(masks.values())).max() < 1e-9

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ProtocolError):
            derive_pairwise_masks(["a", "a", "b"], 0, 1, 4)

    def test_deterministic_per_round_and_session(self):
        a = derive_pairwise_masks(ids(4), 2, 5, 10)
        b = derive_pairwise_masks(ids(4), 2, 5, 10)
        c = derive_pairwise_masks(ids(4), 3, 5, 10)
        for k in a:
            assert (a[k] == b[k]).all()
        assert any(not (a[k] == c[k]).all() for k in a)

    def test_pair_seed_order_independent(self):
        assert pair_seed(1, "a", "b", 9) == pair_seed(1, "b", "a", 9)
        with pytest.raises(ProtocolError):
            pair_seed(1, "a", "a", 9)


class TestMaskUpdate:
    def test_zero_mask_is_identity(self):
        u = ClientUpdate("a", np.array([1.0, 2.0]), 5, 0)
        m = mask_update(u, np.zeros(2))
        assert (m.masked_weights == u.weights).all()

    def test_mask_equal_minus_weights_zeroes(self):
        u = ClientUpdate("a", np.array([1.0, 2.0]), 5, 0)
        m = mask_update(u, -u.weights)
        assert (m.masked_weights == 0).all()

    def test_unmasking_recovers_plaintext(self):
        rng = np.random.default_rng(4)
        w = rng.normal(0, 3, 50)
        mask = rng.uniform(-MASK_BOUND, MASK_BOUND, 50)
        masked = mask_update(ClientUpdate("a", w, 9, 2), mask)
        assert np.abs((masked.masked_weights - mask) - w).max() < 1e-12


class TestAggregateMasked:
    @staticmethod
    def secure_pipeline(updates, round_index=0, session_seed=7):
        """Client-side path: pre-scale by n_i/n_total, mask, aggregate."""
        participants = [u.institution_id for u in updates]
        n_total = sum(u.n_i for u in updates)
        dim = updates[0].dimension
        masks = derive_pairwise_masks(participants, round_index, session_seed, dim)
        masked = [
            mask_update(
                ClientUpdate(u.institution_id, u.weights * (u.n_i / n_total),
                             u.n_i, u.round_index),
                masks[u.institution_id],
            )
            for u in updates
        ]
        return aggregate_masked(masked, participants)

    def test_two_equal_clients_mean(self):
        updates = [
            ClientUpdate("a", np.array([1.0, 2.0]), 10, 0),
            ClientUpdate("b", np.array([3.0, 4.0]), 10, 0),
        ]
        out = self.secure_pipeline(updates)
        assert out == pytest.approx([2.0, 3.0], abs=1e-9)

    def test_matches_plaintext_weighted_average(self):
        from privfed.federation import weighted_average
        rng = np.random.default_rng(11)
        for trial in range(10):
            n_clients = int(rng.integers(2, 21))
            dim = int(rng.integers(1, 60))
            updates = [
                ClientUpdate(f"inst{i:02d}", rng.normal(0, 2, dim),
                             int(rng.integers(1, 500)), 0)
                for i in range(n_clients)
            ]
            secure = self.secure_pipeline(updates, session_seed=trial)
            plain = weighted_average(updates)
            assert np.abs(secure - plain).max() < 1e-6

    def test_missing_update_aborts(self):
        updates = [ClientUpdate(f"i{k}", np.ones(3), 1, 0) for k in range(3)]
        masks = derive_pairwise_masks([u.institution_id for u in updates], 0, 1, 3)
        masked = [mask_update(u, masks[u.institution_id]) for u in updates]
        with pytest.raises(ProtocolError):
            aggregate_masked(masked[:-1], [u.institution_id for u in updates])

    def test_unexpected_update_aborts(self):
        updates = [ClientUpdate(f"i{k}", np.ones(3), 1, 0) for k in range(3)]
        masks = derive_pairwise_masks([u.institution_id for u in updates], 0, 1, 3)
        masked = [mask_update(u, masks[u.institution_id]) for u in updates]
        with pytest.raises(ProtocolError):
            aggregate_masked(masked, ["i0", "i1"])

    def test_empty_aborts(self):
        with pytest.raises(ProtocolError):
            aggregate_masked([], ["a"])


def test_masking_hides_plaintext_statistically():
    # smoke test: across seeds, a masked coordinate decorrelates from its
    # plaintext because the mask dominates the signal
    rng = np.random.default_rng(0)
    plain = rng.normal(0, 1, 10_000)
    masked = np.empty_like(plain)
    for i, p in enumerate(plain):
        masks = derive_pairwise_masks(["a", "b"], 0, i, 1)
        masked[i] = p + masks["a"][0]
    rho = np.corrcoef(plain, masked)[0, 1]
    assert abs(rho) < 0.05
