"""Pairwise additive-mask secure aggregation.

Every unordered pair of participants shares a seed derived from
(round_index, id_a, id_b, session_seed); a counter-based PRG (Philox)
expands it to a mask vector r_ab uniform in [-MASK_BOUND, MASK_BOUND].
The lexicographically smaller id adds +r_ab, the larger adds -r_ab, so the
sum of all per-participant masks cancels to zero and the coordinator can
recover only the sum of the masked inputs, never an individual update.

Weighted averaging and masking interact: each client pre-scales its update
by n_i / n_total before masking, and masks are derived on that scaled
space, so cancellation is exact even with unequal dataset sizes. The
coordinator broadcasts n_total, which is dataset-size metadata, acceptable
under an honest-but-curious model. Dropouts are only permitted before mask
derivation; a participant-set mismatch at aggregation aborts the round.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, ShapeError
from .tasks import ensure_vector
from .wire import ClientUpdate, MaskedUpdate

MASK_BOUND = 1000.0


def pair_seed(round_index: int, id_a: str, id_b: str, session_seed: int) -> int:
    """Shared 64-bit seed for the unordered pair (id_a, id_b) in one round."""
    if id_a == id_b:
        raise ProtocolError(f"duplicate participant id {id_a!r}")
    lo, hi = sorted((id_a, id_b))
    text = f"mask/{int(session_seed)}/{int(round_index)}/{lo}/{hi}"
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


@dataclass(frozen=True)
class MaskSeedPair:
    """The one shared seed an unordered institution pair holds for a round."""

    id_a: str
    id_b: str
    shared_seed: int

    def __post_init__(self):
        if not self.id_a < self.id_b:
            raise ProtocolError("pair ids must satisfy id_a < id_b")

    @classmethod
    def derive(cls, round_index: int, id_a: str, id_b: str,
               session_seed: int) -> "MaskSeedPair":
        lo, hi = sorted((id_a, id_b))
        return cls(lo, hi, pair_seed(round_index, lo, hi, session_seed))

    def mask(self, dim: int) -> np.ndarray:
        """The pair's mask vector; id_a adds it, id_b subtracts it."""
        return _pair_mask(self.shared_seed, dim)


def _pair_mask(seed: int, dim: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=seed))
    return gen.uniform(-MASK_BOUND, MASK_BOUND, size=dim)


def derive_pairwise_masks(
    participants: Sequence[str], round_index: int, session_seed: int, dim: int
) -> dict[str, np.ndarray]:
    """Net additive mask per participant; the masks sum to the zero vector.

    A single participant gets a zero mask (no pairs). Duplicate ids are a
    protocol error.
    """
    ids = list(participants)
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate participant ids")
    if dim < 1:
        raise ShapeError("dim must be >= 1")
    ordered = sorted(ids)
    masks = {pid: np.zeros(dim) for pid in ordered}
    for i, id_a in enumerate(ordered):
        for id_b in ordered[i + 1:]:
            pair = MaskSeedPair.derive(round_index, id_a, id_b, session_seed)
            r = pair.mask(dim)
            masks[id_a] += r
            masks[id_b] -= r
    return masks


def mask_update(update: ClientUpdate, mask) -> MaskedUpdate:
    """Apply an additive mask to an update: masked = weights + mask."""
    m = ensure_vector(mask, update.dimension, "mask")
    return MaskedUpdate(
        institution_id=update.institution_id,
        masked_weights=update.weights + m,
        n_i=update.n_i,
        round_index=update.round_index,
    )


def aggregate_masked(
    masked: Sequence[MaskedUpdate], expected_ids: Iterable[str]
) -> np.ndarray:
    """Sum a complete set of masked, pre-scaled updates.

    ``expected_ids`` is the participant set whose masks were derived; any
    mismatch (missing, extra, or duplicated updates) means the masks cannot
    cancel and the round must abort. Because each client pre-scaled its
    update by n_i / n_total, the unmasked sum is exactly the
    dataset-size-weighted average of the plaintext updates.
    """
    expected = set(expected_ids)
    if not masked:
        raise ProtocolError("no masked updates to aggregate")
    got = [m.institution_id for m in masked]
    if len(set(got)) != len(got) or set(got) != expected:
        missing = sorted(expected - set(got))
        extra = sorted(set(got) - expected)
        raise ProtocolError(
            f"participant set mismatch, round aborted "
            f"(missing={missing}, unexpected={extra})"
        )
    dim = masked[0].dimension
    total = np.zeros(dim)
    for m in sorted(masked, key=lambda u: u.institution_id):
        if m.dimension != dim:
            raise ShapeError("masked updates disagree on dimension")
        total += m.masked_weights
    return total
