"""Round orchestration over a simulated network.

The global model update for round t is the dataset-size-weighted mean of
the surviving local weights,

    w_{t+1} = sum_i (n_i / n_total) * w_i^t,

with n_total recomputed over survivors each round. Aggregation runs in
plain mode (coordinator sees individual updates) or secure mode (pairwise
masking; coordinator sees only the sum).

Timing is a virtual clock: per-client compute, masking, and link latency
costs are simulated deterministically, so wall_time_ms and overhead ratios
reproduce exactly under a fixed seed. Dropouts are decided per
(seed, round, institution) before any masks are derived.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import secure_agg
from .dp import UpdatePrivatizer
from .errors import BudgetExhausted, ConfigurationError, ProtocolError, ShapeError
from .seeding import rng_for
from .tasks import EvalMetrics, LocalDataset, ensure_vector, evaluate, local_train
from .wire import (
    COORDINATOR,
    PAYLOAD_CLIENT_UPDATE,
    PAYLOAD_GLOBAL_MODEL,
    PAYLOAD_MASKED_UPDATE,
    ClientUpdate,
    EventTrace,
)

AGG_PLAIN = "plain"
AGG_SECURE = "secure"


@dataclass(frozen=True)
class RoundConfig:
    round_index: int
    participating_ids: tuple[str, ...]
    local_epochs: int
    lr: float

    def __post_init__(self):
        if not self.participating_ids:
            raise ConfigurationError("participating_ids must be nonempty")
        if self.round_index < 0:
            raise ConfigurationError("round_index must be >= 0")
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")


@dataclass(frozen=True)
class NetworkConfig:
    """Per-link latency model and dropout probability for the simulated network."""

    latency_ms: float = 10.0
    jitter_ms: float = 2.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ConfigurationError("latency and jitter must be >= 0")
        if not (0.0 <= self.drop_probability < 1.0):
            raise ConfigurationError("drop_probability must lie in [0, 1)")


@dataclass(frozen=True)
class SimCostModel:
    """Simulated compute costs (milliseconds). Defaults keep masking a small
    fraction of training time at 20 institutions."""

    train_ms_per_sample_epoch: float = 0.05
    dp_ms_per_coord: float = 0.002
    mask_ms_per_pair_coord: float = 0.006
    agg_ms_per_update_coord: float = 0.002

    def train_ms(self, n_samples: int, epochs: int) -> float:
        return self.train_ms_per_sample_epoch * n_samples * max(epochs, 1)

    def dp_ms(self, dim: int) -> float:
        return self.dp_ms_per_coord * dim

    def mask_ms(self, num_peers: int, dim: int) -> float:
        return self.mask_ms_per_pair_coord * num_peers * dim

    def agg_ms(self, num_updates: int, dim: int) -> float:
        return self.agg_ms_per_update_coord * num_updates * dim


@dataclass(frozen=True)
class RoundResult:
    global_model: np.ndarray
    metrics: EvalMetrics
    dropped_ids: frozenset[str]
    wall_time_ms: float
    round_index: int
    round_failed: bool = False
    agg_mode: str = AGG_PLAIN


def weighted_average(updates: list[ClientUpdate]) -> np.ndarray:
    """Dataset-size-weighted mean of client updates: sum_i (n_i/n_total) w_i.

    Commutative in update order up to floating-point roundoff.
    """
    if not updates:
        raise ProtocolError("cannot aggregate an empty update list")
    dim = updates[0].dimension
    round_index = updates[0].round_index
    for u in updates:
        if u.dimension != dim:
            raise ShapeError(
                f"update from {u.institution_id} has dimension {u.dimension}, expected {dim}"
            )
        if u.round_index != round_index:
            raise ProtocolError("updates from different rounds cannot be aggregated")
    counts = np.array([u.n_i for u in updates], dtype=np.float64)
    stacked = np.stack([u.weights for u in updates])
    return (counts[:, None] * stacked).sum(axis=0) / counts.sum()


@dataclass
class TrainingRun:
    results: list[RoundResult]
    status: str  # completed | budget-exhausted | round-failure
    final_model: np.ndarray
    halted_at_round: int | None = None
    exhausted_institution: str | None = None


class Federation:
    """Owns the datasets, network, virtual clock, and event trace for one run.

    local_train calls within a round are pure and could execute in parallel;
    updates are always merged in institution-id order before aggregation so
    the result is independent of completion order.
    """

    def __init__(
        self,
        datasets: dict[str, LocalDataset],
        eval_data: LocalDataset,
        net: NetworkConfig,
        session_seed: int,
        cost: SimCostModel | None = None,
        recorder=None,
    ):
        if not datasets:
            raise ConfigurationError("at least one institution dataset required")
        self.datasets = dict(datasets)
        self.eval_data = eval_data
        self.net = net
        self.session_seed = session_seed
        self.cost = cost or SimCostModel()
        self.recorder = recorder  # audit hook: .record_budget_charge(...) etc.
        self.trace = EventTrace()
        self.clock_ms = 0.0
        self.ledgers = {}  # institution_id -> AccountantLedger, set by callers using DP

    # ------------------------------------------------------------------

    def _link_latency(self, round_index: int, institution_id: str, leg: str) -> float:
        jitter = 0.0
        if self.net.jitter_ms > 0:
            u = rng_for(self.net.seed, "jitter", round_index, institution_id, leg).random()
            jitter = self.net.jitter_ms * u
        return self.net.latency_ms + jitter

    def dropped_for_round(self, round_index: int, participating: tuple[str, ...]) -> frozenset[str]:
        """Dropouts are a deterministic function of (net.seed, round_index, id)."""
        if self.net.drop_probability == 0.0:
            return frozenset()
        dropped = set()
        for pid in participating:
            u = rng_for(self.net.seed, "drop", round_index, pid).random()
            if u < self.net.drop_probability:
                dropped.add(pid)
        return frozenset(dropped)

    # ------------------------------------------------------------------

    def run_round(
        self,
        global_model,
        cfg: RoundConfig,
        dp_policy: UpdatePrivatizer | None = None,
        agg_mode: str = AGG_PLAIN,
    ) -> RoundResult:
        """One federated round: broadcast, local training, optional DP and
        masking, aggregation, evaluation.

        Raises BudgetExhausted (ledger untouched for the failing charge) when
        DP is enabled and any institution cannot afford the round.
        """
        if agg_mode not in (AGG_PLAIN, AGG_SECURE):
            raise ConfigurationError(f"unknown agg_mode {agg_mode!r}")
        for pid in cfg.participating_ids:
            if pid not in self.datasets:
                raise ConfigurationError(f"no dataset for institution {pid!r}")
        global_model = ensure_vector(global_model, name="global_model")
        t0 = self.clock_ms
        r = cfg.round_index

        # dropouts happen before any masking, so cancellation is never broken
        dropped = self.dropped_for_round(r, cfg.participating_ids)
        survivors = sorted(set(cfg.participating_ids) - dropped)
        for pid in sorted(dropped):
            self.trace.record(t0, "drop", r, pid, COORDINATOR, note="link down")
        if not survivors:
            self.trace.record(t0, "round-result", r, COORDINATOR, COORDINATOR,
                              note="round failed: all clients dropped")
            return RoundResult(
                global_model=global_model.copy(),
                metrics=evaluate(global_model, self.eval_data),
                dropped_ids=dropped,
                wall_time_ms=0.0,
                round_index=r,
                round_failed=True,
                agg_mode=agg_mode,
            )

        dim = global_model.shape[0]
        n_total = sum(self.datasets[pid].n for pid in survivors)

        if dp_policy is not None:
            self._charge_round(survivors, dp_policy, r)

        finish_times = {}
        updates: list[ClientUpdate] = []
        for pid in survivors:
            data = self.datasets[pid]
            down = self._link_latency(r, pid, "down")
            self.trace.record(t0, "broadcast", r, COORDINATOR, pid, PAYLOAD_GLOBAL_MODEL)
            t = t0 + down
            local = local_train(global_model, data, cfg.local_epochs, cfg.lr)
            t += self.cost.train_ms(data.n, cfg.local_epochs)
            self.trace.record(t, "local-train", r, pid, pid)
            if dp_policy is not None:
                local = dp_policy.privatize(global_model, local, r, pid)
                t += self.cost.dp_ms(dim)
                self.trace.record(t, "dp-apply", r, pid, pid,
                                  note=f"sigma={dp_policy.scale.sigma:.6g}")
            updates.append(ClientUpdate(pid, local, data.n, r))
            finish_times[pid] = t

        if agg_mode == AGG_SECURE:
            masks = secure_agg.derive_pairwise_masks(survivors, r, self.session_seed, dim)
            masked_updates = []
            for u in updates:
                scaled = ClientUpdate(u.institution_id,
                                      u.weights * (u.n_i / n_total), u.n_i, r)
                masked = secure_agg.mask_update(scaled, masks[u.institution_id])
                t = finish_times[u.institution_id] + self.cost.mask_ms(len(survivors) - 1, dim)
                self.trace.record(t, "mask", r, u.institution_id, u.institution_id)
                up = self._link_latency(r, u.institution_id, "up")
                self.trace.record(t, "send", r, u.institution_id, COORDINATOR,
                                  PAYLOAD_MASKED_UPDATE)
                self.trace.record(t + up, "receive", r, COORDINATOR, COORDINATOR,
                                  PAYLOAD_MASKED_UPDATE, note=u.institution_id)
                finish_times[u.institution_id] = t + up
                masked_updates.append(masked)
            new_global = secure_agg.aggregate_masked(masked_updates, survivors)
        else:
            for u in updates:
                t = finish_times[u.institution_id]
                up = self._link_latency(r, u.institution_id, "up")
                self.trace.record(t, "send", r, u.institution_id, COORDINATOR,
                                  PAYLOAD_CLIENT_UPDATE)
                self.trace.record(t + up, "receive", r, COORDINATOR, COORDINATOR,
                                  PAYLOAD_CLIENT_UPDATE, note=u.institution_id)
                finish_times[u.institution_id] = t + up
            new_global = weighted_average(updates)

        t_agg = max(finish_times.values()) + self.cost.agg_ms(len(survivors), dim)
        self.trace.record(t_agg, "aggregate", r, COORDINATOR, COORDINATOR,
                          note=f"mode={agg_mode} survivors={len(survivors)}")
        self.clock_ms = t_agg
        metrics = evaluate(new_global, self.eval_data)
        self.trace.record(t_agg, "round-result", r, COORDINATOR, COORDINATOR)
        return RoundResult(
            global_model=new_global,
            metrics=metrics,
            dropped_ids=dropped,
            wall_time_ms=t_agg - t0,
            round_index=r,
            agg_mode=agg_mode,
        )

    def _charge_round(self, survivors, dp_policy: UpdatePrivatizer, round_index: int):
        """Charge every surviving institution before any update is computed.

        An exhausted budget aborts the whole round; ledgers already charged
        this round stay charged (append-only, composition stays sound).
        """
        spend = dp_policy.spend_for_round(round_index)
        for pid in survivors:
            ledger = self.ledgers.get(pid)
            if ledger is None:
                raise ConfigurationError(f"DP enabled but no ledger for {pid!r}")
            entry = ledger.charge(round_index, spend, dp_policy.scale)
            if self.recorder is not None:
                self.recorder.record_budget_charge(round_index, pid, entry)

    # ------------------------------------------------------------------

    def run_training(
        self,
        initial_model,
        rounds: int,
        local_epochs: int,
        lr: float,
        dp_policy: UpdatePrivatizer | None = None,
        agg_mode: str = AGG_PLAIN,
        participating_ids: tuple[str, ...] | None = None,
    ) -> TrainingRun:
        """Sequential rounds, each consuming the previous global model.

        Halts early with status "budget-exhausted" when any institution's
        ledger cannot afford a round.
        """
        if rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        model = ensure_vector(initial_model, name="initial_model")
        ids = tuple(sorted(participating_ids or self.datasets.keys()))
        results: list[RoundResult] = []
        any_failed = False
        for r in range(rounds):
            cfg = RoundConfig(r, ids, local_epochs, lr)
            try:
                result = self.run_round(model, cfg, dp_policy, agg_mode)
            except BudgetExhausted as exc:
                return TrainingRun(results, "budget-exhausted", model,
                                   halted_at_round=r,
                                   exhausted_institution=exc.institution_id)
            results.append(result)
            model = result.global_model
            any_failed = any_failed or result.round_failed
        status = "round-failure" if any_failed else "completed"
        return TrainingRun(results, status, model)
