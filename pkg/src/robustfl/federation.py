"""Round-synchronous federated training with pluggable local strategies.

Each round: sample participants, run every participant's local update
(optionally on a thread pool), aggregate at a single barrier, evaluate.
Client randomness is derived from ``(root_seed, client_id, round)`` only, so
results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    ETA_FLOOR,
    PLUG_IN,
    DisagreementProfile,
    MomentEstimate,
    RadiusGrid,
    disagreement_profile,
    estimate_moments,
    robust_weights,
)
from .data import Dataset
from .losses import BoundedLoss, loss_values
from .models import DivergenceError, ModelParams, TrainConfig, accuracy, cross_entropy, forward, init_params, local_sgd

log = logging.getLogger(__name__)

STRATEGIES = ("fedavg", "fedprox", "scaffold", "feddyn")
PROPORTIONAL = "proportional"
ROBUST_BOUND = "robust_bound"
WEIGHTINGS = (PROPORTIONAL, ROBUST_BOUND)
PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class BoundConfig:
    grid: RadiusGrid = field(default_factory=RadiusGrid)
    loss: BoundedLoss = field(default_factory=BoundedLoss)
    moment_mode: str = PLUG_IN
    confidence_delta: float = 0.05
    eta_floor: float = ETA_FLOOR
    invalid_radius: str = "drop"

    def profile(self, squared_losses, client_id=None) -> tuple[MomentEstimate, DisagreementProfile]:
        m = estimate_moments(squared_losses, self.loss.bound_M, self.moment_mode, self.confidence_delta)
        return m, disagreement_profile(m, self.grid, client_id, self.eta_floor, self.invalid_radius)


@dataclass(frozen=True)
class FederationConfig:
    strategy: str = "fedavg"
    weighting: str = PROPORTIONAL
    train: TrainConfig = field(default_factory=TrainConfig)
    bounds: BoundConfig = field(default_factory=BoundConfig)
    arch: str = "mlp_200_100"
    act_prob: float = 1.0
    rounds: int = 100
    seed: int = 0
    prox_mu: float = 0.01
    dyn_alpha: float = 0.01
    workers: int = 1
    precision: str = "float64"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}")
        if not 0 < self.act_prob <= 1:
            raise ValueError(f"act_prob must lie in (0, 1], got {self.act_prob}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be nonnegative, got {self.rounds}")
        if self.prox_mu < 0:
            raise ValueError(f"prox_mu must be nonnegative, got {self.prox_mu}")
        if self.strategy == "feddyn" and not self.dyn_alpha > 0:
            raise ValueError(f"dyn_alpha must be positive, got {self.dyn_alpha}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")


@dataclass
class ClientState:
    id: int
    data: Dataset
    model: ModelParams | None = None
    # SCAFFOLD control variate c_i or FedDyn gradient state; None for fedavg/fedprox.
    strategy_state: np.ndarray | None = None
    last_eta: float = ETA_FLOOR
    last_profile: DisagreementProfile | None = None
    last_moments: MomentEstimate | None = None

    @property
    def n(self) -> int:
        return len(self.data)


@dataclass
class ServerState:
    global_model: ModelParams
    round: int = 0
    scaffold_c: np.ndarray | None = None
    feddyn_h: np.ndarray | None = None
    seed: int = 0


@dataclass
class ClientUpdate:
    state: ClientState
    previous_strategy_state: np.ndarray | None
    train_loss: float
    steps: int


@dataclass
class ClientRecord:
    client: int
    eta: float
    weight: float
    n: int


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    train_loss: float
    clients: list[ClientRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.clients]


@dataclass
class TrainingResult:
    metrics: list[RoundMetrics]
    final_model: ModelParams
    server: ServerState
    clients: list[ClientState]
    # (round, client, DisagreementProfile) for every participant update.
    profiles: list[tuple[int, int, DisagreementProfile]] = field(default_factory=list)
    # Disagreement of the global model on the test set, per round.
    global_etas: list[float] = field(default_factory=list)


class TrainingDiverged(DivergenceError):
    def __init__(self, cause: DivergenceError, partial: TrainingResult):
        super().__init__(str(cause))
        self.round = cause.round
        self.client = cause.client
        self.partial = partial


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts (root seed, client, round, ...)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def select_participants(K: int, act_prob: float, round: int, seed: int) -> list[int]:
    """Independent Bernoulli(act_prob) inclusion; an empty draw forces one client in."""
    if not 0 < act_prob <= 1:
        raise ValueError(f"act_prob must lie in (0, 1], got {act_prob}")
    rng = np.random.default_rng([seed, round, 0xAC7])
    chosen = np.flatnonzero(rng.random(K) < act_prob).tolist()
    if not chosen:
        chosen = [int(rng.integers(K))]
    return chosen


def init_strategy_state(strategy: str, model: ModelParams) -> np.ndarray | None:
    if strategy in ("scaffold", "feddyn"):
        return np.zeros_like(model.flat)
    return None


def client_update(
    server: ServerState,
    client: ClientState,
    config: FederationConfig,
) -> ClientUpdate:
    """Local training from the current global model, then bound estimation."""
    if client.n == 0:
        raise ValueError(f"client {client.id} has no data")
    anchor = server.global_model.flat
    strategy = config.strategy
    hook = None
    if strategy == "fedprox":
        mu = config.prox_mu
        hook = lambda w: mu * (w - anchor)  # noqa: E731
    elif strategy == "scaffold":
        correction = server.scaffold_c - client.strategy_state
        hook = lambda w: correction  # noqa: E731
    elif strategy == "feddyn":
        alpha, lam = config.dyn_alpha, client.strategy_state
        hook = lambda w: alpha * (w - anchor) - lam  # noqa: E731

    cfg = replace(config.train, seed=derive_seed(config.seed, client.id, server.round))
    try:
        res = local_sgd(
            server.global_model, client.data.features, client.data.labels, cfg, hook, config.bounds.loss
        )
    except DivergenceError as exc:
        raise DivergenceError("non-finite parameters after local SGD", server.round, client.id) from exc

    new_state = client.strategy_state
    if strategy == "scaffold":
        scale = res.steps * cfg.learning_rate
        if scale > 0:
            new_state = client.strategy_state - server.scaffold_c + (anchor - res.params.flat) / scale
    elif strategy == "feddyn":
        new_state = client.strategy_state - config.dyn_alpha * (res.params.flat - anchor)

    moments, profile = config.bounds.profile(res.squared_losses, client.id)
    updated = replace(
        client,
        model=res.params,
        strategy_state=new_state,
        last_eta=profile.eta,
        last_profile=profile,
        last_moments=moments,
    )
    return ClientUpdate(updated, client.strategy_state, res.train_loss, res.steps)


def aggregation_weights(updates: list[ClientUpdate], weighting: str) -> np.ndarray:
    if not updates:
        raise ValueError("cannot aggregate zero updates")
    if weighting == PROPORTIONAL:
        sizes = np.array([u.state.n for u in updates], dtype=float)
        return sizes / math.fsum(sizes)
    if weighting == ROBUST_BOUND:
        return robust_weights([u.state.last_eta for u in updates]).as_array()
    raise ValueError(f"unknown weighting {weighting!r}")


def _weighted_sum(vectors: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    # Fixed left-to-right accumulation keeps results reproducible.
    out = weights[0] * vectors[0]
    for w, v in zip(weights[1:], vectors[1:]):
        out = out + w * v
    return out


def aggregate(
    server: ServerState,
    updates: list[ClientUpdate],
    weighting: str,
    config: FederationConfig,
    num_clients: int,
) -> tuple[ServerState, np.ndarray]:
    """Combine participant models into the next global model; returns (server, weights)."""
    weights = aggregation_weights(updates, weighting)
    models = [u.state.model.flat for u in updates]
    averaged = _weighted_sum(models, weights)
    new = replace(server, round=server.round + 1)
    anchor = server.global_model.flat
    if config.strategy == "scaffold":
        # Control variates use a plain mean, whatever the model weighting.
        deltas = [u.state.strategy_state - u.previous_strategy_state for u in updates]
        new.scaffold_c = server.scaffold_c + (len(updates) / num_clients) * np.mean(deltas, axis=0)
    elif config.strategy == "feddyn":
        drift = np.sum([m - anchor for m in models], axis=0)
        new.feddyn_h = server.feddyn_h - config.dyn_alpha * drift / num_clients
        averaged = averaged - new.feddyn_h / config.dyn_alpha
    new.global_model = server.global_model.with_flat(averaged)
    return new, weights


def init_server(config: FederationConfig, in_dim: int, num_classes: int) -> ServerState:
    model = init_params(
        config.arch, in_dim, num_classes, derive_seed(config.seed, 0x1A17), PRECISIONS[config.precision]
    )
    server = ServerState(model, 0, seed=config.seed)
    if config.strategy == "scaffold":
        server.scaffold_c = np.zeros_like(model.flat)
    elif config.strategy == "feddyn":
        server.feddyn_h = np.zeros_like(model.flat)
    return server


def global_disagreement(model: ModelParams, test: Dataset, bounds: BoundConfig) -> float:
    losses = loss_values(bounds.loss, forward(model, test.features), test.labels)
    return bounds.profile(losses**2, "global")[1].eta


def run_training(
    config: FederationConfig,
    client_data: list[Dataset],
    test: Dataset,
    server: ServerState | None = None,
) -> TrainingResult:
    """Run ``config.rounds`` rounds and return per-round metrics and the final model."""
    if not client_data:
        raise ValueError("need at least one client")
    K = len(client_data)
    in_dim = client_data[0].dim
    num_classes = client_data[0].num_classes
    server = server or init_server(config, in_dim, num_classes)
    clients = [
        ClientState(k, d, strategy_state=init_strategy_state(config.strategy, server.global_model))
        for k, d in enumerate(client_data)
    ]
    train_x = np.vstack([d.features for d in client_data])
    train_y = np.concatenate([d.labels for d in client_data])
    result = TrainingResult([], server.global_model, server, clients)

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for _ in range(config.rounds):
            t0 = time.perf_counter()
            t = server.round
            chosen = select_participants(K, config.act_prob, t, config.seed)
            jobs = [clients[k] for k in chosen]
            try:
                if pool is None:
                    updates = [client_update(server, c, config) for c in jobs]
                else:
                    updates = list(pool.map(lambda c: client_update(server, c, config), jobs))
            except DivergenceError as exc:
                raise TrainingDiverged(exc, result) from exc
            server, weights = aggregate(server, updates, config.weighting, config, K)
            if not np.all(np.isfinite(server.global_model.flat)):
                raise TrainingDiverged(DivergenceError("non-finite global model", t), result)
            for u in updates:
                clients[u.state.id] = u.state
                result.profiles.append((t, u.state.id, u.state.last_profile))
            acc = accuracy(server.global_model, test.features, test.labels)
            train_loss = cross_entropy(server.global_model, train_x, train_y)
            records = [
                ClientRecord(u.state.id, u.state.last_eta, float(w), u.state.n) for u, w in zip(updates, weights)
            ]
            result.metrics.append(RoundMetrics(t, acc, train_loss, records, time.perf_counter() - t0))
            result.global_etas.append(global_disagreement(server.global_model, test, config.bounds))
            result.final_model = server.global_model
            result.server = server
            log.debug("round %d acc=%.4f loss=%.4f", t, acc, train_loss)
    finally:
        if pool is not None:
            pool.shutdown()
    result.clients = clients
    return result
