"""Simulated federated training across edge-server clients.

Each global round broadcasts the server model, runs local mini-batch Adam on
every client's shard, and aggregates the returned models by data-size
weights (the delta form of the server update is available as a config
switch). Model transfers are recorded in an in-process communication ledger.
Evaluation runs every round on all validation subsets and the findings are
averaged across subsets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, Scaler, fit_scaler
from .metrics import MetricReport, report
from .neural import (
    DivergenceError,
    ModelParams,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    backward,
    forward,
    init_adam,
    init_params,
    loss,
)
from .rng import substream


@dataclass
class ExperimentConfig:
    """Everything run_training needs besides the data itself."""

    clients: int = 5
    rounds: int = 30
    local_epochs: int = 5
    hidden: tuple[int, ...] = (128, 64)
    seed: int = 0
    server_update: str = "fedavg"  # or "delta" (literal server-side gradient step)
    partition: str = "iid"  # or "label-skew"
    per_client_scaler: bool = False  # standardize each shard with its own statistics
    stop_patience: int = 0  # 0 disables the stall-based stop
    f1_target: float | None = None
    threshold: float = 0.5
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.clients < 1 or self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("clients, rounds, and local_epochs must be >= 1")
        if self.server_update not in ("fedavg", "delta"):
            raise ValueError(f"unknown server_update {self.server_update!r}")
        if self.partition not in ("iid", "label-skew"):
            raise ValueError(f"unknown partition scheme {self.partition!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")


@dataclass
class ClientState:
    id: int
    features: np.ndarray  # standardized, C-contiguous
    labels: np.ndarray  # float64 {0,1}

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class RoundPlan:
    k: int
    local_epochs: int
    batch_size: int
    lr: float


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    lr: float
    mean_val_loss: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    subset_accuracy: float


@dataclass
class GlobalState:
    params: ModelParams
    round: int
    history: list[RoundMetrics]


class CommLedger:
    """Per-transfer record of simulated model exchanges."""

    COLUMNS = ("round", "direction", "client", "bytes", "digest")

    def __init__(self):
        self.records: list[tuple[int, str, int, int, str]] = []

    def record(self, round_idx: int, direction: str, client: int, params: ModelParams):
        digest = hashlib.sha256(params.vec.tobytes()).hexdigest()[:16]
        self.records.append((round_idx, direction, client, params.vec.nbytes, digest))

    def to_csv(self, path) -> None:
        lines = [",".join(self.COLUMNS)]
        lines += [",".join(str(v) for v in rec) for rec in self.records]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def partition(train: Dataset, m: int, rng: np.random.Generator) -> list[Dataset]:
    """Shuffled IID split into m near-equal disjoint shards covering train."""
    if m < 1:
        raise ValueError("need at least one shard")
    if train.n < m:
        raise ValueError(f"cannot split {train.n} samples among {m} clients")
    perm = rng.permutation(train.n)
    return [train.take(idx) for idx in np.array_split(perm, m)]


def partition_label_skew(train: Dataset, m: int, rng: np.random.Generator) -> list[Dataset]:
    """Non-IID split biased by attack location.

    Attacked samples are sorted by their first compromised meter and dealt to
    clients in contiguous ranges, so each client sees attacks concentrated on
    a band of meters; normal samples fill the remaining capacity uniformly.
    Shards stay disjoint, covering, and near-equal in size.
    """
    if m < 1:
        raise ValueError("need at least one shard")
    if train.n < m:
        raise ValueError(f"cannot split {train.n} samples among {m} clients")
    attacked = np.flatnonzero(train.attacked)
    normal = np.flatnonzero(train.attacked == 0)
    first_meter = np.argmax(train.labels[attacked] > 0, axis=1)
    order = np.lexsort((rng.random(attacked.size), first_meter))
    attacked = attacked[order]
    normal = rng.permutation(normal)
    base, extra = divmod(train.n, m)
    sizes = [base + (1 if i < extra else 0) for i in range(m)]
    att_chunks = np.array_split(attacked, m)
    shards = []
    cursor = 0
    for i in range(m):
        need = sizes[i] - att_chunks[i].size
        if need < 0:
            raise ValueError("label-skew partition needs at least m normal samples per shard")
        filler = normal[cursor : cursor + need]
        cursor += need
        shards.append(train.take(np.concatenate([att_chunks[i], filler]).astype(np.int64)))
    return shards


def _shard_split(train: Dataset, exp: "ExperimentConfig") -> list[Dataset]:
    rng = substream(exp.seed, "partition")
    if exp.partition == "label-skew":
        return partition_label_skew(train, exp.clients, rng)
    return partition(train, exp.clients, rng)


def _client_state(shard: Dataset, client_id: int, scaler: Scaler,
                  per_client: bool) -> ClientState:
    if per_client:
        scaler = fit_scaler(shard)
    return ClientState(
        id=client_id,
        features=np.ascontiguousarray(scaler.transform(shard.features)),
        labels=np.ascontiguousarray(shard.labels, dtype=np.float64),
    )


def local_train(
    client: ClientState,
    global_params: ModelParams,
    plan: RoundPlan,
    cfg: TrainConfig,
    seed: int,
) -> tuple[ModelParams, float]:
    """Local epochs of mini-batch Adam from the broadcast model.

    Adam state starts fresh each round (local training restarts from the
    broadcast model). Returns the trained parameters and the shard mean loss
    evaluated with the final model.
    """
    if plan.local_epochs < 1:
        raise ValueError("local_epochs must be >= 1")
    local = global_params.copy()
    state = init_adam(local)
    rng = substream(seed, "local", plan.k, client.id)
    n = client.size
    try:
        for _ in range(plan.local_epochs):
            perm = rng.permutation(n)
            for lo in range(0, n, plan.batch_size):
                idx = perm[lo : lo + plan.batch_size]
                probs, cache = forward(
                    local, client.features[idx], cfg, train=True, rng=rng
                )
                grads = backward(cache, client.labels[idx])
                adam_step(local, grads, state, cfg, lr=plan.lr)
        probs, _ = forward(local, client.features, cfg, train=False)
        local_loss = loss(probs, client.labels, local, cfg.l2)
    except DivergenceError as exc:
        raise DivergenceError(f"client {client.id}, round {plan.k}: {exc}") from exc
    if not np.isfinite(local_loss) or not local.finite():
        raise DivergenceError(f"client {client.id}, round {plan.k}: non-finite local model")
    return local, local_loss


def cumulative_gradient(
    global_params: ModelParams, local_params: ModelParams, eta: float
) -> np.ndarray:
    """(w_global - w_local) / eta over the full flat vector."""
    if eta == 0:
        raise ValueError("eta must be nonzero")
    return (global_params.vec - local_params.vec) / eta


def aggregate(models: list[ModelParams], sizes: list[int]) -> ModelParams:
    """Data-size-weighted average of client models (all tensors).

    Identical inputs short-circuit to an exact copy, and equal shard sizes
    reduce to the plain arithmetic mean, so both cases are element-exact.
    """
    if not models:
        raise ValueError("nothing to aggregate")
    if len(models) != len(sizes):
        raise ValueError("models and sizes differ in length")
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes):
        raise ValueError("shard sizes must be positive")
    first = models[0]
    for m in models[1:]:
        if m.layer_sizes != first.layer_sizes:
            raise ValueError("shape mismatch across client models")
    if all(np.array_equal(m.vec, first.vec) for m in models[1:]):
        return first.copy()
    if len(set(sizes)) == 1:
        acc = first.vec.copy()
        for m in models[1:]:
            acc += m.vec
        acc /= len(models)
    else:
        acc = np.zeros_like(first.vec)
        for m, s in zip(models, sizes):
            acc += s * m.vec
        acc /= sum(sizes)
    return ModelParams(first.layer_sizes, acc)


def evaluate(
    params: ModelParams,
    val_sets: list[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    threshold: float,
) -> tuple[float, MetricReport]:
    """Mean loss and subset-averaged metrics over standardized validation sets."""
    losses, reports = [], []
    for feats, labels in val_sets:
        probs, _ = forward(params, feats, cfg, train=False)
        losses.append(loss(probs, labels, params, cfg.l2))
        reports.append(report(probs, labels, threshold))
    mean = lambda vals: float(np.mean(vals))
    agg = MetricReport(
        accuracy=mean([r.accuracy for r in reports]),
        precision=mean([r.precision for r in reports]),
        recall=mean([r.recall for r in reports]),
        f1=mean([r.f1 for r in reports]),
        threshold=threshold,
        subset_accuracy=mean([r.subset_accuracy for r in reports]),
    )
    return mean(losses), agg


def _standardize_vals(
    val_subsets: list[Dataset], scaler: Scaler
) -> list[tuple[np.ndarray, np.ndarray]]:
    return [
        (
            np.ascontiguousarray(scaler.transform(v.features)),
            np.ascontiguousarray(v.labels, dtype=np.float64),
        )
        for v in val_subsets
    ]


def _train_clients(clients, global_params, plan, cfg, seed, threads):
    """Local training for every client; deterministic order regardless of threads."""
    if threads > 1 and len(clients) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(local_train, c, global_params, plan, cfg, seed) for c in clients
            ]
            return [f.result() for f in futures]
    return [local_train(c, global_params, plan, cfg, seed) for c in clients]


def _round_loop(
    clients: list[ClientState],
    val_sets,
    exp: ExperimentConfig,
    ledger: CommLedger | None,
) -> tuple[GlobalState, list[RoundMetrics]]:
    cfg = exp.train
    feature_width = clients[0].features.shape[1]
    layer_sizes = (feature_width, *exp.hidden, feature_width)
    global_params = init_params(layer_sizes, substream(exp.seed, "init"))
    sched = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_delta)
    rows: list[RoundMetrics] = []
    best_val = np.inf
    stall = 0
    k = 0
    for k in range(1, exp.rounds + 1):
        plan = RoundPlan(k, exp.local_epochs, cfg.batch_size, sched.lr)
        if ledger is not None:
            for c in clients:
                ledger.record(k, "broadcast", c.id, global_params)
        results = _train_clients(clients, global_params, plan, cfg, exp.seed, exp.threads)
        if ledger is not None:
            for c, (local, _) in zip(clients, results):
                ledger.record(k, "upload", c.id, local)
        locals_, sizes = [r[0] for r in results], [c.size for c in clients]
        if exp.server_update == "fedavg":
            global_params = aggregate(locals_, sizes)
        else:
            mean_local = aggregate(locals_, sizes)
            delta = mean_local.vec - global_params.vec
            global_params = ModelParams(
                global_params.layer_sizes, global_params.vec + plan.lr * delta
            )
        val_loss, rep = evaluate(global_params, val_sets, cfg, exp.threshold)
        rows.append(
            RoundMetrics(
                round=k,
                lr=plan.lr,
                mean_val_loss=val_loss,
                accuracy=rep.accuracy,
                precision=rep.precision,
                recall=rep.recall,
                f1=rep.f1,
                subset_accuracy=rep.subset_accuracy,
            )
        )
        sched.update(val_loss)
        if exp.f1_target is not None and rep.f1 >= exp.f1_target:
            break
        if exp.stop_patience > 0:
            if val_loss < best_val - cfg.min_delta:
                best_val = val_loss
                stall = 0
            else:
                stall += 1
                if stall >= exp.stop_patience:
                    break
    return GlobalState(global_params, k, rows), rows


def run_training(
    train: Dataset,
    val_subsets: list[Dataset],
    exp: ExperimentConfig,
    scaler: Scaler | None = None,
) -> tuple[GlobalState, list[RoundMetrics], CommLedger]:
    """Full federated run: partition, K rounds of broadcast/train/aggregate."""
    scaler = scaler or fit_scaler(train)
    shards = _shard_split(train, exp)
    clients = [
        _client_state(s, i, scaler, exp.per_client_scaler) for i, s in enumerate(shards)
    ]
    val_sets = _standardize_vals(val_subsets, scaler)
    ledger = CommLedger()
    state, rows = _round_loop(clients, val_sets, exp, ledger)
    return state, rows, ledger


def run_baseline(
    train: Dataset,
    val_subsets: list[Dataset],
    exp: ExperimentConfig,
    scaler: Scaler | None = None,
    shard_index: int = 0,
) -> tuple[GlobalState, list[RoundMetrics], CommLedger]:
    """Non-collaborative reference: one client's shard, no aggregation.

    The round structure (local epochs per round, per-round optimizer restart,
    per-round evaluation and LR schedule) matches run_training so the two are
    comparable at equal total epochs; only the collaboration is removed.
    """
    if not 0 <= shard_index < exp.clients:
        raise ValueError(f"shard_index {shard_index} out of range for {exp.clients} clients")
    scaler = scaler or fit_scaler(train)
    shard = _shard_split(train, exp)[shard_index]
    clients = [_client_state(shard, shard_index, scaler, exp.per_client_scaler)]
    val_sets = _standardize_vals(val_subsets, scaler)
    solo = replace(exp, clients=1)
    state, rows = _round_loop(clients, val_sets, solo, ledger=None)
    return state, rows, CommLedger()


def rounds_csv(rows: list[RoundMetrics], path) -> None:
    """Write per-round metrics; float cells use shortest round-trip repr."""
    header = "round,lr,mean_val_loss,accuracy,precision,recall,f1,subset_accuracy"
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                [str(r.round)]
                + [
                    repr(float(v))
                    for v in (
                        r.lr, r.mean_val_loss, r.accuracy,
                        r.precision, r.recall, r.f1, r.subset_accuracy,
                    )
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
