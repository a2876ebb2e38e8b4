"""Experiment orchestration: the lockstep multi-client training loop.

All clients advance one mini-batch per global tick. On the first task a
client trains on the incoming batch alone; afterwards it trains on the
batch joined with a replay draw from its memory (one gradient step per
tick). After training, the batch is scored under the updated model and
offered to the memory, with the stored candidates of the touched classes
rescored fresh so retention compares the whole merged set.

Once the shared per-task batch counter passes the burn-in and hits a
multiple of q, client parameters are aggregated, smoothed against the
previous global parameters, and broadcast. At every task boundary each
client is evaluated on the held-out split of all tasks seen so far.

Randomness is fanned out from the master seed into named sub-streams, so
results are bit-reproducible regardless of worker parallelism; serial
execution is the reference semantics.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeds
from .config import ExperimentConfig
from .federation import (
    CommSchedule,
    GlobalState,
    RoundReport,
    broadcast,
    class_weighted_avg,
    fedavg,
    should_communicate,
    temporal_smooth,
)
from .memory import MemoryBuffer, sample_replay, update_memory
from .metrics import (
    AccuracyMatrix,
    avg_last_accuracy,
    avg_last_forgetting,
    client_forgetting,
    evaluate_model,
)
from .model import (
    ModelConfig,
    OptimizerState,
    fedprox_augment,
    init_parameters,
    loss_and_grad,
    optimizer_step,
)
from .stream import ClientStream, LabeledExample, MiniBatch, partition_to_clients
from .stream import assign_classes_to_tasks, load_vector_dataset, synth_gaussian_blobs
from .uncertainty import PerturbationSpec, score_sample


@dataclass
class RunResult:
    avg_last_accuracy: float
    avg_last_forgetting: float
    per_client_accuracy: list[float]
    per_client_forgetting: list[float]
    matrices: list[AccuracyMatrix]
    round_log: list[str]
    wall_clock_seconds: float
    config: dict
    seed: int
    single_pass_audit: bool


class _ClientWorker:
    """Client-local state: parameters, optimizer, memory, stream, rngs."""

    def __init__(self, client_id, config, model_config, params, opt, stream, buffer, pert_spec, replay_rng):
        self.client_id = client_id
        self.cfg = config
        self.model_config = model_config
        self.params = params
        self.opt = opt
        self.stream = stream
        self.buffer = buffer
        self.pert_spec = pert_spec
        self.replay_rng = replay_rng
        self.global_ref = params.copy()
        self.observed: set[int] = set()

    def _score_batch(self, features) -> np.ndarray:
        return np.array(
            [
                score_sample(self.params, self.model_config, features[i], self.pert_spec, self.cfg.uncertainty_metric)
                for i in range(features.shape[0])
            ]
        )

    def _rescore(self, stored) -> np.ndarray:
        return np.array(
            [
                score_sample(self.params, self.model_config, s.features, self.pert_spec, self.cfg.uncertainty_metric)
                for s in stored
            ]
        )

    def tick(self, first_task: bool) -> bool:
        """Consume one batch; returns False when the current task is exhausted."""
        item = self.stream.next_batch()
        if not isinstance(item, MiniBatch):
            return False
        batch = item

        train_batch = batch
        if not first_task and self.buffer is not None:
            replay = sample_replay(self.buffer, self.cfg.batch_size, batch.task_id, self.replay_rng) if len(self.buffer) else []
            if replay:
                train_batch = MiniBatch(
                    features=np.vstack([batch.features, np.stack([s.features for s in replay])]),
                    labels=np.concatenate([batch.labels, np.array([s.label for s in replay])]),
                    task_id=batch.task_id,
                )

        _, grad = loss_and_grad(self.params, self.model_config, train_batch)
        if self.cfg.aggregation == "fedprox":
            grad = fedprox_augment(grad, self.params.values, self.global_ref.values, self.cfg.fedprox_mu)
        self.params = optimizer_step(self.params, grad, self.opt)
        self.observed.update(int(label) for label in batch.labels)

        if self.buffer is not None and self.buffer.capacity > 0:
            if self.cfg.memory_policy in ("bottom_k", "top_k"):
                scores = self._score_batch(batch.features)
                update_memory(self.buffer, batch, scores, rescore=self._rescore)
            else:
                update_memory(self.buffer, batch, np.zeros(len(batch)))
        return True

    def on_broadcast(self, theta_g) -> None:
        self.global_ref = theta_g.copy()
        if self.cfg.reset_optimizer_on_sync:
            self.opt.reset()
        self.observed.clear()


def _build_dataset(config: ExperimentConfig):
    if config.data_source == "synthetic":
        sizes = list(config.class_sizes) if config.class_sizes else config.samples_per_class
        examples = synth_gaussian_blobs(
            config.classes,
            sizes,
            config.dim,
            config.center_spread,
            config.cluster_sigma,
            seeds.substream(config.seed, seeds.DATA),
        )
    else:
        examples = load_vector_dataset(config.data_path, config.data_format)
        if not examples:
            raise RuntimeError(f"dataset {config.data_path} is empty")
    class_ids = sorted({e.label for e in examples})
    if len(class_ids) < 2:
        raise RuntimeError("dataset must contain at least two classes")
    # model logits index classes contiguously, ascending by original id
    remap = {c: i for i, c in enumerate(class_ids)}
    if any(remap[c] != c for c in class_ids):
        examples = [LabeledExample(e.features, remap[e.label]) for e in examples]
    return examples, len(class_ids), examples[0].features.size


def _split_task(examples, test_split, rng):
    n = len(examples)
    if n < 2:
        raise RuntimeError("each task needs at least two examples for a train/test split")
    perm = rng.permutation(n)
    n_test = max(1, min(int(round(test_split * n)), n - 1))
    test = [examples[i] for i in perm[:n_test]]
    train = [examples[i] for i in perm[n_test:]]
    return train, test


def _as_arrays(examples):
    return np.stack([e.features for e in examples]), np.array([e.label for e in examples])


def _checksum(params) -> str:
    return hashlib.sha256(params.values.tobytes()).hexdigest()[:16]


def _format_reports(reports) -> str:
    parts = []
    for k, classes in enumerate(reports):
        inner = ",".join(str(c) for c in sorted(classes))
        parts.append(f"{k}:{{{inner}}}")
    return "[" + ";".join(parts) + "]"


def run_experiment(config: ExperimentConfig, parallel: bool = False) -> RunResult:
    """Execute the full stream for every client and compute the metrics."""
    result, _ = _run_experiment(config, parallel)
    return result


def _run_experiment(config: ExperimentConfig, parallel: bool):
    config.validate()
    start = time.perf_counter()
    seed = config.seed

    examples, num_classes, input_dim = _build_dataset(config)
    counts = Counter(e.label for e in examples)
    tasks = assign_classes_to_tasks(
        dict(counts), config.tasks, config.task_assignment, seeds.substream(seed, seeds.TASK_ASSIGNMENT)
    )

    test_sets = []
    train_per_task = []
    for spec in tasks:
        task_examples = [e for e in examples if e.label in spec.classes]
        train, test = _split_task(task_examples, config.test_split, seeds.substream(seed, seeds.TEST_SPLIT, spec.task_id))
        train_per_task.append(train)
        test_sets.append(_as_arrays(test))

    model_config = ModelConfig(
        input_dim=input_dim,
        hidden_dims=config.hidden_dims,
        num_classes=num_classes,
        init_seed=seeds.derive_seed(seed, seeds.MODEL_INIT),
    )
    theta0 = init_parameters(model_config)

    per_client_tasks = [[] for _ in range(config.clients)]
    for spec, train in zip(tasks, train_per_task):
        parts = partition_to_clients(train, config.clients, seeds.substream(seed, seeds.CLIENT_PARTITION, spec.task_id))
        for k in range(config.clients):
            per_client_tasks[k].append((spec.task_id, parts[k]))

    workers = []
    for k in range(config.clients):
        order_rngs = [
            seeds.substream(seed, seeds.BATCH_ORDER, k, task_id) for task_id, _ in per_client_tasks[k]
        ]
        stream = ClientStream(k, per_client_tasks[k], config.batch_size, order_rngs)
        if config.optimizer == "sgd":
            opt = OptimizerState.sgd(config.learning_rate)
        else:
            opt = OptimizerState.adam(config.learning_rate, len(theta0))
        buffer = MemoryBuffer(
            config.memory_capacity, config.memory_policy, seeds.substream(seed, seeds.MEMORY_POLICY, k)
        )
        pert_spec = PerturbationSpec(
            count=config.perturbation_count,
            kind=config.perturbation_kind,
            sigma=config.noise_sigma,
            mask_fraction=config.mask_fraction,
            rng=seeds.substream(seed, seeds.PERTURBATION, k),
        )
        workers.append(
            _ClientWorker(
                k,
                config,
                model_config,
                theta0.copy(),
                opt,
                stream,
                buffer,
                pert_spec,
                seeds.substream(seed, seeds.REPLAY, k),
            )
        )

    gstate = GlobalState(theta_g=theta0.copy())
    schedule = CommSchedule(config.burn_in, config.q)
    matrices = [AccuracyMatrix(config.tasks) for _ in range(config.clients)]
    round_log: list[str] = []

    pool = ThreadPoolExecutor(max_workers=config.clients) if parallel else None
    try:
        for t_idx, spec in enumerate(tasks):
            first_task = t_idx == 0
            active = [True] * config.clients
            bn = 0
            while True:
                if pool is not None:
                    ticked = list(
                        pool.map(lambda w_a: w_a[1].tick(first_task) if w_a[0] else False, zip(active, workers))
                    )
                else:
                    ticked = [w.tick(first_task) if a else False for a, w in zip(active, workers)]
                active = [a and t for a, t in zip(active, ticked)]
                if not any(ticked):
                    break
                bn += 1
                if should_communicate(bn, schedule):
                    report = RoundReport(
                        params=[w.params.copy() for w in workers],
                        class_reports=[set(w.observed) for w in workers],
                    )
                    if config.aggregation == "class_weighted":
                        theta_new = class_weighted_avg(report)
                    else:
                        theta_new = fedavg(report.params)
                    smoothed = temporal_smooth(theta_new, gstate)
                    gstate.theta_g = smoothed
                    gstate.theta_g_prev = smoothed
                    gstate.round += 1
                    broadcast(smoothed, workers)
                    for w in workers:
                        w.on_broadcast(smoothed)
                    round_log.append(
                        f"round={gstate.round} task={spec.task_id} bn={bn} "
                        f"reports={_format_reports(report.class_reports)} checksum={_checksum(smoothed)}"
                    )
            for k, w in enumerate(workers):
                accuracies = evaluate_model(w.params, model_config, test_sets[: t_idx + 1])
                for on_task, acc in enumerate(accuracies, start=1):
                    matrices[k].record(spec.task_id, on_task, acc)
    finally:
        if pool is not None:
            pool.shutdown()

    for w in workers:
        counts_arr = w.stream.consumption_counts()
        if not w.stream.exhausted() or not np.all(counts_arr == 1):
            raise RuntimeError(
                f"single-pass audit failed for client {w.client_id}: "
                f"{int(np.count_nonzero(counts_arr != 1))} examples not consumed exactly once"
            )

    result = RunResult(
        avg_last_accuracy=avg_last_accuracy(matrices, config.tasks),
        avg_last_forgetting=avg_last_forgetting(matrices, config.tasks),
        per_client_accuracy=[
            avg_last_accuracy([m], config.tasks) for m in matrices
        ],
        per_client_forgetting=[client_forgetting(m, config.tasks) for m in matrices],
        matrices=matrices,
        round_log=round_log,
        wall_clock_seconds=time.perf_counter() - start,
        config=config.echo(),
        seed=seed,
        single_pass_audit=True,
    )
    return result, workers


def emit_report(result: RunResult, out_dir, force: bool = False) -> None:
    """Write summary.json, per_client.csv, acc_matrix_<k>.csv and rounds.log."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    summary = {
        "avg_last_accuracy": result.avg_last_accuracy,
        "avg_last_forgetting": result.avg_last_forgetting,
        "seed": result.seed,
        "config": result.config,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    lines = ["client,last_accuracy,last_forgetting"]
    for k, (a, f) in enumerate(zip(result.per_client_accuracy, result.per_client_forgetting)):
        lines.append(f"{k},{a!r},{f!r}")
    (out / "per_client.csv").write_text("\n".join(lines) + "\n")

    for k, matrix in enumerate(result.matrices):
        rows = ["after_task,on_task,accuracy"]
        rows.extend(f"{t},{i},{acc!r}" for t, i, acc in matrix.rows())
        (out / f"acc_matrix_{k}.csv").write_text("\n".join(rows) + "\n")

    (out / "rounds.log").write_text("\n".join(result.round_log) + ("\n" if result.round_log else ""))
