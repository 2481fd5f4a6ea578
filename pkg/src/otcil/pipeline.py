"""Incremental-learning pipeline over a task stream.

Per task: estimate pre-adaptation class statistics, adapt the encoder,
re-estimate post-adaptation statistics, calibrate the stored class
memory with the transport map between the averaged pre/post Gaussians,
then train new prompts on real features mixed with generative replay,
and finally store the new classes' statistics. Ablation variants switch
individual steps off.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig, Schedule
from .encoder import (
    AnchorSet,
    Encoder,
    adapt_encoder,
    anchors_for_classes,
    contrastive_loss_and_grad,
    encode,
    extract_class_stats,
    init_encoder,
)
from .gaussian import FeatureBatch, GaussianStat, average_stats, sample_gaussian
from .prompts import PromptBank, predict_batch, train_prompts
from .stream import Task, TaskStream
from .transport import calibrate_memory, ot_map, ot_map_per_class_averaged, w2_distance_sq


class RunVariant(enum.Enum):
    """Pipeline variants: the full method and its ablations."""

    DMC_OT = "DMC_OT"
    DMC = "DMC"
    SIMULTANEOUS = "SIMULTANEOUS"
    NO_TASK_PROMPT = "NO_TASK_PROMPT"
    ALT_OT = "ALT_OT"
    NO_OT = "NO_OT"

    @property
    def calibrates(self) -> bool:
        return self in (RunVariant.DMC_OT, RunVariant.NO_TASK_PROMPT, RunVariant.ALT_OT)

    @property
    def uses_task_prompts(self) -> bool:
        return self in (RunVariant.DMC_OT, RunVariant.NO_OT, RunVariant.ALT_OT)


@dataclass
class PipelineState:
    encoder: Encoder
    bank: PromptBank
    memory: "dict[int, GaussianStat]"
    seen_tasks: "tuple[int, ...]"
    anchors: AnchorSet


def build_replay_batch(
    memory: "dict[int, GaussianStat]",
    per_class: int,
    rng: np.random.Generator,
    class_to_task: "dict[int, int]",
) -> FeatureBatch:
    """Sample unit-renormalized synthetic features from stored Gaussians."""
    if per_class < 0:
        raise ValueError("per_class must be nonnegative")
    if not memory or per_class == 0:
        dim = next(iter(memory.values())).dim if memory else 1
        return FeatureBatch.empty(dim)
    rows, labels, tasks = [], [], []
    for cid in sorted(memory):
        draws = sample_gaussian(memory[cid], per_class, rng)
        norms = np.maximum(np.linalg.norm(draws, axis=1), 1e-12)
        rows.append(draws / norms[:, None])
        labels.append(np.full(per_class, cid, dtype=np.int64))
        tasks.append(np.full(per_class, class_to_task[cid], dtype=np.int64))
    return FeatureBatch(np.concatenate(rows), np.concatenate(labels), np.concatenate(tasks))


def _simultaneous_train(
    state: PipelineState,
    task: Task,
    config: RunConfig,
    rng: np.random.Generator,
) -> "tuple[Encoder, PromptBank]":
    """Alternate one encoder step and one prompt step per iteration."""
    s1 = config.stage1_schedule()
    s2 = config.stage2_schedule()
    replay = build_replay_batch(
        state.memory, config.replay_per_class, rng, state.bank.class_to_task
    )
    weights = state.encoder.weights.copy()
    bank = state.bank
    prompt_step = Schedule(steps=1, lr=s2.lr, tau=s2.tau,
                           lambda_ortho=s2.lambda_ortho, optimizer="sgd")
    for i in range(max(s1.steps, s2.steps)):
        enc = Encoder(weights=weights, version=state.encoder.version)
        if i < s1.steps:
            _, grad = contrastive_loss_and_grad(
                enc, task.train.features, task.train.labels, state.anchors, s1.tau
            )
            weights = weights - s1.lr * grad
            enc = Encoder(weights=weights, version=state.encoder.version)
        if i < s2.steps:
            real = FeatureBatch(
                encode(enc, task.train.features), task.train.labels, task.train.task_ids
            )
            bank = train_prompts(bank, real, replay, prompt_step, task_id=task.task_id)
    return Encoder(weights=weights, version=state.encoder.version + 1), bank


def run_task(
    state: PipelineState,
    task: Task,
    config: RunConfig,
    variant: RunVariant,
    rng: np.random.Generator,
) -> PipelineState:
    """Process one task and return the updated pipeline state."""
    overlap = set(task.class_ids) & set(state.memory)
    if overlap or task.task_id in state.seen_tasks:
        raise ValueError("not class-incremental")
    for cid in task.class_ids:
        if not np.any(task.train.labels == cid):
            raise ValueError(f"missing class samples: [{cid}]")

    pre_stats = extract_class_stats(state.encoder, task.train, expected_classes=task.class_ids)

    bank = state.bank.copy()
    bank.add_task(task.task_id, list(task.class_ids), rng)

    if variant is RunVariant.SIMULTANEOUS:
        new_state = replace(state, bank=bank)
        encoder, bank = _simultaneous_train(new_state, task, config, rng)
        memory = dict(state.memory)
    else:
        encoder = adapt_encoder(state.encoder, task.train, state.anchors, config.stage1_schedule())
        post_stats = extract_class_stats(encoder, task.train, expected_classes=task.class_ids)

        memory = dict(state.memory)
        if memory and variant.calibrates:
            ordered = sorted(task.class_ids)
            if variant is RunVariant.ALT_OT:
                transport = ot_map_per_class_averaged(
                    [pre_stats[c] for c in ordered], [post_stats[c] for c in ordered]
                )
            else:
                transport = ot_map(
                    average_stats([pre_stats[c] for c in ordered]),
                    average_stats([post_stats[c] for c in ordered]),
                )
            memory = calibrate_memory(transport, memory)

        replay = build_replay_batch(memory, config.replay_per_class, rng, bank.class_to_task)
        real = FeatureBatch(
            encode(encoder, task.train.features), task.train.labels, task.train.task_ids
        )
        bank = train_prompts(bank, real, replay, config.stage2_schedule(), task_id=task.task_id)

    # Store new class statistics computed with the adapted encoder
    new_stats = extract_class_stats(encoder, task.train, expected_classes=task.class_ids)
    memory.update(new_stats)
    return PipelineState(
        encoder=encoder,
        bank=bank,
        memory=memory,
        seen_tasks=state.seen_tasks + (task.task_id,),
        anchors=state.anchors,
    )


def evaluate(state: PipelineState, eval_sets: "list[FeatureBatch]") -> "list[float]":
    """Accuracy (%) per past task over the unified label space."""
    embeddings = state.bank.embeddings()
    accuracies = []
    for batch in eval_sets:
        if len(batch) == 0:
            raise ValueError("empty eval set")
        feats = encode(state.encoder, batch.features)
        preds = predict_batch(feats, embeddings)
        accuracies.append(100.0 * float(np.mean(preds == batch.labels)))
    return accuracies


@dataclass(frozen=True)
class AccuracyMatrix:
    """Lower-triangular R[k, i]: accuracy on task i after training task k."""

    values: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.values, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("accuracy matrix must be square")
        k = r.shape[0]
        lower = np.tril_indices(k)
        if np.any(np.isnan(r[lower])):
            raise ValueError("incomplete accuracy matrix")
        if np.any((r[lower] < 0.0) | (r[lower] > 100.0)):
            raise ValueError("accuracies must lie in [0, 100]")
        upper = np.triu_indices(k, 1)
        r = r.copy()
        r[upper] = np.nan
        object.__setattr__(self, "values", r)

    @property
    def num_tasks(self) -> int:
        return int(self.values.shape[0])


def final_and_average_accuracy(matrix: AccuracyMatrix) -> "tuple[float, float]":
    """Final accuracy A_B and the mean of stage-wise averages A-bar."""
    r = matrix.values
    k = matrix.num_tasks
    a_b = float(np.mean(r[k - 1, :k]))
    stage_means = [float(np.mean(r[b, : b + 1])) for b in range(k)]
    return a_b, float(np.mean(stage_means))


@dataclass(frozen=True)
class ExperimentResult:
    variant: str
    seeds: "tuple[int, ...]"
    matrices: "tuple[AccuracyMatrix, ...]"
    final_accuracies: "tuple[float, ...]"
    average_accuracies: "tuple[float, ...]"

    @property
    def a_b_mean(self) -> float:
        return float(np.mean(self.final_accuracies))

    @property
    def a_b_std(self) -> float:
        return float(np.std(self.final_accuracies))

    @property
    def a_bar_mean(self) -> float:
        return float(np.mean(self.average_accuracies))

    @property
    def a_bar_std(self) -> float:
        return float(np.std(self.average_accuracies))


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _default_feature_dim(stream: TaskStream) -> int:
    return min(16, stream.input_dim)


def run_single(
    stream: TaskStream, config: RunConfig, variant: RunVariant, seed: int,
    feature_dim: "int | None" = None,
) -> "tuple[PipelineState, AccuracyMatrix]":
    """One full pass over the stream for one seed."""
    state = init_state(stream, config, variant, seed, feature_dim)
    rng = np.random.default_rng([seed, 3])
    k = len(stream)
    r = np.full((k, k), np.nan)
    if variant.uses_task_prompts:
        effective = config
    else:
        effective = replace(config, lambda_ortho=0.0)
    for idx, task in enumerate(stream.tasks):
        state = run_task(state, task, effective, variant, rng)
        accs = evaluate(state, [t.eval for t in stream.tasks[: idx + 1]])
        r[idx, : idx + 1] = accs
    return state, AccuracyMatrix(values=r)


def init_state(
    stream: TaskStream, config: RunConfig, variant: RunVariant, seed: int,
    feature_dim: "int | None" = None,
) -> PipelineState:
    """Fresh pipeline state with seed-derived encoder, anchors, and bank."""
    d_in = stream.input_dim
    d_out = feature_dim if feature_dim is not None else _default_feature_dim(stream)
    if d_out > d_in:
        raise ValueError("feature_dim cannot exceed input_dim")
    encoder = init_encoder(d_in, d_out, seed=_subseed(seed, 0))
    anchors = anchors_for_classes(stream.all_class_ids, d_out, seed=_subseed(seed, 1))
    beta = config.beta if variant.uses_task_prompts else 0.0
    bank = PromptBank.create(
        embed_dim=d_out,
        prompt_len=config.prompt_len,
        beta=beta,
        projector_seed=_subseed(seed, 2),
    )
    return PipelineState(encoder=encoder, bank=bank, memory={}, seen_tasks=(), anchors=anchors)


def run_experiment(
    stream: TaskStream,
    config: RunConfig,
    variant: "RunVariant | None" = None,
    seeds=None,
    feature_dim: "int | None" = None,
) -> ExperimentResult:
    """Independent runs per seed with aggregated accuracy metrics."""
    variant = variant if variant is not None else RunVariant(config.variant)
    seeds = tuple(seeds) if seeds is not None else config.seeds
    if not seeds:
        raise ValueError("at least one seed required")
    matrices, finals, averages = [], [], []
    for seed in seeds:
        _, matrix = run_single(stream, config, variant, seed, feature_dim)
        a_b, a_bar = final_and_average_accuracy(matrix)
        matrices.append(matrix)
        finals.append(a_b)
        averages.append(a_bar)
    return ExperimentResult(
        variant=variant.value,
        seeds=seeds,
        matrices=tuple(matrices),
        final_accuracies=tuple(finals),
        average_accuracies=tuple(averages),
    )


def calibration_fidelity(
    stream: TaskStream, config: RunConfig, seed: int, feature_dim: "int | None" = None
) -> "tuple[float, float]":
    """Mean squared transport distance of calibrated vs stale old memory.

    Runs the first two tasks, then measures how far the calibrated and
    the uncalibrated first-task memories are from the true post-drift
    statistics (recomputed from the first task's data with the final
    encoder). Requires a stream with at least two tasks.
    """
    if len(stream) < 2:
        raise ValueError("need at least two tasks")
    variant = RunVariant.DMC_OT
    state = init_state(stream, config, variant, seed, feature_dim)
    rng = np.random.default_rng([seed, 3])
    first, second = stream.tasks[0], stream.tasks[1]
    state = run_task(state, first, config, variant, rng)
    stale = {c: state.memory[c] for c in first.class_ids}
    state = run_task(state, second, config, variant, rng)
    calibrated = {c: state.memory[c] for c in first.class_ids}
    truth = extract_class_stats(state.encoder, first.train, expected_classes=first.class_ids)
    cal = float(np.mean([w2_distance_sq(calibrated[c], truth[c]) for c in first.class_ids]))
    unc = float(np.mean([w2_distance_sq(stale[c], truth[c]) for c in first.class_ids]))
    return cal, unc


def save_checkpoint(state: PipelineState, path) -> None:
    """Serialize the full pipeline state; round-trips are bit-exact."""
    bank = state.bank
    class_ids = sorted(bank.class_prompts)
    task_ids = sorted(bank.task_prompts)
    mem_ids = sorted(state.memory)
    d = bank.embed_dim
    meta = {
        "format_version": 1,
        "seen_tasks": list(state.seen_tasks),
        "beta": bank.beta,
        "projector_seed": bank.projector_seed,
        "prompt_len": bank.prompt_len,
    }
    anchor_ids = sorted(state.anchors.vectors)
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        enc_weights=state.encoder.weights,
        enc_version=np.array([state.encoder.version], dtype=np.int64),
        anchor_ids=np.array(anchor_ids, dtype=np.int64),
        anchor_vecs=(
            np.stack([state.anchors.vectors[c] for c in anchor_ids])
            if anchor_ids else np.zeros((0, d))
        ),
        mem_ids=np.array(mem_ids, dtype=np.int64),
        mem_counts=np.array([state.memory[c].count for c in mem_ids], dtype=np.int64),
        mem_means=(
            np.stack([state.memory[c].mean for c in mem_ids]) if mem_ids else np.zeros((0, d))
        ),
        mem_covs=(
            np.stack([state.memory[c].covariance for c in mem_ids])
            if mem_ids else np.zeros((0, d, d))
        ),
        bank_class_ids=np.array(class_ids, dtype=np.int64),
        bank_class_tasks=np.array([bank.class_to_task[c] for c in class_ids], dtype=np.int64),
        bank_class_tokens=(
            np.stack([bank.class_prompts[c] for c in class_ids])
            if class_ids else np.zeros((0, bank.prompt_len, bank.token_dim))
        ),
        bank_task_ids=np.array(task_ids, dtype=np.int64),
        bank_task_tokens=(
            np.stack([bank.task_prompts[t] for t in task_ids])
            if task_ids else np.zeros((0, bank.prompt_len, bank.token_dim))
        ),
        bank_projector=bank.projector,
    )


def load_checkpoint(path) -> PipelineState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["format_version"] != 1:
            raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
        encoder = Encoder(weights=data["enc_weights"], version=int(data["enc_version"][0]))
        anchors = AnchorSet(
            {int(c): data["anchor_vecs"][i] for i, c in enumerate(data["anchor_ids"])}
        )
        memory = {
            int(c): GaussianStat(
                mean=data["mem_means"][i],
                covariance=data["mem_covs"][i],
                count=int(data["mem_counts"][i]),
            )
            for i, c in enumerate(data["mem_ids"])
        }
        class_ids = [int(c) for c in data["bank_class_ids"]]
        task_ids = [int(t) for t in data["bank_task_ids"]]
        bank = PromptBank(
            class_prompts={c: data["bank_class_tokens"][i] for i, c in enumerate(class_ids)},
            task_prompts={t: data["bank_task_tokens"][i] for i, t in enumerate(task_ids)},
            class_to_task={
                c: int(data["bank_class_tasks"][i]) for i, c in enumerate(class_ids)
            },
            beta=float(meta["beta"]),
            projector=data["bank_projector"],
            projector_seed=int(meta["projector_seed"]),
            prompt_len=int(meta["prompt_len"]),
        )
        return PipelineState(
            encoder=encoder,
            bank=bank,
            memory=memory,
            seen_tasks=tuple(meta["seen_tasks"]),
            anchors=anchors,
        )
