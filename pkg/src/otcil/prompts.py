"""Soft-prompt prototype classifier.

Class prototypes are produced by mean-pooling learnable token blocks,
projecting through a frozen orthogonal map (the text-encoder stand-in),
and L2-normalizing. A class embedding is composed with its task's
embedding scaled by ``beta`` and renormalized. All losses come with
analytic gradients with respect to the token blocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import Schedule
from .gaussian import FeatureBatch

# Norm below which an encoded or composed embedding is considered degenerate
_NORM_EPS = 1e-12

PROMPT_INIT_SCALE = 0.02


def make_projector(token_dim: int, out_dim: int, seed: int) -> np.ndarray:
    """Frozen (out_dim x token_dim) projector with orthonormal rows."""
    if token_dim < out_dim or out_dim < 1:
        raise ValueError("token_dim must be >= out_dim >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((token_dim, out_dim))
    q, r = np.linalg.qr(g)
    # Fix the sign convention so the projector is a pure function of the seed
    q = q * np.sign(np.diag(r))
    return q.T.copy()


@dataclass
class PromptBank:
    """Learnable per-class and per-task prompt token blocks.

    ``class_prompts`` and ``task_prompts`` map ids to (M, token_dim)
    arrays; ``class_to_task`` records which task owns each class. The
    projector is frozen and shared.
    """

    class_prompts: "dict[int, np.ndarray]"
    task_prompts: "dict[int, np.ndarray]"
    class_to_task: "dict[int, int]"
    beta: float
    projector: np.ndarray
    projector_seed: int
    prompt_len: int

    def __post_init__(self) -> None:
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        for cid, tid in self.class_to_task.items():
            if cid not in self.class_prompts:
                raise ValueError(f"class {cid} has no prompt block")
            if tid not in self.task_prompts:
                raise ValueError(f"class {cid} references unknown task {tid}")
        for block in list(self.class_prompts.values()) + list(self.task_prompts.values()):
            if block.shape != (self.prompt_len, self.projector.shape[1]):
                raise ValueError("token block shape mismatch")

    @property
    def embed_dim(self) -> int:
        return int(self.projector.shape[0])

    @property
    def token_dim(self) -> int:
        return int(self.projector.shape[1])

    @staticmethod
    def create(embed_dim: int, prompt_len: int, beta: float, projector_seed: int,
               token_dim: "int | None" = None) -> "PromptBank":
        token_dim = embed_dim if token_dim is None else token_dim
        projector = make_projector(token_dim, embed_dim, projector_seed)
        return PromptBank(
            class_prompts={},
            task_prompts={},
            class_to_task={},
            beta=float(beta),
            projector=projector,
            projector_seed=int(projector_seed),
            prompt_len=int(prompt_len),
        )

    def add_task(self, task_id: int, class_ids: "list[int]", rng: np.random.Generator) -> None:
        """Initialize fresh token blocks for a new task and its classes."""
        if task_id in self.task_prompts:
            raise ValueError(f"task {task_id} already present")
        shape = (self.prompt_len, self.token_dim)
        self.task_prompts[task_id] = PROMPT_INIT_SCALE * rng.standard_normal(shape)
        for cid in class_ids:
            if cid in self.class_prompts:
                raise ValueError(f"class {cid} already present")
            self.class_prompts[cid] = PROMPT_INIT_SCALE * rng.standard_normal(shape)
            self.class_to_task[cid] = task_id

    def copy(self) -> "PromptBank":
        return PromptBank(
            class_prompts={c: b.copy() for c, b in self.class_prompts.items()},
            task_prompts={t: b.copy() for t, b in self.task_prompts.items()},
            class_to_task=dict(self.class_to_task),
            beta=self.beta,
            projector=self.projector.copy(),
            projector_seed=self.projector_seed,
            prompt_len=self.prompt_len,
        )

    def embeddings(self) -> "SoftEmbeddingSet":
        """Compose the current unit-norm class embeddings."""
        class_ids = sorted(self.class_prompts)
        if not class_ids:
            raise ValueError("empty prompt bank")
        task_emb = {t: encode_prompt(b, self.projector) for t, b in self.task_prompts.items()}
        rows = []
        for cid in class_ids:
            rows.append(
                compose_embedding(
                    self.class_prompts[cid],
                    self.task_prompts[self.class_to_task[cid]],
                    self.beta,
                    self.projector,
                )
            )
        return SoftEmbeddingSet(
            class_ids=np.array(class_ids, dtype=np.int64),
            class_embeddings=np.stack(rows),
            class_to_task=dict(self.class_to_task),
            task_embeddings=task_emb,
        )


@dataclass(frozen=True)
class SoftEmbeddingSet:
    """Composed unit-norm class embeddings plus encoded task embeddings."""

    class_ids: np.ndarray
    class_embeddings: np.ndarray
    class_to_task: "dict[int, int]"
    task_embeddings: "dict[int, np.ndarray]"

    def __len__(self) -> int:
        return int(self.class_ids.size)


def encode_prompt(tokens: np.ndarray, projector: np.ndarray) -> np.ndarray:
    """Mean-pool token rows, project, and L2-normalize."""
    w, _ = _encode_cached(tokens, projector)
    return w


def _encode_cached(tokens: np.ndarray, projector: np.ndarray):
    tokens = np.asarray(tokens, dtype=np.float64)
    if not np.all(np.isfinite(tokens)):
        raise ValueError("non-finite prompt tokens")
    pooled = tokens.mean(axis=0)
    v = projector @ pooled
    norm = float(np.linalg.norm(v))
    if norm < _NORM_EPS:
        raise ValueError("degenerate prompt")
    w = v / norm
    return w, (norm, tokens.shape[0])


def _encode_vjp(grad_out: np.ndarray, w: np.ndarray, cache, projector: np.ndarray) -> np.ndarray:
    """Pull a gradient on the unit embedding back to the token block."""
    norm, m = cache
    g_v = (grad_out - float(grad_out @ w) * w) / norm
    g_pooled = projector.T @ g_v
    return np.tile(g_pooled / m, (m, 1))


def compose_embedding(
    class_tokens: np.ndarray,
    task_tokens: np.ndarray,
    beta: float,
    projector: np.ndarray,
) -> np.ndarray:
    """Unit-norm combination of class and scaled task embeddings."""
    w, _ = _compose_cached(class_tokens, task_tokens, beta, projector)
    return w


def _compose_cached(class_tokens, task_tokens, beta, projector):
    u, cache_u = _encode_cached(class_tokens, projector)
    t, cache_t = _encode_cached(task_tokens, projector)
    s = u + beta * t
    norm = float(np.linalg.norm(s))
    if norm < _NORM_EPS:
        raise ValueError("cancelled embedding")
    w = s / norm
    return w, (u, cache_u, t, cache_t, norm)


def _compose_vjp(grad_out, w, cache, beta, projector):
    """Gradients of the composed embedding w.r.t. both token blocks."""
    u, cache_u, t, cache_t, norm = cache
    g_s = (grad_out - float(grad_out @ w) * w) / norm
    g_class = _encode_vjp(g_s, u, cache_u, projector)
    g_task = _encode_vjp(beta * g_s, t, cache_t, projector)
    return g_class, g_task


def zero_gradients(bank: PromptBank) -> "dict[str, dict[int, np.ndarray]]":
    shape = (bank.prompt_len, bank.token_dim)
    return {
        "class": {cid: np.zeros(shape) for cid in bank.class_prompts},
        "task": {tid: np.zeros(shape) for tid in bank.task_prompts},
    }


def ce_loss_and_grad(
    features: np.ndarray,
    labels: np.ndarray,
    bank: PromptBank,
    tau: float,
) -> "tuple[float, dict[str, dict[int, np.ndarray]]]":
    """Temperature-scaled cosine-similarity cross-entropy over all classes.

    Returns the mean negative log-likelihood and gradients for every
    class and task token block in the bank.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    class_ids = sorted(bank.class_prompts)
    index_of = {cid: i for i, cid in enumerate(class_ids)}
    unknown = set(labels.tolist()) - set(class_ids)
    if unknown:
        raise ValueError(f"unknown label(s) {sorted(unknown)}")

    task_ids = sorted(bank.task_prompts)
    task_index = {tid: i for i, tid in enumerate(task_ids)}
    proj = bank.projector
    m = bank.prompt_len

    # Encode all task and class blocks in one shot
    task_tokens = np.stack([bank.task_prompts[t] for t in task_ids])
    pooled_t = task_tokens.mean(axis=1)
    vt = pooled_t @ proj.T
    nt = np.linalg.norm(vt, axis=1)
    if np.any(nt < _NORM_EPS):
        raise ValueError("degenerate prompt")
    et = vt / nt[:, None]

    class_tokens = np.stack([bank.class_prompts[c] for c in class_ids])
    pooled_c = class_tokens.mean(axis=1)
    vc = pooled_c @ proj.T
    nc = np.linalg.norm(vc, axis=1)
    if np.any(nc < _NORM_EPS):
        raise ValueError("degenerate prompt")
    ec = vc / nc[:, None]

    owner = np.array([task_index[bank.class_to_task[c]] for c in class_ids])
    s = ec + bank.beta * et[owner]
    ns = np.linalg.norm(s, axis=1)
    if np.any(ns < _NORM_EPS):
        raise ValueError("cancelled embedding")
    emb = s / ns[:, None]

    n = features.shape[0]
    label_idx = np.array([index_of[int(y)] for y in labels])
    logits = features @ emb.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[np.arange(n), label_idx])))

    # dL/d(embedding) per class, through the softmax and temperature
    delta = probs
    delta[np.arange(n), label_idx] -= 1.0
    grad_emb = (delta.T @ features) / (n * tau)

    # Back through composition, projection, and pooling
    g_s = (grad_emb - np.einsum("ij,ij->i", grad_emb, emb)[:, None] * emb) / ns[:, None]
    g_ec = g_s
    g_et = np.zeros_like(et)
    np.add.at(g_et, owner, bank.beta * g_s)

    g_vc = (g_ec - np.einsum("ij,ij->i", g_ec, ec)[:, None] * ec) / nc[:, None]
    g_pooled_c = g_vc @ proj
    g_vt = (g_et - np.einsum("ij,ij->i", g_et, et)[:, None] * et) / nt[:, None]
    g_pooled_t = g_vt @ proj

    grads = {
        "class": {
            cid: np.repeat(g_pooled_c[i][None, :] / m, m, axis=0)
            for i, cid in enumerate(class_ids)
        },
        "task": {
            tid: np.repeat(g_pooled_t[i][None, :] / m, m, axis=0)
            for i, tid in enumerate(task_ids)
        },
    }
    return loss, grads


def ortho_loss_and_grad(
    bank: PromptBank,
) -> "tuple[float, dict[int, np.ndarray]]":
    """Mean squared pairwise inner product of encoded task embeddings.

    Zero for a single task; otherwise normalized by K(K-1) over ordered
    pairs. Gradients are returned per task token block.
    """
    task_ids = sorted(bank.task_prompts)
    k = len(task_ids)
    grads = {tid: np.zeros((bank.prompt_len, bank.token_dim)) for tid in task_ids}
    if k <= 1:
        return 0.0, grads
    encoded = [_encode_cached(bank.task_prompts[tid], bank.projector) for tid in task_ids]
    emb = np.stack([w for w, _ in encoded])
    gram = emb @ emb.T
    off = gram - np.diag(np.diag(gram))
    norm = 1.0 / (k * (k - 1))
    loss = float(norm * np.sum(off**2))
    # d/de_i of sum over ordered pairs: 4 * sum_j (e_i . e_j) e_j
    grad_emb = 4.0 * norm * (off @ emb)
    for i, tid in enumerate(task_ids):
        w, cache = encoded[i]
        grads[tid] += _encode_vjp(grad_emb[i], w, cache, bank.projector)
    return loss, grads


def total_loss(ce: float, ortho: float, lambda_ortho: float) -> float:
    """Weighted objective: cross-entropy plus the orthogonality penalty."""
    if lambda_ortho < 0.0:
        raise ValueError("lambda_ortho must be nonnegative")
    return float(ce + lambda_ortho * ortho)


def predict(feature: np.ndarray, embeddings: SoftEmbeddingSet) -> int:
    """Most cosine-similar class; ties break toward the lowest class id."""
    if len(embeddings) == 0:
        raise ValueError("empty embedding set")
    sims = embeddings.class_embeddings @ np.asarray(feature, dtype=np.float64)
    return int(embeddings.class_ids[int(np.argmax(sims))])


def predict_batch(features: np.ndarray, embeddings: SoftEmbeddingSet) -> np.ndarray:
    """Vectorized :func:`predict` over feature rows."""
    if len(embeddings) == 0:
        raise ValueError("empty embedding set")
    sims = np.asarray(features, dtype=np.float64) @ embeddings.class_embeddings.T
    return embeddings.class_ids[np.argmax(sims, axis=1)]


class _AdamState:
    """Per-block adaptive-moment accumulator."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_prompts(
    bank: PromptBank,
    real: FeatureBatch,
    replay: FeatureBatch,
    schedule: Schedule,
    task_id: "int | None" = None,
) -> PromptBank:
    """Gradient descent on the prompt objective over real plus replayed features.

    Only the given task's class prompts and its task prompt are updated;
    prompts of earlier tasks stay frozen. Returns a new bank; the input
    is untouched.
    """
    if schedule.steps == 0:
        raise ValueError("schedule with zero steps")
    bank = bank.copy()
    if task_id is None:
        task_id = max(bank.task_prompts)
    trainable_classes = [c for c, t in bank.class_to_task.items() if t == task_id]

    batches = [b for b in (real, replay) if len(b) > 0]
    if not batches:
        raise ValueError("no samples")
    features = np.concatenate([b.features for b in batches])
    labels = np.concatenate([b.labels for b in batches])

    adam: "dict[tuple, _AdamState]" = {}

    def update(kind: str, key: int, params: np.ndarray, grad: np.ndarray) -> None:
        if schedule.optimizer == "adam":
            state = adam.setdefault((kind, key), _AdamState(params.shape, schedule.lr))
            state.step(params, grad)
        else:
            params -= schedule.lr * grad

    prev_loss = None
    for _ in range(schedule.steps):
        ce, ce_grads = ce_loss_and_grad(features, labels, bank, schedule.tau)
        if schedule.lambda_ortho > 0.0:
            ortho, ortho_grads = ortho_loss_and_grad(bank)
        else:
            ortho, ortho_grads = 0.0, {}
        loss = total_loss(ce, ortho, schedule.lambda_ortho)
        if prev_loss is not None and loss > prev_loss + 1e-9:
            warnings.warn(
                f"prompt training loss increased ({prev_loss:.6f} -> {loss:.6f})",
                RuntimeWarning,
                stacklevel=2,
            )
        prev_loss = loss
        for cid in trainable_classes:
            update("class", cid, bank.class_prompts[cid], ce_grads["class"][cid])
        task_grad = ce_grads["task"][task_id].copy()
        if schedule.lambda_ortho > 0.0:
            task_grad += schedule.lambda_ortho * ortho_grads[task_id]
        update("task", task_id, bank.task_prompts[task_id], task_grad)
    return bank
