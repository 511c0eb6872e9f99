"""Small deterministic byte-level transformer with frequent checkpoints.

Decoder-only, pre-layernorm, learned positional embeddings, GELU MLP, untied
output head.  Forward and backward passes are hand-written numpy so training
is a pure function of (corpus, config): same inputs, bit-identical
checkpoints.  Parameters are float32; the math is dtype-agnostic so the
gradient check can run the whole stack in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import EOT_TOKEN, VOCAB_SIZE, Corpus, Probe
from .defaults import SIGMA, TRIALS
from .metric import levenshtein_batch

LN_EPS = 1e-5
CKPT_MAGIC = b"MAUD"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    context_window: int = 128
    layer_count: int = 2
    model_width: int = 128
    head_count: int = 4
    learning_rate: float = 1e-3  # peak, after warmup
    final_lr_fraction: float = 0.1
    warmup_steps: int = 100
    weight_decay: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    batch_size: int = 16
    total_steps: int = 1000
    checkpoint_every: int = 250
    seed: int = 0

    def validate(self) -> None:
        if self.model_width % self.head_count:
            raise ValueError("model_width must be divisible by head_count")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        for name in ("vocab_size", "context_window", "layer_count", "batch_size", "total_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_steps < 0 or self.learning_rate <= 0:
            raise ValueError("invalid learning-rate schedule")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class CheckpointRecord:
    step: int
    params: dict[str, np.ndarray]
    config: ModelConfig
    rng_state: dict
    perturbation: dict | None = None  # {base_step, seed, sigma} for perturbed copies


@dataclass(frozen=True)
class PerturbationTrial:
    trial_seed: tuple
    sigma: float
    resulting_kl_ld: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """GPT-2 style init: N(0, 0.02), residual projections scaled down."""
    d = config.model_width
    v = config.vocab_size
    std = 0.02
    proj_std = std / math.sqrt(2 * config.layer_count)

    def normal(shape, s):
        return rng.normal(0.0, s, shape).astype(np.float32)

    params: dict[str, np.ndarray] = {
        "tok_emb": normal((v, d), std),
        "pos_emb": normal((config.context_window, d), std),
    }
    for i in range(config.layer_count):
        p = f"h{i}."
        params[p + "ln1.g"] = np.ones(d, dtype=np.float32)
        params[p + "ln1.b"] = np.zeros(d, dtype=np.float32)
        params[p + "attn.w_qkv"] = normal((d, 3 * d), std)
        params[p + "attn.b_qkv"] = np.zeros(3 * d, dtype=np.float32)
        params[p + "attn.w_out"] = normal((d, d), proj_std)
        params[p + "attn.b_out"] = np.zeros(d, dtype=np.float32)
        params[p + "ln2.g"] = np.ones(d, dtype=np.float32)
        params[p + "ln2.b"] = np.zeros(d, dtype=np.float32)
        params[p + "mlp.w_fc"] = normal((d, 4 * d), std)
        params[p + "mlp.b_fc"] = np.zeros(4 * d, dtype=np.float32)
        params[p + "mlp.w_out"] = normal((4 * d, d), proj_std)
        params[p + "mlp.b_out"] = np.zeros(d, dtype=np.float32)
    params["ln_f.g"] = np.ones(d, dtype=np.float32)
    params["ln_f.b"] = np.zeros(d, dtype=np.float32)
    params["lm_head"] = normal((d, v), std)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


# ---------------------------------------------------------------- primitives


def _gelu(x):
    c = math.sqrt(2.0 / math.pi)
    u = c * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_grad(x):
    c = math.sqrt(2.0 / math.pi)
    u = c * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * c * (1.0 + 3 * 0.044715 * x**2)


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _split_heads(x, heads):
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attn_fwd(a, params, prefix, heads):
    b, t, d = a.shape
    hd = d // heads
    qkv = a @ params[prefix + "w_qkv"] + params[prefix + "b_qkv"]
    q = _split_heads(qkv[..., :d], heads)
    k = _split_heads(qkv[..., d : 2 * d], heads)
    v = _split_heads(qkv[..., 2 * d :], heads)
    scale = 1.0 / math.sqrt(hd)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    mask = np.tril(np.ones((t, t), dtype=bool))
    scores = np.where(mask, scores, -np.inf)
    att = _softmax(scores)
    o = _merge_heads(att @ v)
    out = o @ params[prefix + "w_out"] + params[prefix + "b_out"]
    return out, (a, q, k, v, att, o, scale)


def _attn_bwd(dout, cache, params, prefix, grads, heads):
    a, q, k, v, att, o, scale = cache
    grads[prefix + "w_out"] += o.reshape(-1, o.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    grads[prefix + "b_out"] += dout.sum(axis=(0, 1))
    do = _split_heads(dout @ params[prefix + "w_out"].T, heads)
    datt = do @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ do
    ds = (datt - (datt * att).sum(axis=-1, keepdims=True)) * att
    dq = (ds @ k) * scale
    dk = (ds.transpose(0, 1, 3, 2) @ q) * scale
    dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
    grads[prefix + "w_qkv"] += a.reshape(-1, a.shape[-1]).T @ dqkv.reshape(-1, dqkv.shape[-1])
    grads[prefix + "b_qkv"] += dqkv.sum(axis=(0, 1))
    return dqkv @ params[prefix + "w_qkv"].T


def _mlp_fwd(x, params, prefix):
    pre = x @ params[prefix + "w_fc"] + params[prefix + "b_fc"]
    act = _gelu(pre)
    out = act @ params[prefix + "w_out"] + params[prefix + "b_out"]
    return out, (x, pre, act)


def _mlp_bwd(dout, cache, params, prefix, grads):
    x, pre, act = cache
    grads[prefix + "w_out"] += act.reshape(-1, act.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    grads[prefix + "b_out"] += dout.sum(axis=(0, 1))
    dact = dout @ params[prefix + "w_out"].T
    dpre = dact * _gelu_grad(pre)
    grads[prefix + "w_fc"] += x.reshape(-1, x.shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1])
    grads[prefix + "b_fc"] += dpre.sum(axis=(0, 1))
    return dpre @ params[prefix + "w_fc"].T


def _forward(params, x, config, want_cache=False):
    """Logits (B, T, V) for token batch ``x`` (B, T), optionally with caches."""
    b, t = x.shape
    if t > config.context_window:
        raise ValueError("context overflow: sequence longer than the context window")
    h = params["tok_emb"][x] + params["pos_emb"][:t]
    caches = []
    for i in range(config.layer_count):
        p = f"h{i}."
        a, ln1c = _ln_fwd(h, params[p + "ln1.g"], params[p + "ln1.b"])
        attn, attnc = _attn_fwd(a, params, p + "attn.", config.head_count)
        h = h + attn
        m, ln2c = _ln_fwd(h, params[p + "ln2.g"], params[p + "ln2.b"])
        mlp, mlpc = _mlp_fwd(m, params, p + "mlp.")
        h = h + mlp
        caches.append((ln1c, attnc, ln2c, mlpc))
    f, lnfc = _ln_fwd(h, params["ln_f.g"], params["ln_f.b"])
    logits = f @ params["lm_head"]
    if want_cache:
        return logits, (x, caches, f, lnfc)
    return logits


def loss_and_grads(params, x, y, config):
    """Mean next-token cross entropy over the batch and its parameter gradients."""
    logits, (x, caches, f, lnfc) = _forward(params, x, config, want_cache=True)
    b, t, v = logits.shape
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(b)[:, None], np.arange(t)[None, :]
    loss = float(-logp[rows[0], rows[1], y].mean())
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    dlogits = np.exp(logp)
    dlogits[rows[0], rows[1], y] -= 1.0
    dlogits /= b * t
    grads["lm_head"] += f.reshape(-1, f.shape[-1]).T @ dlogits.reshape(-1, v)
    df = dlogits @ params["lm_head"].T
    dh, dg, db = _ln_bwd(df, lnfc)
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db
    for i in reversed(range(config.layer_count)):
        p = f"h{i}."
        ln1c, attnc, ln2c, mlpc = caches[i]
        dm = _mlp_bwd(dh, mlpc, params, p + "mlp.", grads)
        dh2, dg, db = _ln_bwd(dm, ln2c)
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dh = dh + dh2
        da = _attn_bwd(dh, attnc, params, p + "attn.", grads, config.head_count)
        dh1, dg, db = _ln_bwd(da, ln1c)
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dh = dh + dh1
    grads["pos_emb"][:t] += dh.sum(axis=0)
    np.add.at(grads["tok_emb"], x.reshape(-1), dh.reshape(-1, dh.shape[-1]))
    return loss, grads


# ------------------------------------------------------------------ training


class CheckpointStore:
    """Ordered collection of training snapshots plus the training log."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._records: dict[int, CheckpointRecord] = {}
        self.loss_log: list[float] = []
        self.first_encounter: dict[int, int] = {}  # doc_id -> 1-indexed step

    def add(self, record: CheckpointRecord) -> None:
        self._records[record.step] = record

    def steps(self) -> list[int]:
        return sorted(self._records)

    def get(self, step: int) -> CheckpointRecord:
        return self._records[step]

    def final(self) -> CheckpointRecord:
        return self._records[max(self._records)]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for step in self.steps():
            save_checkpoint(self._records[step], directory / f"ckpt_{step:07d}.maud")
        log = {
            "loss": self.loss_log,
            "first_encounter": {str(k): v for k, v in sorted(self.first_encounter.items())},
            "steps": self.steps(),
        }
        (directory / "training_log.json").write_text(
            json.dumps(log, sort_keys=True, separators=(",", ":")) + "\n"
        )
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "CheckpointStore":
        directory = Path(directory)
        paths = sorted(directory.glob("ckpt_*.maud"))
        if not paths:
            raise FileNotFoundError(f"no checkpoints under {directory}")
        records = [load_checkpoint(p) for p in paths]
        store = cls(records[0].config)
        for r in records:
            store.add(r)
        log_path = directory / "training_log.json"
        if log_path.is_file():
            log = json.loads(log_path.read_text())
            store.loss_log = list(log.get("loss", []))
            store.first_encounter = {int(k): v for k, v in log.get("first_encounter", {}).items()}
        return store


def _lr_at(step: int, config: ModelConfig) -> float:
    peak = config.learning_rate
    floor = peak * config.final_lr_fraction
    if config.warmup_steps and step <= config.warmup_steps:
        return peak * step / config.warmup_steps
    span = max(config.total_steps - config.warmup_steps, 1)
    progress = min((step - config.warmup_steps) / span, 1.0)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


def _epoch_stream(corpus: Corpus, order: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Shuffled document stream with EOT separators, plus per-doc spans.

    Returned spans are in shuffled-stream coordinates, parallel to ``order``.
    """
    parts = []
    spans = []
    pos = 0
    for doc_id in order:
        doc = corpus.doc(int(doc_id))
        parts.append(doc)
        parts.append(np.array([EOT_TOKEN], dtype=doc.dtype))
        spans.append((pos, pos + len(doc)))
        pos += len(doc) + 1
    return np.concatenate(parts), spans


def train(corpus: Corpus, config: ModelConfig, snapshot_rng_state: bool = True) -> CheckpointStore:
    """Deterministic training run; snapshots at step 0 and every checkpoint_every."""
    config.validate()
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if config.vocab_size <= EOT_TOKEN:
        raise ValueError(f"vocab_size must exceed the EOT separator id {EOT_TOKEN}")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng)
    m_state = {k: np.zeros_like(p) for k, p in params.items()}
    v_state = {k: np.zeros_like(p) for k, p in params.items()}
    store = CheckpointStore(config)

    chunk = config.context_window + 1
    per_step = config.batch_size * chunk

    def snapshot(step):
        state = rng.bit_generator.state if snapshot_rng_state else {}
        store.add(
            CheckpointRecord(
                step=step,
                params={k: p.copy() for k, p in params.items()},
                config=config,
                rng_state=json.loads(json.dumps(state, default=int)),
            )
        )

    snapshot(0)
    step = 0
    epoch = 0
    while step < config.total_steps:
        order = np.random.default_rng((config.seed, epoch)).permutation(len(corpus))
        stream, spans = _epoch_stream(corpus, order)
        n_chunks = len(stream) // chunk
        n_steps = n_chunks // config.batch_size
        if n_steps == 0:
            raise ValueError(
                f"corpus too small for one optimizer step: {len(stream)} tokens "
                f"< batch of {per_step}"
            )
        epoch_base = step
        take = min(n_steps, config.total_steps - step)
        consumed_chunks = take * config.batch_size
        for doc_id, (a, _b) in zip(order, spans):
            first_chunk = a // chunk
            if first_chunk < consumed_chunks and int(doc_id) not in store.first_encounter:
                store.first_encounter[int(doc_id)] = epoch_base + first_chunk // config.batch_size + 1
        data = stream[: consumed_chunks * chunk].reshape(consumed_chunks, chunk)
        for local in range(take):
            batch = data[local * config.batch_size : (local + 1) * config.batch_size]
            x = batch[:, :-1].astype(np.int64)
            y = batch[:, 1:].astype(np.int64)
            loss, grads = loss_and_grads(params, x, y, config)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at step {step + 1}")
            store.loss_log.append(loss)
            step += 1
            gnorm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            scale = min(1.0, config.grad_clip / (gnorm + 1e-12))
            lr = _lr_at(step, config)
            b1, b2 = config.adam_beta1, config.adam_beta2
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for name in params:
                g = grads[name] * scale
                m_state[name] = b1 * m_state[name] + (1 - b1) * g
                v_state[name] = b2 * v_state[name] + (1 - b2) * g * g
                update = (m_state[name] / c1) / (np.sqrt(v_state[name] / c2) + config.adam_eps)
                if params[name].ndim == 2 and config.weight_decay:
                    update = update + config.weight_decay * params[name]
                params[name] = (params[name] - lr * update).astype(np.float32)
            if step % config.checkpoint_every == 0 or step == config.total_steps:
                snapshot(step)
        epoch += 1
    return store


# ---------------------------------------------------------------- inference


def _prefill(params, x, config):
    """Forward over full contexts, returning per-layer KV caches and last hidden."""
    b, t = x.shape
    h = params["tok_emb"][x] + params["pos_emb"][:t]
    kvs = []
    for i in range(config.layer_count):
        p = f"h{i}."
        a, _ = _ln_fwd(h, params[p + "ln1.g"], params[p + "ln1.b"])
        attn, (_, _q, k, v, _att, _o, _s) = _attn_fwd(a, params, p + "attn.", config.head_count)
        h = h + attn
        m, _ = _ln_fwd(h, params[p + "ln2.g"], params[p + "ln2.b"])
        mlp, _ = _mlp_fwd(m, params, p + "mlp.")
        h = h + mlp
        kvs.append((k, v))  # (B, H, t, hd)
    f, _ = _ln_fwd(h[:, -1:], params["ln_f.g"], params["ln_f.b"])
    return kvs, (f[:, 0] @ params["lm_head"])


def _decode_step(params, tokens, pos, kvs, config):
    """One greedy step at absolute position ``pos`` given cached K/V up to pos."""
    heads = config.head_count
    d = config.model_width
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)
    h = params["tok_emb"][tokens] + params["pos_emb"][pos]
    for i in range(config.layer_count):
        p = f"h{i}."
        a, _ = _ln_fwd(h, params[p + "ln1.g"], params[p + "ln1.b"])
        qkv = a @ params[p + "attn.w_qkv"] + params[p + "attn.b_qkv"]
        q = qkv[:, :d].reshape(-1, heads, hd)
        k_new = qkv[:, d : 2 * d].reshape(-1, heads, hd)
        v_new = qkv[:, 2 * d :].reshape(-1, heads, hd)
        k_cache, v_cache = kvs[i]
        k_cache[:, :, pos] = k_new
        v_cache[:, :, pos] = v_new
        scores = np.einsum("bhd,bhtd->bht", q, k_cache[:, :, : pos + 1]) * scale
        att = _softmax(scores)
        o = np.einsum("bht,bhtd->bhd", att, v_cache[:, :, : pos + 1]).reshape(-1, d)
        h = h + o @ params[p + "attn.w_out"] + params[p + "attn.b_out"]
        m, _ = _ln_fwd(h, params[p + "ln2.g"], params[p + "ln2.b"])
        act = _gelu(m @ params[p + "mlp.w_fc"] + params[p + "mlp.b_fc"])
        h = h + act @ params[p + "mlp.w_out"] + params[p + "mlp.b_out"]
    f, _ = _ln_fwd(h, params["ln_f.g"], params["ln_f.b"])
    return f @ params["lm_head"]


def greedy_continue_batch(ckpt: CheckpointRecord, contexts: np.ndarray, l: int) -> np.ndarray:
    """Greedy l-token continuations for a batch of equal-length contexts.

    Temperature-0 decoding; argmax ties resolve to the lowest token id.
    """
    config = ckpt.config
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.ndim != 2 or contexts.shape[1] < 1:
        raise ValueError("contexts must be a non-empty (batch, k) array")
    n, k = contexts.shape
    if k + l > config.context_window:
        raise ValueError(
            f"context overflow: {k} context + {l} continuation tokens "
            f"exceed the {config.context_window}-token window"
        )
    if l == 0:
        return np.empty((n, 0), dtype=np.uint16)
    params = ckpt.params
    heads = config.head_count
    hd = config.model_width // heads
    dtype = params["tok_emb"].dtype
    kvs_full = [
        (
            np.zeros((n, heads, k + l, hd), dtype=dtype),
            np.zeros((n, heads, k + l, hd), dtype=dtype),
        )
        for _ in range(config.layer_count)
    ]
    prefill_kvs, logits = _prefill(params, contexts, config)
    for i, (pk, pv) in enumerate(prefill_kvs):
        kvs_full[i][0][:, :, :k] = pk
        kvs_full[i][1][:, :, :k] = pv
    out = np.empty((n, l), dtype=np.uint16)
    tokens = logits.argmax(axis=-1)
    out[:, 0] = tokens
    for j in range(1, l):
        logits = _decode_step(params, tokens, k + j - 1, kvs_full, config)
        tokens = logits.argmax(axis=-1)
        out[:, j] = tokens
    return out


def greedy_continue(ckpt: CheckpointRecord, context, l: int) -> np.ndarray:
    """Greedy continuation for one context (see greedy_continue_batch)."""
    context = np.asarray(context, dtype=np.int64)
    return greedy_continue_batch(ckpt, context[None, :], l)[0]


def sequence_loss_batch(ckpt: CheckpointRecord, probes: list[Probe]) -> np.ndarray:
    """Mean teacher-forced cross entropy (nats) over each probe's target."""
    if not probes:
        return np.empty(0, dtype=np.float64)
    k = probes[0].k
    l = probes[0].l
    if any(p.k != k or p.l != l for p in probes):
        raise ValueError("probes in one batch must share k and l")
    config = ckpt.config
    if k + l > config.context_window:
        raise ValueError("context overflow: probe window exceeds the context window")
    windows = np.stack([p.window() for p in probes]).astype(np.int64)
    logits = _forward(ckpt.params, windows[:, :-1], config)[:, k - 1 :, :]
    logits = logits.astype(np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    targets = windows[:, k:]
    rows = np.arange(len(probes))[:, None], np.arange(l)[None, :]
    return -logp[rows[0], rows[1], targets].mean(axis=1)


def sequence_loss(ckpt: CheckpointRecord, probe: Probe) -> float:
    return float(sequence_loss_batch(ckpt, [probe])[0])


# ------------------------------------------------------------- perturbation


def perturb(ckpt: CheckpointRecord, sigma: float = SIGMA, seed=0) -> CheckpointRecord:
    """Fresh record with i.i.d. N(0, sigma^2) noise on every parameter."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    rng = np.random.default_rng(seed)
    noisy = {
        name: (ckpt.params[name] + rng.normal(0.0, sigma, ckpt.params[name].shape)).astype(
            np.float32
        )
        for name in sorted(ckpt.params)
    }
    return CheckpointRecord(
        step=ckpt.step,
        params=noisy,
        config=ckpt.config,
        rng_state=ckpt.rng_state,
        perturbation={"base_step": ckpt.step, "seed": seed, "sigma": sigma},
    )


def best_of_perturbations_batch(
    ckpt: CheckpointRecord,
    probes: list[Probe],
    trials: int = TRIALS,
    sigma: float = SIGMA,
    seed: int = 0,
    decode_batch: int = 512,
):
    """kl-LD of every probe under each of ``trials`` perturbations.

    Returns (best_lds, best_seeds, lds) where lds has shape (trials, probes),
    best_lds is the per-probe minimum and best_seeds the per-probe argmin trial
    seed (earliest trial on ties).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not probes:
        raise ValueError("no probes given")
    k = probes[0].k
    l = probes[0].l
    if any(p.k != k or p.l != l for p in probes):
        raise ValueError("probes in one batch must share k and l")
    contexts = np.stack([p.context for p in probes]).astype(np.int64)
    targets = np.stack([p.target for p in probes]).astype(np.int64)
    lds = np.empty((trials, len(probes)), dtype=np.int64)
    trial_seeds = [(seed, i) for i in range(trials)]
    for i, trial_seed in enumerate(trial_seeds):
        noisy = perturb(ckpt, sigma, trial_seed)
        for lo in range(0, len(probes), decode_batch):
            hi = min(lo + decode_batch, len(probes))
            conts = greedy_continue_batch(noisy, contexts[lo:hi], l)
            lds[i, lo:hi] = levenshtein_batch(targets[lo:hi], conts.astype(np.int64))
    best_idx = lds.argmin(axis=0)
    best_lds = lds[best_idx, np.arange(len(probes))]
    best_seeds = [trial_seeds[j] for j in best_idx]
    return best_lds, best_seeds, lds


def best_of_perturbations(
    ckpt: CheckpointRecord,
    probe: Probe,
    trials: int = TRIALS,
    sigma: float = SIGMA,
    seed: int = 0,
):
    """Minimum kl-LD over perturbation trials for one probe, with the full record."""
    best_lds, best_seeds, lds = best_of_perturbations_batch(ckpt, [probe], trials, sigma, seed)
    records = [
        PerturbationTrial(trial_seed=(seed, i), sigma=sigma, resulting_kl_ld=int(lds[i, 0]))
        for i in range(trials)
    ]
    return int(best_lds[0]), best_seeds[0], records


def weight_delta(a: CheckpointRecord, b: CheckpointRecord) -> float:
    """L2 distance between two checkpoints' flattened parameters."""
    if sorted(a.params) != sorted(b.params):
        raise ValueError("checkpoints have different parameter sets")
    total = 0.0
    for name in a.params:
        pa, pb = a.params[name], b.params[name]
        if pa.shape != pb.shape:
            raise ValueError(f"shape mismatch for {name}: {pa.shape} vs {pb.shape}")
        d = pa.astype(np.float64) - pb.astype(np.float64)
        total += float((d * d).sum())
    return math.sqrt(total)


def weight_histogram(ckpt: CheckpointRecord, bins: int = 64):
    """Histogram of |parameter| magnitudes; counts sum to the parameter count."""
    flat = np.concatenate([p.ravel().astype(np.float64) for p in ckpt.params.values()])
    mags = np.abs(flat)
    top = float(mags.max()) if mags.size else 0.0
    if top == 0.0:
        edges = np.linspace(0.0, 1.0, bins + 1)
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = mags.size
        return counts, edges
    counts, edges = np.histogram(mags, bins=bins, range=(0.0, top))
    return counts.astype(np.int64), edges


# ------------------------------------------------------------ checkpoint IO


def save_checkpoint(record: CheckpointRecord, path: str | Path) -> Path:
    """Write magic + version + canonical JSON header + little-endian f32 arrays."""
    path = Path(path)
    names = sorted(record.params)
    arrays = []
    offset = 0
    for name in names:
        p = record.params[name]
        arrays.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size * 4
    header = {
        "arrays": arrays,
        "config": record.config.to_json(),
        "perturbation": record.perturbation,
        "rng_state": record.rng_state,
        "step": record.step,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.uint32(CKPT_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(record.params[name], dtype="<f4").tobytes())
    return path


def load_checkpoint(path: str | Path) -> CheckpointRecord:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = int(np.frombuffer(raw[4:8], dtype=np.uint32)[0])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(raw[8:12], dtype=np.uint32)[0])
    header = json.loads(raw[12 : 12 + hlen].decode())
    data = raw[12 + hlen :]
    params = {}
    for spec in header["arrays"]:
        size = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        start = spec["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=start)
        params[spec["name"]] = arr.reshape(spec["shape"]).copy()
    return CheckpointRecord(
        step=header["step"],
        params=params,
        config=ModelConfig.from_json(header["config"]),
        rng_state=header["rng_state"],
        perturbation=header.get("perturbation"),
    )
