"""Conditional denoising diffusion over delta-action sequences.

Squared-cosine schedule, forward noising, ancestral reverse sampling with
the lower-bound posterior variance, training with AdamW plus EMA, and
versioned binary checkpoints (layout in docs/file_formats.md).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DiffusionConfig
from .datasets import FAMILIES, FAMILY_NAMES, Dataset, NormStats
from .nets import AdamW, DenoiserMLP, ema_update
from .seeding import TAG_TRAIN, substream

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class IncompatibleCheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step and cumulative signal-retention coefficients, index 0..K."""

    n_steps: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta: np.ndarray
    posterior_var: np.ndarray

    def __post_init__(self):
        k = self.n_steps
        for name in ("alpha", "alpha_bar", "beta", "posterior_var"):
            if getattr(self, name).shape != (k + 1,):
                raise ValueError(f"{name} must have length K + 1")


def cosine_schedule(n_steps: int) -> NoiseSchedule:
    """Squared-cosine cumulative schedule with per-step beta capped at 0.999."""
    if n_steps < 1:
        raise ValueError("need at least one denoising step")
    ks = np.arange(n_steps + 1)
    f = np.cos(((ks / n_steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * math.pi / 2.0) ** 2
    raw_bar = f / f[0]
    alpha = np.ones(n_steps + 1)
    alpha[1:] = np.clip(raw_bar[1:] / raw_bar[:-1], 1.0 - MAX_BETA, 1.0)
    alpha_bar = np.ones(n_steps + 1)
    alpha_bar[1:] = np.cumprod(alpha[1:])
    beta = 1.0 - alpha
    posterior_var = np.zeros(n_steps + 1)
    posterior_var[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return NoiseSchedule(n_steps, alpha, alpha_bar, beta, posterior_var)


def forward_noise(schedule: NoiseSchedule, z0: np.ndarray, k, epsilon: np.ndarray) -> np.ndarray:
    """z_k = sqrt(abar_k) z0 + sqrt(1 - abar_k) eps; k scalar or per-row."""
    z0 = np.asarray(z0, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if z0.shape != epsilon.shape:
        raise ValueError("z0 and epsilon must have the same shape")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > schedule.n_steps):
        raise ValueError("k out of range")
    abar = schedule.alpha_bar[k]
    if z0.ndim == 2 and abar.ndim == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * epsilon


def predict_noise(model: DenoiserMLP, obs: np.ndarray, z_k: np.ndarray, k) -> np.ndarray:
    """Deterministic denoiser forward pass; output matches z_k's shape."""
    z_k = np.atleast_2d(np.asarray(z_k, dtype=float))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if obs.shape[0] == 1 and z_k.shape[0] > 1:
        obs = np.broadcast_to(obs, (z_k.shape[0], obs.shape[1]))
    if z_k.shape[1] != model.action_width or obs.shape[1] != model.obs_dim:
        raise ValueError("input widths do not match the model")
    return model.forward(z_k, obs, k)


def reverse_step(schedule: NoiseSchedule, model, obs, z_k: np.ndarray, k: int,
                 rng: np.random.Generator, *, obs_proj=None, emb_proj=None) -> np.ndarray:
    """One ancestral update; deterministic at k == 1."""
    if not 1 <= k <= schedule.n_steps:
        raise ValueError("k out of range")
    z_k = np.asarray(z_k, dtype=float)
    if obs_proj is not None or emb_proj is not None:
        eps_hat = model.forward(z_k, obs_proj=obs_proj, emb_proj=emb_proj)
    else:
        eps_hat = model.forward(z_k, obs, k)
    alpha = schedule.alpha[k]
    abar = schedule.alpha_bar[k]
    mean = (z_k - (1.0 - alpha) / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if k == 1:
        return mean
    sigma = math.sqrt(schedule.posterior_var[k])
    return mean + sigma * rng.standard_normal(z_k.shape)


def sample(schedule: NoiseSchedule, model: DenoiserMLP, obs: np.ndarray, count: int,
           rng: np.random.Generator, norm: NormStats, delta_limit: float,
           pred_horizon: int, action_dim: int,
           emb_proj_table: np.ndarray | None = None) -> np.ndarray:
    """Draw `count` denormalized, per-step-clamped plans of shape (B, T, d)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    obs = np.asarray(obs, dtype=float)
    norm_obs = (obs - norm.obs_mean) / norm.obs_scale
    obs_proj = model.obs_projection(norm_obs[None, :])
    if emb_proj_table is None:
        emb_proj_table = model.emb_projection_table()
    z = rng.standard_normal((count, model.action_width))
    for k in range(schedule.n_steps, 0, -1):
        z = reverse_step(schedule, model, None, z, k, rng,
                         obs_proj=obs_proj, emb_proj=emb_proj_table[k])
    actions = norm.denormalize_act(z).reshape(count, pred_horizon, action_dim)
    return np.clip(actions, -delta_limit, delta_limit)


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    model: DenoiserMLP
    ema_model: DenoiserMLP
    optimizer: AdamW
    schedule: NoiseSchedule
    norm: NormStats
    step: int = 0
    loss_history: list = field(default_factory=list)


def training_loss_and_grads(model: DenoiserMLP, schedule: NoiseSchedule,
                            obs_batch: np.ndarray, act_batch: np.ndarray,
                            k: np.ndarray, eps: np.ndarray):
    """Mean squared noise-prediction error and parameter gradients.

    obs_batch and act_batch must already be normalized.
    """
    z_k = forward_noise(schedule, act_batch, k, eps)
    cache: dict = {}
    out = model.forward(z_k, obs_batch, k, cache=cache)
    diff = out - eps
    loss = float(np.mean(diff * diff))
    grad_out = 2.0 * diff / diff.size
    grads = model.backward(grad_out, cache)
    return loss, grads


def train(dataset: Dataset, family: str, cfg: DiffusionConfig, seed: int,
          hidden_dims: tuple[int, ...] | None = None, log=None) -> TrainState:
    """Minibatch denoising-loss training with EMA tracking."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.family != family:
        raise ValueError(f"dataset family {dataset.family!r} != requested {family!r}")
    hidden = tuple(hidden_dims) if hidden_dims is not None else tuple(cfg.hidden_dims)
    schedule = cosine_schedule(cfg.denoise_steps)
    rng = substream(seed, TAG_TRAIN, FAMILIES[family])
    model = DenoiserMLP(family, dataset.actions.shape[1], dataset.obs_width, hidden,
                        cfg.embed_dim, cfg.denoise_steps, rng)
    ema_model = model.clone()
    optimizer = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    state = TrainState(model, ema_model, optimizer, schedule, dataset.norm)

    obs_all = dataset.norm.normalize_obs(dataset.observations.astype(float))
    act_all = dataset.norm.normalize_act(dataset.actions.astype(float))
    n = len(dataset)
    batch = min(cfg.batch_size, n)
    ema_params = ema_model.parameters()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch):
            rows = perm[lo: lo + batch]
            k = rng.integers(1, cfg.denoise_steps + 1, size=len(rows))
            eps = rng.standard_normal((len(rows), act_all.shape[1]))
            loss, grads = training_loss_and_grads(model, schedule, obs_all[rows],
                                                  act_all[rows], k, eps)
            optimizer.step(grads)
            ema_update(ema_params, model.parameters(), cfg.ema_rate)
            state.step += 1
            losses.append(loss)
        state.loss_history.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, state.loss_history[-1])
    return state


# ---------------------------------------------------------------------------
# Policy bundle and checkpoint IO.
# ---------------------------------------------------------------------------

@dataclass
class Policy:
    """Frozen sampling bundle: EMA weights, schedule, and normalization."""

    family: str
    model: DenoiserMLP
    schedule: NoiseSchedule
    norm: NormStats
    obs_horizon: int
    pred_horizon: int
    action_dim: int
    frame_width: int
    morphology_digest: str
    meta: dict

    def __post_init__(self):
        self._emb_proj = self.model.emb_projection_table()

    def sample_plans(self, obs_vec: np.ndarray, count: int, rng: np.random.Generator,
                     delta_limit: float) -> np.ndarray:
        return sample(self.schedule, self.model, obs_vec, count, rng, self.norm,
                      delta_limit, self.pred_horizon, self.action_dim,
                      emb_proj_table=self._emb_proj)


def policy_from_state(state: TrainState, family: str, dataset: Dataset,
                      morphology_digest: str, meta: dict | None = None) -> Policy:
    return Policy(family, state.ema_model.clone(), state.schedule, state.norm,
                  dataset.t_o, dataset.t_p, dataset.action_dim, dataset.frame_width,
                  morphology_digest, dict(meta or {}))


CKPT_MAGIC = b"MARMCKP\x01"
CKPT_VERSION = 1


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(blob: bytes, off: int):
    (ndim,) = struct.unpack_from("<I", blob, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy().reshape(shape)
    off += 8 * count
    return arr, off


def save_checkpoint(policy: Policy, path: str | Path) -> None:
    model = policy.model
    meta_json = json.dumps(policy.meta, sort_keys=True, separators=(",", ":")).encode()
    digest_bytes = policy.morphology_digest.encode()
    body = bytearray()
    body += struct.pack("<IIIIIII", FAMILIES[policy.family], policy.schedule.n_steps,
                        policy.obs_horizon, policy.pred_horizon, policy.action_dim,
                        policy.frame_width, model.embed_dim)
    body += struct.pack("<I", model.obs_dim)
    body += struct.pack("<I", len(model.hidden_dims))
    body += struct.pack(f"<{len(model.hidden_dims)}I", *model.hidden_dims)
    body += struct.pack("<I", len(digest_bytes)) + digest_bytes
    body += struct.pack("<I", len(meta_json)) + meta_json
    body += _pack_array(policy.schedule.alpha)
    body += _pack_array(policy.schedule.alpha_bar)
    for arr in (policy.norm.obs_mean, policy.norm.obs_scale, policy.norm.act_mean,
                policy.norm.act_scale):
        body += _pack_array(arr)
    params = model.parameters()
    body += struct.pack("<I", len(params))
    for name, p in zip(model.parameter_names(), params):
        nb = name.encode()
        body += struct.pack("<I", len(nb)) + nb
        body += _pack_array(p)
    payload = bytes(body)
    checksum = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(payload)
        fh.write(checksum)


def load_checkpoint(path: str | Path, expect_morphology: str | None = None) -> Policy:
    blob = Path(path).read_bytes()
    if blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise IncompatibleCheckpointError("not a checkpoint file")
    off = len(CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != CKPT_VERSION:
        raise IncompatibleCheckpointError(f"unsupported checkpoint version {version}")
    payload = blob[off:-32]
    if hashlib.sha256(payload).digest() != blob[-32:]:
        raise IncompatibleCheckpointError("checkpoint payload checksum mismatch")

    family_id, n_steps, t_o, t_p, action_dim, frame_w, embed_dim = struct.unpack_from(
        "<IIIIIII", blob, off)
    off += 28
    (obs_dim,) = struct.unpack_from("<I", blob, off)
    off += 4
    (n_hidden,) = struct.unpack_from("<I", blob, off)
    off += 4
    hidden = struct.unpack_from(f"<{n_hidden}I", blob, off)
    off += 4 * n_hidden
    (dlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    digest = blob[off: off + dlen].decode()
    off += dlen
    (mlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off: off + mlen].decode())
    off += mlen
    alpha, off = _unpack_array(blob, off)
    alpha_bar, off = _unpack_array(blob, off)
    beta = 1.0 - alpha
    posterior = np.zeros(n_steps + 1)
    posterior[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    schedule = NoiseSchedule(n_steps, alpha, alpha_bar, beta, posterior)
    arrays = []
    for _ in range(4):
        arr, off = _unpack_array(blob, off)
        arrays.append(arr)
    norm = NormStats(*arrays)
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    family = FAMILY_NAMES[family_id]
    model = DenoiserMLP(family, t_p * action_dim, obs_dim, tuple(hidden), embed_dim,
                        n_steps)
    values = []
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4 + nlen
        arr, off = _unpack_array(blob, off)
        values.append(arr)
    model.set_parameters(values)
    if expect_morphology is not None and digest != expect_morphology:
        raise IncompatibleCheckpointError(
            "checkpoint was trained for a different arm morphology")
    return Policy(family, model, schedule, norm, t_o, t_p, action_dim, frame_w,
                  digest, meta)
