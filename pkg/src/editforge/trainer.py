"""Fine-tuning harness: noise-prediction loss, condition dropout, Adam loop.

The harness owns batching, dropout, the loss, and checkpointing; the model
is any object with ``predict_batch`` (and, for training, ``loss_and_grads``).
``TinyDenoiser`` is a deliberately small trainable model (a few hundred
parameters, analytic gradients written out by hand) so the whole loop runs
and gradient-checks in well under a second.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .editmath import NoiseSchedule
from .imgio import encode_latent, load_image
from .schema import TripletRecord
from .seeding import derive_seed

logger = logging.getLogger(__name__)

TEXT_EMBED_DIM = 8
# Fixed normalizer for the timestep feature; toy schedules stay well below it.
T_FEATURE_SCALE = 100.0


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    resolution: int = 512
    learning_rate: float = 5e-6
    drop_image: float = 0.05
    drop_text: float = 0.05
    drop_both: float = 0.05
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("drop_image", "drop_text", "drop_both"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


class BatchDenoiser(Protocol):
    def predict_batch(
        self, z_t: np.ndarray, t: np.ndarray, z_ori: np.ndarray, y_instr: Sequence[str]
    ) -> np.ndarray: ...


class TrainableDenoiser(BatchDenoiser, Protocol):
    """What the fine-tuning loop needs from a model; real backends plug in
    by exposing the same surface."""

    params: dict[str, np.ndarray]

    def loss_and_grads(self, batch: dict[str, Any]) -> tuple[float, dict[str, np.ndarray]]: ...


def text_embedding(text: str, dim: int = TEXT_EMBED_DIM) -> np.ndarray:
    """Fixed (untrained) hash embedding; empty text is the null conditioning."""
    if not text:
        return np.zeros(dim)
    rng = np.random.default_rng(derive_seed(0, "text-embed", text))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class TinyDenoiser:
    """Trainable mock: per-channel mixing of z_t/z_ori plus a conditioning MLP.

    eps_hat[b,c] = w_zt[c]*z_t[b,c] + w_zori[c]*z_ori[b,c] + bias[b,c], with
    bias = B tanh(A u + b1) + b2 and u = [embed(y), t/scale]. Analytic
    gradients are exact; the finite-difference check in the tests is the
    independent oracle.
    """

    def __init__(self, channels: int = 3, hidden: int = 16, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.hidden = hidden
        self.params: dict[str, np.ndarray] = {
            "w_zt": 0.1 * rng.standard_normal(channels),
            "w_zori": 0.1 * rng.standard_normal(channels),
            "A": 0.5 * rng.standard_normal((hidden, TEXT_EMBED_DIM + 1)),
            "b1": np.zeros(hidden),
            "B": 0.5 * rng.standard_normal((channels, hidden)),
            "b2": np.zeros(channels),
        }

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _features(self, t: np.ndarray, y_instr: Sequence[str]) -> np.ndarray:
        embeds = np.stack([text_embedding(y) for y in y_instr])
        return np.concatenate([embeds, (np.asarray(t) / T_FEATURE_SCALE)[:, None]], axis=1)

    def predict_batch(
        self, z_t: np.ndarray, t: np.ndarray, z_ori: np.ndarray, y_instr: Sequence[str]
    ) -> np.ndarray:
        u = self._features(t, y_instr)
        h = np.tanh(u @ self.params["A"].T + self.params["b1"])
        bias = h @ self.params["B"].T + self.params["b2"]
        return (
            self.params["w_zt"][None, :, None, None] * z_t
            + self.params["w_zori"][None, :, None, None] * z_ori
            + bias[:, :, None, None]
        )

    def loss_and_grads(self, batch: dict[str, Any]) -> tuple[float, dict[str, np.ndarray]]:
        z_t, t, z_ori, y_instr, eps = (
            batch["z_t"],
            batch["t"],
            batch["z_ori"],
            batch["y_instr"],
            batch["eps"],
        )
        u = self._features(t, y_instr)
        h = np.tanh(u @ self.params["A"].T + self.params["b1"])
        bias = h @ self.params["B"].T + self.params["b2"]
        eps_hat = (
            self.params["w_zt"][None, :, None, None] * z_t
            + self.params["w_zori"][None, :, None, None] * z_ori
            + bias[:, :, None, None]
        )
        diff = eps_hat - eps
        loss = float(np.mean(diff**2))
        dout = 2.0 * diff / diff.size
        dbias = dout.sum(axis=(2, 3))  # (B, C)
        dh = dbias @ self.params["B"]
        dpre = dh * (1.0 - h**2)
        grads = {
            "w_zt": np.einsum("bchw,bchw->c", dout, z_t),
            "w_zori": np.einsum("bchw,bchw->c", dout, z_ori),
            "A": dpre.T @ u,
            "b1": dpre.sum(axis=0),
            "B": dbias.T @ h,
            "b2": dbias.sum(axis=0),
        }
        return loss, grads


def compute_loss(batch: dict[str, Any], denoiser: BatchDenoiser) -> float:
    """Mean over the batch and elements of the squared noise-prediction error."""
    eps_hat = denoiser.predict_batch(batch["z_t"], batch["t"], batch["z_ori"], batch["y_instr"])
    eps = np.asarray(batch["eps"])
    if eps_hat.shape != eps.shape:
        raise ValueError(f"prediction shape {eps_hat.shape} does not match eps {eps.shape}")
    return float(np.mean((eps - eps_hat) ** 2))


def apply_condition_dropout(
    batch: dict[str, Any],
    probs: tuple[float, float, float],
    seed: int,
) -> dict[str, Any]:
    """Null image/text conditioning per three independent per-sample draws.

    probs = (p_image, p_text, p_both): the first nulls only the image
    latent, the second only the text, the third nulls both. The returned
    batch carries the raw draw flags under ``drop_flags``.
    """
    p_image, p_text, p_both = probs
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError("dropout probabilities must be in [0, 1]")
    n = len(batch["y_instr"])
    rng = np.random.default_rng(seed)
    flag_image = rng.random(n) < p_image
    flag_text = rng.random(n) < p_text
    flag_both = rng.random(n) < p_both
    null_image = flag_image | flag_both
    null_text = flag_text | flag_both
    z_ori = np.array(batch["z_ori"], copy=True)
    z_ori[null_image] = 0.0
    y_instr = ["" if null_text[i] else y for i, y in enumerate(batch["y_instr"])]
    out = dict(batch)
    out["z_ori"] = z_ori
    out["y_instr"] = y_instr
    out["drop_flags"] = {"image": flag_image, "text": flag_text, "both": flag_both}
    return out


class Adam:
    """Standard Adam, updating parameter arrays in place."""

    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        for name, g in grads.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            self._m[name] = self.b1 * self._m[name] + (1 - self.b1) * g
            self._v[name] = self.b2 * self._v[name] + (1 - self.b2) * g**2
            m_hat = self._m[name] / (1 - self.b1**self.step_count)
            v_hat = self._v[name] / (1 - self.b2**self.step_count)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class CheckpointHandle:
    directory: Path
    final_params: Path
    losses: list[float] = field(default_factory=list)
    aborted: bool = False


def _save_checkpoint(params: dict[str, np.ndarray], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **params)


def resize_image(image: np.ndarray, resolution: int) -> np.ndarray:
    """Nearest-neighbor resize to (resolution, resolution), float-preserving.

    Manifests mix branches with different native sizes; training needs one
    shape."""
    h, w = image.shape[:2]
    if (h, w) == (resolution, resolution):
        return image
    rows = (np.arange(resolution) * h) // resolution
    cols = (np.arange(resolution) * w) // resolution
    return image[np.ix_(rows, cols)]


def finetune(
    records: Sequence[TripletRecord],
    cfg: TrainConfig,
    denoiser: TrainableDenoiser,
    schedule: NoiseSchedule,
    out_dir: str | Path,
    images_root: str | Path,
) -> CheckpointHandle:
    """Noise-prediction fine-tuning over manifest triplets.

    Per step: sample timesteps and noise, forward-noise the target latents,
    apply condition dropout, take one Adam step on the prediction loss.
    Checkpoints land per epoch; a non-finite loss aborts with the last good
    checkpoint retained.
    """
    if not records:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    images_root = Path(images_root)
    z0 = np.stack(
        [
            encode_latent(resize_image(load_image(images_root / r.output_image), cfg.resolution))
            for r in records
        ]
    )
    z_ori_all = np.stack(
        [
            encode_latent(resize_image(load_image(images_root / r.input_image), cfg.resolution))
            for r in records
        ]
    )
    instructions = [r.instruction for r in records]
    n = len(records)
    optimizer = Adam(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    losses: list[float] = []
    aborted = False
    last_good = out_dir / "last_good.npz"
    _save_checkpoint(denoiser.params, last_good)
    step_idx = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rng = np.random.default_rng(derive_seed(cfg.seed, "batch", epoch, step_idx))
            t = rng.integers(1, schedule.num_steps + 1, size=len(idx))
            eps = rng.standard_normal(z0[idx].shape)
            a_bar = schedule.alpha_bars[t][:, None, None, None]
            z_t = np.sqrt(a_bar) * z0[idx] + np.sqrt(1.0 - a_bar) * eps
            batch = {
                "z_t": z_t,
                "t": t,
                "z_ori": z_ori_all[idx],
                "y_instr": [instructions[i] for i in idx],
                "eps": eps,
            }
            batch = apply_condition_dropout(
                batch,
                (cfg.drop_image, cfg.drop_text, cfg.drop_both),
                derive_seed(cfg.seed, "dropout", epoch, step_idx),
            )
            loss, grads = denoiser.loss_and_grads(batch)
            if not np.isfinite(loss):
                logger.error("non-finite loss at epoch %d step %d; aborting", epoch, step_idx)
                aborted = True
                break
            optimizer.step(denoiser.params, grads)
            losses.append(loss)
            step_idx += 1
        if aborted:
            break
        _save_checkpoint(denoiser.params, out_dir / f"step_{step_idx:06d}.npz")
        _save_checkpoint(denoiser.params, last_good)
    final = out_dir / "final.npz"
    if not aborted:
        _save_checkpoint(denoiser.params, final)
    else:
        final = last_good
    (out_dir / "loss_curve.json").write_text(json.dumps({"losses": losses}, indent=2))
    return CheckpointHandle(out_dir, final, losses, aborted)
