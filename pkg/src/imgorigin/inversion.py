"""Reverse-engineering model inputs for a target image.

Gradient models are inverted by multi-restart Adam on the latent, using
the metric's analytic gradient chained through the model's VJP. Each
restart draws its initial latent from an RNG stream derived from
(seed, restart index), so results do not depend on execution order; for
class-conditional models the search enumerates every class and the
restart grid becomes classes x restarts (class-major row order). All
restarts advance in lockstep as rows of one batch, which is just a
faster schedule for the same per-row arithmetic.

A restart whose loss turns non-finite is abandoned (dropped from the
candidate list, counted in ``abandoned_restarts``); a restart whose best
loss falls below ``early_stop_loss`` stops stepping. Codebook models
have no gradients and are inverted exhaustively instead.

The returned result ties together: ``best_loss`` equals the distance
between the target and the forward pass of ``best_input``, and equals
the minimum over ``per_restart_losses``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import GradientUnavailableError, InversionError
from .metrics import METRICS, _distance_batch, _distance_grad_batch, distance
from .models import GridModel, ModelInput
from .optim import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from .tensorio import Rng
from .validation import check_image

__all__ = [
    "InversionConfig",
    "InversionResult",
    "config_hash",
    "exhaustive_invert",
    "reverse_engineer",
]


@dataclass(frozen=True)
class InversionConfig:
    restarts: int = 8
    steps_per_restart: int = 400
    learning_rate: float = 0.05
    early_stop_loss: float = 1e-7
    seed: int = 0

    def with_seed(self, seed: int) -> "InversionConfig":
        return replace(self, seed=int(seed))


def config_hash(config: InversionConfig) -> str:
    """Digest of the search budget (seed excluded: it varies per probe)."""
    payload = json.dumps(
        {
            "restarts": config.restarts,
            "steps_per_restart": config.steps_per_restart,
            "learning_rate": config.learning_rate,
            "early_stop_loss": config.early_stop_loss,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class InversionResult:
    model_id: str
    metric: str
    best_input: ModelInput
    best_loss: float
    per_restart_losses: list = field(default_factory=list)
    steps_used: int = 0
    abandoned_restarts: int = 0
    wall_time_ms: float = 0.0

    def to_json_dict(self) -> dict:
        latent = self.best_input.latent
        if isinstance(latent, np.ndarray):
            latent = [float(v) for v in latent]
        else:
            latent = int(latent)
        return {
            "model_id": self.model_id,
            "metric": self.metric,
            "best_input": {"latent": latent, "class_index": self.best_input.class_index},
            "best_loss": self.best_loss,
            "per_restart_losses": list(self.per_restart_losses),
            "steps_used": self.steps_used,
            "abandoned_restarts": self.abandoned_restarts,
            "wall_time_ms": self.wall_time_ms,
        }


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    return metric


def exhaustive_invert(model: GridModel, x, metric: str = "mse") -> InversionResult:
    """Scan every codebook entry and return the closest one.

    ``per_restart_losses`` holds the loss of every candidate, in
    codebook order.
    """
    if not isinstance(model, GridModel):
        raise ValueError("exhaustive_invert requires a codebook (grid) model")
    _check_metric(metric)
    x = check_image(x, model.image_shape, "target")
    start = time.perf_counter()
    losses = _distance_batch(metric, model.codebook_flat, x.ravel())
    idx = int(np.argmin(losses))
    return InversionResult(
        model_id=model.model_id,
        metric=metric,
        best_input=ModelInput(idx),
        best_loss=float(losses[idx]),
        per_restart_losses=[float(v) for v in losses],
        steps_used=model.size,
        abandoned_restarts=0,
        wall_time_ms=(time.perf_counter() - start) * 1e3,
    )


def reverse_engineer(
    model, x, metric: str = "mse", config: InversionConfig | None = None
) -> InversionResult:
    """Find the model input whose output is closest to ``x``."""
    if isinstance(model, GridModel):
        raise GradientUnavailableError(
            "grid models are inverted exhaustively; call exhaustive_invert"
        )
    _check_metric(metric)
    cfg = config or InversionConfig()
    if cfg.restarts < 1 or cfg.steps_per_restart < 1:
        raise ValueError("restarts and steps_per_restart must be >= 1")
    x = check_image(x, model.image_shape, "target")
    x_flat = x.ravel()
    start = time.perf_counter()

    d_z = model.d_z
    restarts = cfg.restarts
    class_list = list(range(model.num_classes)) if model.conditional else [None]
    n_rows = len(class_list) * restarts
    root = Rng(cfg.seed)
    Z = np.stack([root.child(row).normal(d_z) for row in range(n_rows)])
    row_classes = (
        np.repeat(np.arange(len(class_list)), restarts) if model.conditional else None
    )

    m = np.zeros_like(Z)
    v = np.zeros_like(Z)
    t = np.zeros(n_rows)
    best_loss = np.full(n_rows, np.inf)
    best_Z = Z.copy()
    alive = np.ones(n_rows, dtype=bool)
    abandoned = np.zeros(n_rows, dtype=bool)
    steps_used = 0

    with np.errstate(all="ignore"):
        for step in range(cfg.steps_per_restart + 1):
            U = model.make_input_rows(Z, row_classes)
            Y, cache = model._forward_batch(U)
            losses = _distance_batch(metric, Y, x_flat)
            bad = ~np.isfinite(losses) & ~abandoned
            abandoned |= bad
            alive &= ~bad
            ok = ~abandoned
            improved = ok & (losses < best_loss)
            best_loss[improved] = losses[improved]
            best_Z[improved] = Z[improved]
            alive &= ~(ok & (best_loss < cfg.early_stop_loss))
            if step == cfg.steps_per_restart or not alive.any():
                break
            G = _distance_grad_batch(metric, Y, x_flat)
            dU = model._vjp_batch(cache, G)
            g = dU[:, :d_z]
            rows = alive
            t[rows] += 1
            m[rows] = ADAM_BETA1 * m[rows] + (1.0 - ADAM_BETA1) * g[rows]
            v[rows] = ADAM_BETA2 * v[rows] + (1.0 - ADAM_BETA2) * np.square(g[rows])
            tr = t[rows][:, None]
            mh = m[rows] / (1.0 - ADAM_BETA1**tr)
            vh = v[rows] / (1.0 - ADAM_BETA2**tr)
            Z[rows] -= cfg.learning_rate * mh / (np.sqrt(vh) + ADAM_EPS)
            steps_used += int(rows.sum())

    survivors = np.flatnonzero(~abandoned)
    if survivors.size == 0:
        raise InversionError(
            f"all {n_rows} restarts diverged while inverting against {model.model_id}"
        )
    # Re-evaluate each survivor through the public single-image path so every
    # reported loss is exactly distance(metric, forward(input), target); the
    # in-loop batched numbers can differ from that in the last few ulps.
    candidates = []
    final_losses = []
    for row in survivors:
        cls = class_list[row // restarts] if model.conditional else None
        inp = ModelInput(best_Z[row].copy(), cls)
        candidates.append(inp)
        final_losses.append(distance(metric, model.forward(inp), x))
    best_pos = int(np.argmin(final_losses))
    return InversionResult(
        model_id=model.model_id,
        metric=metric,
        best_input=candidates[best_pos],
        best_loss=final_losses[best_pos],
        per_restart_losses=final_losses,
        steps_used=steps_used,
        abandoned_restarts=int(abandoned.sum()),
        wall_time_ms=(time.perf_counter() - start) * 1e3,
    )
