"""Deciding whether an image belongs to a model's output space.

The pipeline has three stages:

1. Reverse-engineer the examined image against the target model and
   against an independent reference model of similar capability; each
   yields a reconstruction loss. Codebook models are inverted
   exhaustively, differentiable decoders by gradient search.
2. Calibrate: divide the target loss by the reference loss (floored at
   1e-9). This cancels the part of the loss explained by the image
   being intrinsically hard to reconstruct, rather than foreign to the
   target model.
3. Test: compare the calibrated loss against the distribution of
   calibrated losses over n images the target model itself generated,
   with a one-sided outlier test. The examined image is never pooled
   into that distribution.

Stage 3's distribution is expensive (2n inversions), so it is estimated
once per (model, reference, metric, search budget) and cached on disk as
JSON under ``<cache_dir>/distributions/<model_id>/<reference_id>/``.
``attribute`` refuses a distribution whose identifiers, metric, or
budget hash disagree with what it was handed, so a stale cache fails
loudly instead of skewing verdicts.

``OriginAttributor`` wraps the pipeline in the usual estimator API:
``fit`` estimates (or loads) the belonging distribution, ``predict``
maps a stack of images to 1 (belonging) / 0 (non-belonging), and
``decision_function`` returns the signed margin ``threshold - z``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigMismatchError, MissingArtifactError
from .inversion import InversionConfig, config_hash, exhaustive_invert, reverse_engineer
from .metrics import METRICS
from .models import GridModel, sample_inputs
from .stats import BelongingDistribution, grubbs_decide
from .tensorio import Rng, derive_seed
from .validation import check_image

__all__ = [
    "EPS_REFERENCE",
    "AttributionVerdict",
    "OriginAttributor",
    "attribute",
    "calibrate",
    "distribution_path",
    "ensure_distribution",
    "estimate_belonging_distribution",
    "load_distribution",
    "save_distribution",
    "verdict_from_losses",
]

EPS_REFERENCE = 1e-9
UNCALIBRATED_ID = "none"

# Stream namespaces under one base seed, so probe draws and the per-probe
# inversion seeds never collide.
_NS_PROBE_INPUTS = 0
_NS_TARGET_INVERSION = 1
_NS_REFERENCE_INVERSION = 2


def calibrate(raw_loss: float, reference_loss: float) -> float:
    """Reference-normalized loss: raw / max(reference, 1e-9)."""
    if not math.isfinite(raw_loss) or raw_loss < 0:
        raise ValueError(f"raw loss must be finite and >= 0, got {raw_loss}")
    if not math.isfinite(reference_loss) or reference_loss < 0:
        raise ValueError(
            f"reference loss must be finite and >= 0, got {reference_loss}"
        )
    return raw_loss / max(reference_loss, EPS_REFERENCE)


def invert_for(model, x, metric: str, config: InversionConfig):
    """Dispatch to the right inverter for the model family."""
    if isinstance(model, GridModel):
        return exhaustive_invert(model, x, metric)
    return reverse_engineer(model, x, metric, config)


# ---------------------------------------------------------------------------
# belonging distribution


def estimate_belonging_distribution(
    model,
    reference,
    metric: str = "mse",
    config: InversionConfig | None = None,
    *,
    n: int = 100,
    alpha: float = 0.05,
    workers: int = 1,
) -> BelongingDistribution:
    """Moments of calibrated losses over n fresh outputs of ``model``.

    ``reference`` may be None, in which case losses are left raw
    (reference loss fixed at 1), which is the uncalibrated ablation.
    Every probe derives its own inversion seeds from (config.seed,
    probe index), so the result does not depend on ``workers``.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    cfg = config or InversionConfig()
    if n < 3:
        raise ValueError("need n >= 3 generated belongings")
    inputs = sample_inputs(model, n, Rng(cfg.seed).child(_NS_PROBE_INPUTS))

    def probe_loss(i: int) -> float:
        img = model.forward(inputs[i])
        raw = invert_for(
            model, img, metric, cfg.with_seed(derive_seed(cfg.seed, _NS_TARGET_INVERSION, i))
        ).best_loss
        if reference is None:
            return calibrate(raw, 1.0)
        ref = invert_for(
            reference, img, metric,
            cfg.with_seed(derive_seed(cfg.seed, _NS_REFERENCE_INVERSION, i)),
        ).best_loss
        return calibrate(raw, ref)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(probe_loss, range(n)))
    else:
        losses = [probe_loss(i) for i in range(n)]

    arr = np.asarray(losses)
    return BelongingDistribution(
        model_id=model.model_id,
        reference_id=reference.model_id if reference is not None else UNCALIBRATED_ID,
        metric=metric,
        n=n,
        mu=float(arr.mean()),
        sigma=float(arr.std(ddof=1)),
        alpha=alpha,
        inversion_config_hash=config_hash(cfg),
    )


def distribution_path(cache_dir, model_id: str, reference_id: str, metric: str, cfg_hash: str) -> Path:
    return (
        Path(cache_dir)
        / "distributions"
        / model_id
        / reference_id
        / f"{metric}-{cfg_hash}.json"
    )


def save_distribution(dist: BelongingDistribution, cache_dir, *, estimation_seed: int | None = None) -> Path:
    """Atomically write the distribution JSON into the cache layout."""
    path = distribution_path(
        cache_dir, dist.model_id, dist.reference_id, dist.metric,
        dist.inversion_config_hash,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dist.to_json_dict()
    if estimation_seed is not None:
        payload["estimation_seed"] = int(estimation_seed)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_distribution(cache_dir, model_id: str, reference_id: str, metric: str, cfg_hash: str) -> BelongingDistribution:
    path = distribution_path(cache_dir, model_id, reference_id, metric, cfg_hash)
    if not path.is_file():
        raise MissingArtifactError(f"no cached belonging distribution at {path}")
    with open(path) as fh:
        payload = json.load(fh)
    return BelongingDistribution(
        model_id=payload["model_id"],
        reference_id=payload["reference_id"],
        metric=payload["metric"],
        n=payload["n"],
        mu=payload["mu"],
        sigma=payload["sigma"],
        alpha=payload["alpha"],
        inversion_config_hash=payload["inversion_config_hash"],
    )


def ensure_distribution(
    model,
    reference,
    metric: str,
    config: InversionConfig,
    *,
    n: int = 100,
    alpha: float = 0.05,
    workers: int = 1,
    cache_dir=None,
    force: bool = False,
) -> BelongingDistribution:
    """Load the cached distribution if present, else estimate and cache it.

    A cached file wins only when its n and alpha also match the request;
    otherwise it is re-estimated and overwritten (last writer wins).
    """
    ref_id = reference.model_id if reference is not None else UNCALIBRATED_ID
    cfg_hash = config_hash(config)
    if cache_dir is not None and not force:
        try:
            dist = load_distribution(cache_dir, model.model_id, ref_id, metric, cfg_hash)
        except MissingArtifactError:
            dist = None
        if dist is not None and dist.n == n and dist.alpha == alpha:
            return dist
    dist = estimate_belonging_distribution(
        model, reference, metric, config, n=n, alpha=alpha, workers=workers
    )
    if cache_dir is not None:
        save_distribution(dist, cache_dir, estimation_seed=config.seed)
    return dist


# ---------------------------------------------------------------------------
# the decision operation


@dataclass(frozen=True)
class AttributionVerdict:
    examined_id: str
    model_id: str
    reference_id: str
    metric: str
    raw_loss: float
    reference_loss: float | None
    calibrated_loss: float
    z_score: float | None
    threshold: float | None
    decision: str  # "belonging" | "non-belonging"
    config: dict

    @property
    def is_belonging(self) -> bool:
        return self.decision == "belonging"

    def to_json_dict(self) -> dict:
        return {
            "examined_id": self.examined_id,
            "model_id": self.model_id,
            "reference_id": self.reference_id,
            "metric": self.metric,
            "raw_loss": self.raw_loss,
            "reference_loss": self.reference_loss,
            "calibrated_loss": self.calibrated_loss,
            "z_score": self.z_score,
            "threshold": self.threshold,
            "decision": self.decision,
            "config": self.config,
        }


def _config_snapshot(cfg: InversionConfig, dist: BelongingDistribution) -> dict:
    return {
        "rule": "grubbs",
        "restarts": cfg.restarts,
        "steps_per_restart": cfg.steps_per_restart,
        "learning_rate": cfg.learning_rate,
        "early_stop_loss": cfg.early_stop_loss,
        "alpha": dist.alpha,
        "n": dist.n,
    }


def verdict_from_losses(
    raw_loss: float,
    reference_loss: float | None,
    dist: BelongingDistribution,
    cfg: InversionConfig,
    *,
    examined_id: str = "",
) -> AttributionVerdict:
    """Assemble a verdict from already-computed inversion losses."""
    calibrated = calibrate(raw_loss, 1.0 if reference_loss is None else reference_loss)
    decision = grubbs_decide(calibrated, dist)
    return AttributionVerdict(
        examined_id=examined_id,
        model_id=dist.model_id,
        reference_id=dist.reference_id,
        metric=dist.metric,
        raw_loss=raw_loss,
        reference_loss=reference_loss,
        calibrated_loss=calibrated,
        z_score=decision.z_score,
        threshold=decision.threshold,
        decision=decision.label,
        config=_config_snapshot(cfg, dist),
    )


def attribute(
    model,
    x,
    reference,
    dist: BelongingDistribution,
    metric: str = "mse",
    config: InversionConfig | None = None,
    *,
    examined_id: str = "",
) -> AttributionVerdict:
    """Decide whether image ``x`` is an output of ``model``.

    The distribution must have been estimated for this exact model,
    reference, metric and search budget; anything stale raises
    ConfigMismatchError rather than producing a silently wrong verdict.
    """
    cfg = config or InversionConfig()
    ref_id = reference.model_id if reference is not None else UNCALIBRATED_ID
    expected = {
        "model_id": (dist.model_id, model.model_id),
        "reference_id": (dist.reference_id, ref_id),
        "metric": (dist.metric, metric),
        "inversion_config_hash": (dist.inversion_config_hash, config_hash(cfg)),
    }
    for field_name, (got, want) in expected.items():
        if got != want:
            raise ConfigMismatchError(
                f"belonging distribution was estimated with {field_name}={got!r}, "
                f"but this attribution uses {want!r}; re-estimate the distribution"
            )
    x = check_image(x, model.image_shape, "examined image")

    raw = invert_for(model, x, metric, cfg).best_loss
    if reference is None:
        ref_loss = None
    else:
        ref_loss = invert_for(
            reference, x, metric,
            cfg.with_seed(derive_seed(cfg.seed, _NS_REFERENCE_INVERSION)),
        ).best_loss
    return verdict_from_losses(raw, ref_loss, dist, cfg, examined_id=examined_id)


# ---------------------------------------------------------------------------
# estimator wrapper


class OriginAttributor(BaseEstimator):
    """Estimator-style front end for origin attribution.

    Parameters mirror the pipeline knobs. ``fit`` needs no data: the
    belonging distribution is estimated from the target model's own
    generations (X and y are accepted and ignored, for pipeline
    compatibility). ``predict`` returns 1 where an image is judged to
    belong to the target model and 0 otherwise.
    """

    def __init__(
        self,
        model=None,
        reference_model=None,
        metric: str = "mse",
        n_samples: int = 100,
        alpha: float = 0.05,
        restarts: int = 8,
        steps_per_restart: int = 400,
        learning_rate: float = 0.05,
        early_stop_loss: float = 1e-7,
        seed: int = 0,
        cache_dir=None,
        workers: int = 1,
    ):
        self.model = model
        self.reference_model = reference_model
        self.metric = metric
        self.n_samples = n_samples
        self.alpha = alpha
        self.restarts = restarts
        self.steps_per_restart = steps_per_restart
        self.learning_rate = learning_rate
        self.early_stop_loss = early_stop_loss
        self.seed = seed
        self.cache_dir = cache_dir
        self.workers = workers

    def _inversion_config(self) -> InversionConfig:
        return InversionConfig(
            restarts=self.restarts,
            steps_per_restart=self.steps_per_restart,
            learning_rate=self.learning_rate,
            early_stop_loss=self.early_stop_loss,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("OriginAttributor requires a target model")
        cfg = self._inversion_config()
        self.distribution_ = ensure_distribution(
            self.model,
            self.reference_model,
            self.metric,
            cfg,
            n=self.n_samples,
            alpha=self.alpha,
            workers=self.workers,
            cache_dir=self.cache_dir,
        )
        self.mu_ = self.distribution_.mu
        self.sigma_ = self.distribution_.sigma
        self.threshold_ = self.distribution_.threshold
        return self

    def _check_fitted(self):
        if not hasattr(self, "distribution_"):
            raise NotFittedError(
                "This OriginAttributor instance is not fitted yet; call fit first."
            )

    def _as_stack(self, X) -> np.ndarray:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise ValueError(
                f"X must be one image (C, H, W) or a stack (N, C, H, W), got {arr.shape}"
            )
        return arr

    def attribute_one(self, x, examined_id: str = "", probe_seed: int | None = None) -> AttributionVerdict:
        """Full verdict for a single image."""
        self._check_fitted()
        cfg = self._inversion_config()
        if probe_seed is not None:
            cfg = cfg.with_seed(probe_seed)
        return attribute(
            self.model, x, self.reference_model, self.distribution_,
            self.metric, cfg, examined_id=examined_id,
        )

    def decision_function(self, X) -> np.ndarray:
        """Signed margin threshold - z; positive means belonging."""
        self._check_fitted()
        stack = self._as_stack(X)
        out = np.empty(stack.shape[0])
        for i, img in enumerate(stack):
            v = self.attribute_one(
                img,
                examined_id=str(i),
                probe_seed=derive_seed(self.seed, 3, i),
            )
            out[i] = v.threshold - v.z_score
        return out

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)
