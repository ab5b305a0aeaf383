"""Small white-box decoder models with exact input gradients.

Three architectures cover the regimes the attribution pipeline needs:

* ``grid``: a codebook model that memorizes up to 4096 images verbatim.
  Its input space is the codebook index, it is enumerable, and it has no
  gradients. This is the exactness regime: an image belongs iff some
  codebook entry reproduces it.
* ``linear``: one dense layer from latent to pixels, optionally squashed
  through a sigmoid. With an orthonormal weight matrix and no squash the
  best latent for a target has a closed form, which makes this the
  reference point for testing the optimizer.
* ``mlp``: two tanh hidden layers and a sigmoid output. Class
  conditioning, when present, appends a one-hot vector to the latent.

Forward passes compute in float64 from float32-stored parameters, so a
checkpoint round-trip reproduces forward outputs bit for bit.
``input_gradient`` is a hand-written vector-Jacobian product: it returns
J^T u for an upstream image-shaped cotangent u, restricted to the latent
coordinates (the one-hot block is not an optimization variable).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    GradientUnavailableError,
    MissingArtifactError,
    ShapeMismatchError,
    TensorFormatError,
)
from .optim import Adam
from .tensorio import Rng, read_tensor, write_tensor
from .validation import check_image

__all__ = [
    "ARCHITECTURES",
    "GRID_MAX_ENTRIES",
    "GridModel",
    "LinearDecoder",
    "MlpDecoder",
    "ModelInput",
    "load_checkpoint",
    "sample_inputs",
    "save_checkpoint",
    "train_decoder",
]

ARCHITECTURES = ("grid", "linear", "mlp")
GRID_MAX_ENTRIES = 4096

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


@dataclass(frozen=True)
class ModelInput:
    """A point in a model's input space.

    ``latent`` is a (d_z,) float vector for decoder models, or an integer
    codebook index for grid models. ``class_index`` must be given exactly
    when the model is class-conditional.
    """

    latent: object
    class_index: int | None = None


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _BaseModel:
    model_id: str
    architecture: str
    image_shape: tuple[int, int, int]
    num_classes: int | None
    training_meta: dict

    @property
    def n_pixels(self) -> int:
        c, h, w = self.image_shape
        return c * h * w

    @property
    def conditional(self) -> bool:
        return self.num_classes is not None

    def _check_class(self, class_index):
        if self.conditional:
            if class_index is None:
                raise ValueError(
                    f"model {self.model_id} is class-conditional; class_index required"
                )
            if not 0 <= int(class_index) < self.num_classes:
                raise ValueError(
                    f"class_index {class_index} out of range [0, {self.num_classes})"
                )
        elif class_index is not None:
            raise ValueError(f"model {self.model_id} is unconditional")


class GridModel(_BaseModel):
    """Codebook model: the input space is {0, ..., K-1}."""

    architecture = "grid"
    d_z = None
    num_classes = None

    def __init__(self, codebook, model_id: str = "grid", training_meta=None):
        cb = np.asarray(codebook, dtype=np.float32)
        if cb.ndim != 4:
            raise ShapeMismatchError(
                f"codebook must have shape (K, channels, height, width), got {cb.shape}"
            )
        if cb.shape[0] < 1 or cb.shape[0] > GRID_MAX_ENTRIES:
            raise ValueError(
                f"codebook size {cb.shape[0]} outside [1, {GRID_MAX_ENTRIES}]"
            )
        self.codebook = cb
        self.image_shape = tuple(cb.shape[1:])
        self.model_id = model_id
        self.training_meta = dict(training_meta or {})
        self._flat = None

    @property
    def size(self) -> int:
        return self.codebook.shape[0]

    @property
    def codebook_flat(self) -> np.ndarray:
        if self._flat is None:
            self._flat = self.codebook.reshape(self.size, -1).astype(np.float64)
        return self._flat

    def forward(self, inp: ModelInput) -> np.ndarray:
        idx = int(inp.latent)
        self._check_class(inp.class_index)
        if not 0 <= idx < self.size:
            raise ValueError(f"codebook index {idx} out of range [0, {self.size})")
        return self.codebook[idx].astype(np.float64)

    def input_gradient(self, inp: ModelInput, upstream) -> np.ndarray:
        raise GradientUnavailableError(
            "grid models have a discrete input space; use exhaustive_invert"
        )

    def _param_items(self):
        return [("codebook", self.codebook)]


class _GradientModel(_BaseModel):
    """Shared machinery for differentiable decoders."""

    d_z: int

    @property
    def d_in(self) -> int:
        return self.d_z + (self.num_classes or 0)

    def make_input_rows(self, Z: np.ndarray, class_indices) -> np.ndarray:
        """Concatenate latents with one-hot class blocks (no-op if unconditional)."""
        Z = np.asarray(Z, dtype=np.float64)
        if not self.conditional:
            return Z
        U = np.zeros((Z.shape[0], self.d_in))
        U[:, : self.d_z] = Z
        cls = np.broadcast_to(np.asarray(class_indices, dtype=int), (Z.shape[0],))
        U[np.arange(Z.shape[0]), self.d_z + cls] = 1.0
        return U

    def _check_latent(self, latent) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        if z.shape != (self.d_z,):
            raise ShapeMismatchError(
                f"latent has shape {z.shape}, expected ({self.d_z},)"
            )
        return z

    def forward(self, inp: ModelInput) -> np.ndarray:
        z = self._check_latent(inp.latent)
        self._check_class(inp.class_index)
        U = self.make_input_rows(z.reshape(1, -1), inp.class_index)
        Y, _ = self._forward_batch(U)
        return Y[0].reshape(self.image_shape)

    def input_gradient(self, inp: ModelInput, upstream) -> np.ndarray:
        z = self._check_latent(inp.latent)
        self._check_class(inp.class_index)
        u = check_image(upstream, self.image_shape, "upstream")
        U = self.make_input_rows(z.reshape(1, -1), inp.class_index)
        _, cache = self._forward_batch(U)
        dU = self._vjp_batch(cache, u.reshape(1, -1))
        return dU[0, : self.d_z].copy()

    def _forward_batch(self, U: np.ndarray):
        raise NotImplementedError

    def _vjp_batch(self, cache, G: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearDecoder(_GradientModel):
    """Single dense layer from latent (+ one-hot class) to pixels."""

    architecture = "linear"

    def __init__(
        self,
        weight,
        bias,
        image_shape,
        *,
        squash: bool = True,
        num_classes: int | None = None,
        model_id: str = "linear",
        training_meta=None,
    ):
        self.weight = np.asarray(weight, dtype=np.float32)
        self.bias = np.asarray(bias, dtype=np.float32)
        self.image_shape = tuple(image_shape)
        self.num_classes = num_classes
        self.squash = bool(squash)
        self.model_id = model_id
        self.training_meta = dict(training_meta or {})
        n_out, d_in = self.weight.shape
        if n_out != self.n_pixels or self.bias.shape != (n_out,):
            raise ShapeMismatchError(
                f"weight {self.weight.shape} / bias {self.bias.shape} inconsistent "
                f"with image shape {self.image_shape}"
            )
        self.d_z = d_in - (num_classes or 0)
        if self.d_z < 1:
            raise ValueError("weight matrix narrower than the one-hot class block")

    def _forward_batch(self, U):
        W = self.weight.astype(np.float64)
        b = self.bias.astype(np.float64)
        pre = U @ W.T + b
        if self.squash:
            Y = _sigmoid(pre)
            return Y, (Y,)
        return pre, (None,)

    def _vjp_batch(self, cache, G):
        (Y,) = cache
        W = self.weight.astype(np.float64)
        if self.squash:
            G = G * Y * (1.0 - Y)
        return G @ W

    def _param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]


class MlpDecoder(_GradientModel):
    """Two tanh hidden layers, sigmoid output."""

    architecture = "mlp"

    def __init__(
        self,
        params: dict,
        image_shape,
        *,
        num_classes: int | None = None,
        model_id: str = "mlp",
        training_meta=None,
    ):
        self.image_shape = tuple(image_shape)
        self.num_classes = num_classes
        self.model_id = model_id
        self.training_meta = dict(training_meta or {})
        self.w1 = np.asarray(params["w1"], dtype=np.float32)
        self.b1 = np.asarray(params["b1"], dtype=np.float32)
        self.w2 = np.asarray(params["w2"], dtype=np.float32)
        self.b2 = np.asarray(params["b2"], dtype=np.float32)
        self.w3 = np.asarray(params["w3"], dtype=np.float32)
        self.b3 = np.asarray(params["b3"], dtype=np.float32)
        if self.w3.shape[0] != self.n_pixels:
            raise ShapeMismatchError(
                f"output layer {self.w3.shape} inconsistent with image shape "
                f"{self.image_shape}"
            )
        if self.w2.shape[1] != self.w1.shape[0] or self.w3.shape[1] != self.w2.shape[0]:
            raise ShapeMismatchError("hidden layer shapes do not chain")
        self.d_z = self.w1.shape[1] - (num_classes or 0)
        if self.d_z < 1:
            raise ValueError("input layer narrower than the one-hot class block")

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return (self.w1.shape[0], self.w2.shape[0])

    def _weights64(self):
        return (
            self.w1.astype(np.float64),
            self.b1.astype(np.float64),
            self.w2.astype(np.float64),
            self.b2.astype(np.float64),
            self.w3.astype(np.float64),
            self.b3.astype(np.float64),
        )

    def _forward_batch(self, U):
        w1, b1, w2, b2, w3, b3 = self._weights64()
        h1 = np.tanh(U @ w1.T + b1)
        h2 = np.tanh(h1 @ w2.T + b2)
        Y = _sigmoid(h2 @ w3.T + b3)
        return Y, (h1, h2, Y)

    def _vjp_batch(self, cache, G):
        h1, h2, Y = cache
        w1, _, w2, _, w3, _ = self._weights64()
        g3 = G * Y * (1.0 - Y)
        g2 = (g3 @ w3) * (1.0 - h2**2)
        g1 = (g2 @ w2) * (1.0 - h1**2)
        return g1 @ w1

    def _param_items(self):
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("w3", self.w3),
            ("b3", self.b3),
        ]


# ---------------------------------------------------------------------------
# sampling and training


def sample_inputs(model, n: int, rng: Rng) -> list[ModelInput]:
    """Draw n inputs from the model's input prior.

    Grid models sample codebook indices uniformly; decoder models sample
    standard-normal latents, plus a uniform class for conditional models.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(model, GridModel):
        idx = rng.integers(0, model.size, n)
        return [ModelInput(int(i)) for i in idx]
    Z = rng.normal((n, model.d_z))
    if model.conditional:
        cls = rng.integers(0, model.num_classes, n)
        return [ModelInput(Z[i].copy(), int(cls[i])) for i in range(n)]
    return [ModelInput(Z[i].copy()) for i in range(n)]


def _init_uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def _mlp_stack(rng: Rng, sizes: list[int]):
    """Weights and biases for a dense stack given layer widths."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(_init_uniform(rng, (fan_out, fan_in), fan_in))
        params.append(_init_uniform(rng, (fan_out,), fan_in))
    return params


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def train_decoder(
    architecture: str,
    images,
    labels=None,
    *,
    d_z: int = 8,
    hidden_sizes=(32, 64),
    num_classes: int | None = None,
    squash: bool = True,
    epochs: int = 200,
    learning_rate: float = 5e-3,
    batch_size: int = 32,
    rng: Rng,
    dataset_id: str = "unnamed",
    model_id: str | None = None,
):
    """Fit a decoder to a dataset as an autoencoder and return it.

    The encoder half exists only during training; the returned model is
    the decoder with float32 parameters. ``images`` is an (N, C, H, W)
    array; ``labels`` is an (N,) int array required iff ``num_classes``
    is given. Training minimizes mean squared reconstruction error with
    Adam over shuffled minibatches; the recorded training_meta includes
    the mean reconstruction error at initialization and after the final
    epoch (the latter should be lower for any sane configuration).
    """
    if architecture not in ARCHITECTURES:
        raise ValueError(
            f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}"
        )
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeMismatchError(
            f"images must have shape (N, channels, height, width), got {images.shape}"
        )
    n_total = images.shape[0]
    image_shape = tuple(images.shape[1:])
    if model_id is None:
        model_id = f"{architecture}-{dataset_id}-s{rng.seed}"

    if architecture == "grid":
        meta = {"dataset_id": dataset_id, "seed": rng.seed, "epochs": 0}
        return GridModel(images, model_id=model_id, training_meta=meta)

    if (num_classes is None) != (labels is None):
        raise ValueError("labels and num_classes must be given together")
    X = images.reshape(n_total, -1)
    n_pixels = X.shape[1]
    d_in = d_z + (num_classes or 0)
    onehot = _onehot(np.asarray(labels, dtype=int), num_classes) if labels is not None else None

    if architecture == "linear":
        enc = _mlp_stack(rng, [n_pixels, d_z])
        dec = _mlp_stack(rng, [d_in, n_pixels])

        def decode(params, Z):
            dw, db = params[2], params[3]
            U = np.concatenate([Z, onehot[batch]], axis=1) if onehot is not None else Z
            pre = U @ dw.T + db
            return (_sigmoid(pre) if squash else pre), (U, pre)

        def backward(params, Z, caches, G):
            ew, _ = params[0], params[1]
            dw, db = params[2], params[3]
            U, pre = caches
            if squash:
                Y = _sigmoid(pre)
                G = G * Y * (1.0 - Y)
            g_dw = G.T @ U
            g_db = G.sum(axis=0)
            gU = G @ dw
            gZ = gU[:, :d_z]
            Xb = X[batch]
            g_ew = gZ.T @ Xb
            g_eb = gZ.sum(axis=0)
            return [g_ew, g_eb, g_dw, g_db]

        def encode(params, Xb):
            ew, eb = params[0], params[1]
            return Xb @ ew.T + eb

        params = enc + dec
    else:
        h1, h2 = hidden_sizes
        enc = _mlp_stack(rng, [n_pixels, h2, h1, d_z])
        dec = _mlp_stack(rng, [d_in, h1, h2, n_pixels])

        def encode(params, Xb):
            e1w, e1b, e2w, e2b, e3w, e3b = params[:6]
            a = np.tanh(Xb @ e1w.T + e1b)
            b = np.tanh(a @ e2w.T + e2b)
            return b @ e3w.T + e3b

        def decode(params, Z):
            d1w, d1b, d2w, d2b, d3w, d3b = params[6:]
            U = np.concatenate([Z, onehot[batch]], axis=1) if onehot is not None else Z
            t1 = np.tanh(U @ d1w.T + d1b)
            t2 = np.tanh(t1 @ d2w.T + d2b)
            Y = _sigmoid(t2 @ d3w.T + d3b)
            return Y, (U, t1, t2, Y)

        def backward(params, Z, caches, G):
            e1w, e1b, e2w, e2b, e3w, e3b = params[:6]
            d1w, d1b, d2w, d2b, d3w, d3b = params[6:]
            U, t1, t2, Y = caches
            Xb = X[batch]
            g3 = G * Y * (1.0 - Y)
            g_d3w = g3.T @ t2
            g_d3b = g3.sum(axis=0)
            gt2 = (g3 @ d3w) * (1.0 - t2**2)
            g_d2w = gt2.T @ t1
            g_d2b = gt2.sum(axis=0)
            gt1 = (gt2 @ d2w) * (1.0 - t1**2)
            g_d1w = gt1.T @ U
            g_d1b = gt1.sum(axis=0)
            gZ = (gt1 @ d1w)[:, :d_z]
            # encoder backward: Z = e3(tanh(e2(tanh(e1 x))))
            a = np.tanh(Xb @ e1w.T + e1b)
            b = np.tanh(a @ e2w.T + e2b)
            g_e3w = gZ.T @ b
            g_e3b = gZ.sum(axis=0)
            gb = (gZ @ e3w) * (1.0 - b**2)
            g_e2w = gb.T @ a
            g_e2b = gb.sum(axis=0)
            ga = (gb @ e2w) * (1.0 - a**2)
            g_e1w = ga.T @ Xb
            g_e1b = ga.sum(axis=0)
            return [g_e1w, g_e1b, g_e2w, g_e2b, g_e3w, g_e3b,
                    g_d1w, g_d1b, g_d2w, g_d2b, g_d3w, g_d3b]

        params = enc + dec

    def full_loss():
        nonlocal batch
        batch = np.arange(n_total)
        Z = encode(params, X)
        Y, _ = decode(params, Z)
        return float(np.square(Y - X).mean())

    batch = np.arange(n_total)
    initial_loss = full_loss()

    opt = Adam(params, learning_rate)
    for _ in range(int(epochs)):
        order = rng.permutation(n_total)
        for start in range(0, n_total, batch_size):
            batch = order[start : start + batch_size]
            Xb = X[batch]
            Z = encode(params, Xb)
            Y, caches = decode(params, Z)
            G = 2.0 * (Y - Xb) / Y.size
            grads = backward(params, Z, caches, G)
            opt.step(grads)

    final_loss = full_loss()
    meta = {
        "dataset_id": dataset_id,
        "seed": rng.seed,
        "epochs": int(epochs),
        "learning_rate": float(learning_rate),
        "batch_size": int(batch_size),
        "initial_loss": initial_loss,
        "final_loss": final_loss,
    }

    if architecture == "linear":
        dw, db = params[2], params[3]
        return LinearDecoder(
            dw, db, image_shape,
            squash=squash, num_classes=num_classes,
            model_id=model_id, training_meta=meta,
        )
    d1w, d1b, d2w, d2b, d3w, d3b = params[6:]
    return MlpDecoder(
        {"w1": d1w, "b1": d1b, "w2": d2w, "b2": d2b, "w3": d3w, "b3": d3b},
        image_shape,
        num_classes=num_classes,
        model_id=model_id,
        training_meta=meta,
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, directory) -> Path:
    """Write manifest.json plus weights.bin (concatenated tensor records)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items = model._param_items()
    options = {}
    if isinstance(model, LinearDecoder):
        options["squash"] = model.squash
    if isinstance(model, MlpDecoder):
        options["hidden_sizes"] = list(model.hidden_sizes)
    manifest = {
        "model_id": model.model_id,
        "architecture": model.architecture,
        "d_z": model.d_z,
        "image_shape": list(model.image_shape),
        "num_classes": model.num_classes,
        "options": options,
        "parameters": [{"name": k, "shape": list(v.shape)} for k, v in items],
        "training_meta": model.training_meta,
    }
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / WEIGHTS_NAME, "wb") as fh:
        for _, value in items:
            write_tensor(fh, value)
    return directory


def load_checkpoint(directory):
    """Load a model saved by save_checkpoint.

    Raises MissingArtifactError if the directory or either file is
    absent, TensorFormatError if the weights disagree with the manifest.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    weights_path = directory / WEIGHTS_NAME
    for p in (manifest_path, weights_path):
        if not p.is_file():
            raise MissingArtifactError(f"checkpoint file not found: {p}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    params = {}
    with open(weights_path, "rb") as fh:
        for entry in manifest["parameters"]:
            arr = read_tensor(fh)
            if list(arr.shape) != list(entry["shape"]):
                raise TensorFormatError(
                    f"parameter {entry['name']}: stored shape {arr.shape} != "
                    f"manifest shape {tuple(entry['shape'])}"
                )
            params[entry["name"]] = arr
        if fh.read(1):
            raise TensorFormatError("trailing bytes after last parameter record")

    arch = manifest["architecture"]
    image_shape = tuple(manifest["image_shape"])
    num_classes = manifest["num_classes"]
    meta = manifest.get("training_meta", {})
    model_id = manifest["model_id"]
    if arch == "grid":
        return GridModel(params["codebook"], model_id=model_id, training_meta=meta)
    if arch == "linear":
        return LinearDecoder(
            params["weight"], params["bias"], image_shape,
            squash=manifest["options"].get("squash", True),
            num_classes=num_classes, model_id=model_id, training_meta=meta,
        )
    if arch == "mlp":
        return MlpDecoder(
            params, image_shape,
            num_classes=num_classes, model_id=model_id, training_meta=meta,
        )
    raise TensorFormatError(f"unknown architecture {arch!r} in manifest")
