"""A tiny deterministic vision transformer with an inspectable attention row.

Single-head self-attention over flattened patches plus one constant
"summary" token; the classifier reads only the summary token's features,
and the attention vector handed to certification is the summary row of
either the last layer's attention matrix or the product of all layers'
matrices (rollout).  Weights are shared across layers and stored in 32-bit
files; arithmetic runs in float64.  There are no positional encodings, no
residual connections and no learned norms -- this model exists to give the
certification machinery something cheap, deterministic and honest to chew
on, not to win benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _backend
from .core import AttentionMode, DataError, normalize_simplex, require
from .tensorio import read_tensor, write_tensor

LAYER_NORM_EPS = 1e-12

_TENSOR_FIELDS = ("w_embed", "w_q", "w_k", "w_v", "w_l", "w_head")


@dataclass(frozen=True)
class ToyViTParams:
    """Weights and dimensions of the toy transformer.

    :param image_size: input images are (image_size, image_size).
    :param patch_size: side length of the square patches.
    :param q: embedding width (also the attention feature width).
    :param layers: number of attention layers (weights shared).
    :param classes: output classes.
    :param seed: the seed the weights were drawn from (kept for manifests).
    :param w_embed: (patch_size^2, q) patch embedding.
    :param w_q,w_k,w_v: (q, q) attention projections.
    :param w_l: (q, q) post-attention mixing matrix.
    :param w_head: (q, classes) classifier on the summary token.
    """

    image_size: int
    patch_size: int
    q: int
    layers: int
    classes: int
    seed: int
    w_embed: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_l: np.ndarray
    w_head: np.ndarray

    def __post_init__(self):
        require(self.image_size >= self.patch_size >= 1, "bad patch size")
        require(self.image_size % self.patch_size == 0,
                "patch size must divide image size")
        require(self.layers >= 1, "need at least one layer")
        require(self.classes >= 2, "need at least two classes")
        require(self.q >= 1, "embedding width must be positive")
        pp = self.patch_size * self.patch_size
        require(self.w_embed.shape == (pp, self.q), "w_embed shape mismatch")
        for name in ("w_q", "w_k", "w_v", "w_l"):
            require(getattr(self, name).shape == (self.q, self.q),
                    f"{name} shape mismatch")
        require(self.w_head.shape == (self.q, self.classes),
                "w_head shape mismatch")

    @property
    def n_patches(self) -> int:
        side = self.image_size // self.patch_size
        return side * side

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1

    def summary_embedding(self) -> np.ndarray:
        """The constant summary-token embedding: all ones scaled by 1/sqrt(q)."""
        return np.full(self.q, 1.0 / math.sqrt(self.q))

    def weights64(self) -> dict:
        """Float64 copies of all weights plus the summary embedding."""
        out = {name: np.asarray(getattr(self, name), dtype=np.float64)
               for name in _TENSOR_FIELDS}
        out["summary"] = self.summary_embedding()
        return out


def init_params(image_size: int, patch_size: int, q: int, layers: int,
                classes: int, seed: int) -> ToyViTParams:
    """Draw fresh weights from a seeded generator.

    Draw order (fixed, part of the format): w_embed, w_q, w_k, w_v, w_l,
    w_head, each standard normal scaled by 1/sqrt(q) and stored as float32.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(q)
    pp = patch_size * patch_size

    def draw(shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    return ToyViTParams(
        image_size=image_size, patch_size=patch_size, q=q, layers=layers,
        classes=classes, seed=seed,
        w_embed=draw((pp, q)),
        w_q=draw((q, q)),
        w_k=draw((q, q)),
        w_v=draw((q, q)),
        w_l=draw((q, q)),
        w_head=draw((q, classes)),
    )


def save_model(directory, params: ToyViTParams) -> None:
    """Write the manifest and one tensor file per weight into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"image_size = {params.image_size}",
             f"patch_size = {params.patch_size}",
             f"q = {params.q}",
             f"layers = {params.layers}",
             f"classes = {params.classes}",
             f"seed = {params.seed}"]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    for name in _TENSOR_FIELDS:
        write_tensor(d / f"{name}.fvtn", getattr(params, name))


def load_model(directory) -> ToyViTParams:
    """Load a model directory written by :func:`save_model`.

    :raises DataError: on missing manifest, malformed lines, or tensors
        whose shapes disagree with the manifest.
    """
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"{d}: missing model manifest")
    fields = {}
    for ln, raw in enumerate(manifest.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{manifest}:{ln}: expected 'key = value'")
        key, _, value = line.partition("=")
        try:
            fields[key.strip()] = int(value.strip())
        except ValueError:
            raise DataError(f"{manifest}:{ln}: non-integer value") from None
    missing = {"image_size", "patch_size", "q", "layers", "classes",
               "seed"} - fields.keys()
    if missing:
        raise DataError(f"{manifest}: missing keys {sorted(missing)}")
    tensors = {}
    for name in _TENSOR_FIELDS:
        path = d / f"{name}.fvtn"
        if not path.is_file():
            raise DataError(f"{d}: missing tensor {name}.fvtn")
        tensors[name] = read_tensor(path)
    try:
        return ToyViTParams(**fields, **tensors)
    except ValueError as exc:
        raise DataError(f"{d}: inconsistent model: {exc}") from exc


# ---------------------------------------------------------------------------
# Reference forward path, exposed step by step for inspection and testing.
# The batched kernels in _backend are the fast equivalent of composing these.
# ---------------------------------------------------------------------------

def patchify(image: np.ndarray, params: ToyViTParams) -> np.ndarray:
    """Embed an image into the (n_tokens, q) token matrix.

    Patches are taken row-major, flattened row-major, projected through
    w_embed; row 0 is the constant summary token.
    """
    img = np.asarray(image, dtype=np.float64)
    require(img.shape == (params.image_size, params.image_size),
            "image shape mismatch")
    p = params.patch_size
    side = params.image_size // p
    x = img.reshape(side, p, side, p).transpose(0, 2, 1, 3)
    x = x.reshape(params.n_patches, p * p)
    tokens = x @ np.asarray(params.w_embed, dtype=np.float64)
    return np.vstack([params.summary_embedding(), tokens])


def self_attention(X: np.ndarray, params: ToyViTParams):
    """One attention layer: returns (mixed tokens Z, attention matrix A).

    A is the row-softmax of Q^T K / sqrt(q); Z stacks the attended values
    passed through the mixing matrix.  No normalization here -- see
    :func:`token_norm`.
    """
    w = params.weights64()
    Qm = X @ w["w_q"].T
    Km = X @ w["w_k"].T
    Vm = X @ w["w_v"].T
    logits = (Qm @ Km.T) / math.sqrt(params.q)
    logits -= logits.max(axis=1, keepdims=True)
    A = np.exp(logits)
    A /= A.sum(axis=1, keepdims=True)
    Z = (A @ Vm) @ w["w_l"]
    return Z, A


def token_norm(Z: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Per-token mean centering and unit-variance scaling."""
    mu = Z.mean(axis=1, keepdims=True)
    var = Z.var(axis=1, keepdims=True)
    return (Z - mu) / np.sqrt(var + eps)


def attention_vector(attn_matrices, mode: AttentionMode) -> np.ndarray:
    """Distill per-layer attention matrices into a patch-weight vector.

    CLS_LAST reads the summary row of the final matrix; CLS_ROLLOUT first
    multiplies the matrices (later layers on the left), which composes
    attention across depth.  Either way the summary column is dropped and
    the rest renormalized onto the simplex.
    """
    mats = list(attn_matrices)
    require(len(mats) >= 1, "need at least one attention matrix")
    if mode is AttentionMode.CLS_LAST:
        M = mats[-1]
    elif mode is AttentionMode.CLS_ROLLOUT:
        M = mats[0]
        for A in mats[1:]:
            M = A @ M
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    return normalize_simplex(M[0, 1:], clip_negative=False)


def forward_reference(params: ToyViTParams, image,
                      mode: AttentionMode = AttentionMode.CLS_LAST):
    """Plain-numpy forward pass returning (probs, attention, per-layer A).

    Slow-but-obvious composition of the step functions above; the batched
    kernels are tested against it.
    """
    X = patchify(image, params)
    mats = []
    for _ in range(params.layers):
        Z, A = self_attention(X, params)
        X = token_norm(Z)
        mats.append(A)
    w_head = np.asarray(params.w_head, dtype=np.float64)
    logits = X[0] @ w_head
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return probs, attention_vector(mats, mode), mats


def forward_batch(params: ToyViTParams, images: np.ndarray,
                  mode: AttentionMode = AttentionMode.CLS_LAST):
    """Model outputs for a (B, H, W) batch via the active backend kernel.

    :return: (probs (B, classes), attention (B, n_patches)).
    """
    imgs = np.asarray(images, dtype=np.float64)
    require(imgs.ndim == 3, "expected a (B, H, W) batch")
    require(imgs.shape[1] == imgs.shape[2] == params.image_size,
            "image shape mismatch")
    w = params.weights64()
    kern = _backend.get_kernels()
    return kern.forward_batch(
        imgs, w["w_embed"], w["w_q"], w["w_k"], w["w_v"], w["w_l"],
        w["w_head"], w["summary"], params.patch_size, params.layers,
        mode is AttentionMode.CLS_ROLLOUT, LAYER_NORM_EPS)


def forward(params: ToyViTParams, image,
            mode: AttentionMode = AttentionMode.CLS_LAST):
    """Single-image forward pass: (probs, attention vector)."""
    probs, attn = forward_batch(params, np.asarray(image)[None], mode)
    return probs[0], attn[0]


def summary_features(params: ToyViTParams, images) -> np.ndarray:
    """Final summary-token features for a batch, via the reference path."""
    feats = np.empty((len(images), params.q))
    for i, image in enumerate(images):
        X = patchify(image, params)
        for _ in range(params.layers):
            Z, _ = self_attention(X, params)
            X = token_norm(Z)
        feats[i] = X[0]
    return feats


def fit_head(params: ToyViTParams, images, labels) -> ToyViTParams:
    """Closed-form least-squares refit of the classifier head.

    Regresses one-hot labels on the summary features of the (clean) training
    images and replaces w_head with the minimizer.  Deterministic; no
    iterative optimization anywhere.
    """
    labels = np.asarray(labels)
    require(len(images) == labels.size, "images and labels disagree in length")
    require(labels.size >= 1, "need at least one example")
    require(int(labels.min()) >= 0 and int(labels.max()) < params.classes,
            "label out of range")
    feats = summary_features(params, images)
    onehot = np.zeros((labels.size, params.classes))
    onehot[np.arange(labels.size), labels] = 1.0
    w_head, *_ = np.linalg.lstsq(feats, onehot, rcond=None)
    return replace(params, w_head=w_head.astype(np.float32))
