"""PCA-whitening of embedding matrices.

Fitting mean-centers the data, eigendecomposes the sample covariance with
a cyclic Jacobi solver, keeps the leading components, and rescales each
projected coordinate by the inverse square root of its eigenvalue (plus a
small epsilon guarding zero-variance directions). Applying the fitted
model decorrelates inputs to unit variance per kept component, optionally
followed by L2 normalization so that downstream cosine scoring reduces to
a dot product.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    BadTargetDim,
    DimensionMismatch,
    InsufficientSamples,
    IoFailure,
    MalformedModel,
    NoConvergence,
    NonFiniteInput,
    NotSymmetric,
)

MODEL_FORMAT_VERSION = 1
MAX_JACOBI_SWEEPS = 60
ORTHONORMAL_TOL = 1e-6

# epsilon defaults to this fraction of the largest eigenvalue
RELATIVE_EPSILON = 1e-6


@dataclass
class EigenResult:
    """Full spectrum of a symmetric matrix.

    values are sorted descending; vectors holds the matching orthonormal
    eigenvectors as columns.
    """

    values: np.ndarray
    vectors: np.ndarray


def symmetric_eigen(a, tol: float = 1e-11) -> EigenResult:
    """Eigendecompose a symmetric matrix with cyclic Jacobi rotations.

    Sign convention: each eigenvector is flipped so its largest-magnitude
    component is positive (first such component on exact ties), making the
    result fully deterministic.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise DimensionMismatch("matrix must be at least 1x1")
    if not np.isfinite(a).all():
        raise NonFiniteInput("matrix contains non-finite entries")
    if tol <= 0:
        raise ValueError("tol must be positive")
    scale = max(1.0, float(np.abs(a).max()))
    asym = float(np.abs(a - a.T).max())
    if asym > 1e-9 * scale:
        raise NotSymmetric(f"max |A - A^T| = {asym:g} exceeds tolerance")

    n = a.shape[0]
    # exact symmetry keeps every later step deterministic
    work = np.ascontiguousarray((a + a.T) / 2.0)
    vecs = np.eye(n, dtype=np.float64)
    threshold = tol * max(1.0, float(np.linalg.norm(work)))
    sweeps = _kernels.jacobi_cycle(work, vecs, threshold, MAX_JACOBI_SWEEPS)
    if sweeps < 0:
        raise NoConvergence(f"no convergence after {MAX_JACOBI_SWEEPS} sweeps")

    values = np.diagonal(work).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vecs = vecs[:, order]
    # deterministic sign: largest-|component| of each column made positive
    lead = np.argmax(np.abs(vecs), axis=0)
    flip = vecs[lead, np.arange(n)] < 0.0
    vecs[:, flip] = -vecs[:, flip]
    return EigenResult(values=values, vectors=np.ascontiguousarray(vecs))


@dataclass
class WhiteningModel:
    """Fitted whitening transform.

    components rows are the principal directions (descendingly ordered,
    mutually orthonormal); eigenvalues matches them; epsilon is added to
    each eigenvalue under the inverse square root.
    """

    dim: int
    k: int
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    epsilon: float
    renormalize: bool = True

    def scales(self) -> np.ndarray:
        """Per-component multipliers 1/sqrt(eigenvalue + epsilon).

        Components whose shifted eigenvalue is not positive get scale 0,
        which zeroes (rather than blows up) directions the fitting data
        had no variance in.
        """
        shifted = self.eigenvalues + self.epsilon
        out = np.zeros_like(shifted)
        pos = shifted > 0.0
        out[pos] = 1.0 / np.sqrt(shifted[pos])
        return out

    def validate(self) -> None:
        """Raise MalformedModel on any invariant violation."""
        if self.k < 1 or self.k > self.dim:
            raise MalformedModel(f"k={self.k} outside [1, dim={self.dim}]")
        if self.mean.shape != (self.dim,):
            raise MalformedModel(f"mean has shape {self.mean.shape}, expected ({self.dim},)")
        if self.components.shape != (self.k, self.dim):
            raise MalformedModel(
                f"components have shape {self.components.shape}, expected ({self.k}, {self.dim})"
            )
        if self.eigenvalues.shape != (self.k,):
            raise MalformedModel("eigenvalue count does not match k")
        if not (
            np.isfinite(self.mean).all()
            and np.isfinite(self.components).all()
            and np.isfinite(self.eigenvalues).all()
            and math.isfinite(self.epsilon)
        ):
            raise MalformedModel("model contains non-finite values")
        if self.epsilon < 0:
            raise MalformedModel("epsilon must be non-negative")
        if np.any(self.eigenvalues < 0):
            raise MalformedModel("eigenvalues must be non-negative")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise MalformedModel("eigenvalues must be sorted descending")
        gram = self.components @ self.components.T
        if np.abs(gram - np.eye(self.k)).max() > ORTHONORMAL_TOL:
            raise MalformedModel("component rows are not orthonormal")


def fit_whitening(
    x,
    k: int,
    epsilon: float | None = None,
    renormalize: bool = True,
) -> WhiteningModel:
    """Fit a whitening model on an (n, d) embedding matrix.

    epsilon=None picks 1e-6 times the largest eigenvalue; pass an explicit
    value (0.0 included) to override.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected an (n, d) matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples to fit, got {n}")
    if k < 1 or k > d:
        raise BadTargetDim(f"target dim {k} outside [1, {d}]")
    if not np.isfinite(x).all():
        raise NonFiniteInput("embedding matrix contains non-finite entries")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / (n - 1)
    eig = symmetric_eigen(cov)
    eigenvalues = np.maximum(eig.values[:k], 0.0)
    components = np.ascontiguousarray(eig.vectors[:, :k].T)
    if epsilon is None:
        epsilon = RELATIVE_EPSILON * float(eigenvalues[0])
    model = WhiteningModel(
        dim=d,
        k=k,
        mean=mean,
        components=components,
        eigenvalues=eigenvalues,
        epsilon=float(epsilon),
        renormalize=renormalize,
    )
    model.validate()
    return model


def apply_whitening(model: WhiteningModel, v) -> np.ndarray:
    """Project a d-vector (or (n, d) matrix) into the whitened k-space."""
    arr = np.asarray(v, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.dim:
        raise DimensionMismatch(
            f"input has dimension {arr.shape[-1] if arr.ndim else '?'}, model expects {model.dim}"
        )
    if not np.isfinite(arr).all():
        raise NonFiniteInput("input contains non-finite entries")
    out = (arr - model.mean) @ model.components.T
    out *= model.scales()
    if model.renormalize:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0.0)
    return out[0] if single else out


def save_model(model: WhiteningModel, path) -> None:
    model.validate()
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "k": model.k,
        "epsilon": model.epsilon,
        "renormalize": model.renormalize,
        "mean": model.mean.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "components": model.components.tolist(),
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write model to {path}: {e}") from e


def load_model(path) -> WhiteningModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read model from {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedModel(f"{path.name}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedModel(f"{path.name}: expected a JSON object")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise MalformedModel(f"{path.name}: unsupported format_version {doc.get('format_version')}")
    try:
        model = WhiteningModel(
            dim=int(doc["dim"]),
            k=int(doc["k"]),
            mean=np.asarray(doc["mean"], dtype=np.float64),
            components=np.asarray(doc["components"], dtype=np.float64),
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=np.float64),
            epsilon=float(doc["epsilon"]),
            renormalize=bool(doc["renormalize"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedModel(f"{path.name}: {e}") from e
    model.validate()
    return model
