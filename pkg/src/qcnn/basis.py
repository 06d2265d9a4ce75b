"""Orthonormal single-pixel function bases and the representation features.

A pixel value x in [0, 1] is embedded by evaluating a truncated orthonormal
basis of a function space.  The constant basis function is index 0 of the
*augmented* feature; the non-constant channels are what the network sees.
"""
from __future__ import annotations

import numpy as np

from .config import FOURIER, LEGENDRE


class InputError(ValueError):
    """Pixel values outside [0, 1]."""


def check_pixels(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputError(
            f"pixel values must lie in [0, 1], got range [{arr.min():g}, {arr.max():g}]")
    return arr


def num_channels(basis: str, n: int) -> int:
    return 2 * n if basis == FOURIER else n


def local_dim(basis: str, n: int) -> int:
    """Channels plus the constant function."""
    return num_channels(basis, n) + 1


def _fourier(x: np.ndarray, n: int) -> np.ndarray:
    k = np.arange(1, n + 1, dtype=np.float64)
    angles = 2.0 * np.pi * x[..., np.newaxis] * k
    out = np.empty(x.shape + (2 * n,), dtype=np.float64)
    out[..., 0::2] = np.sqrt(2.0) * np.cos(angles)
    out[..., 1::2] = np.sqrt(2.0) * np.sin(angles)
    return out


def _legendre(x: np.ndarray, n: int) -> np.ndarray:
    # Degrees 1..n of the shifted, L2([0,1])-orthonormal Legendre polynomials.
    t = 2.0 * x - 1.0
    van = np.polynomial.legendre.legvander(t, n)
    norms = np.sqrt(2.0 * np.arange(1, n + 1, dtype=np.float64) + 1.0)
    return van[..., 1:] * norms


def features(x, basis: str, n: int) -> np.ndarray:
    """Non-constant channel features, shape ``x.shape + (num_channels,)``."""
    arr = check_pixels(x)
    if basis == FOURIER:
        return _fourier(arr, n)
    if basis == LEGENDRE:
        return _legendre(arr, n)
    raise ValueError(f"unknown basis {basis!r}")


def augmented_features(x, basis: str, n: int) -> np.ndarray:
    """Constant channel (=1) prepended to the features: shape ``(..., local_dim)``."""
    feats = features(x, basis, n)
    out = np.empty(feats.shape[:-1] + (feats.shape[-1] + 1,), dtype=np.float64)
    out[..., 0] = 1.0
    out[..., 1:] = feats
    return out


def dirichlet_kernel(n: int, z) -> np.ndarray:
    """Reproducing kernel of the truncated Fourier space; value 2n+1 at z=0."""
    zz = np.asarray(z, dtype=np.float64)
    k = np.arange(1, n + 1, dtype=np.float64)
    return 1.0 + 2.0 * np.cos(2.0 * np.pi * zz[..., np.newaxis] * k).sum(axis=-1)


def overlap_matrix(basis: str, n: int, points: int = 8193) -> np.ndarray:
    """Pairwise L2([0,1]) inner products of the augmented basis, by composite
    Simpson quadrature.  Orthonormal bases should reproduce the identity."""
    if points % 2 == 0:
        points += 1
    xs = np.linspace(0.0, 1.0, points)
    vals = augmented_features(xs, basis, n)  # (points, dim)
    weights = np.ones(points)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (xs[1] - xs[0]) / 3.0
    return (vals * weights[:, np.newaxis]).T @ vals
