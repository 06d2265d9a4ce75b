"""Quantum-state view of the trained network.

Each class score is the overlap of the embedded input with a class state
built from the exported matrix stack.  Weight sharing makes the two
subtrees feeding every product node identical maps, so all inner products
between subtree states propagate upward through small Gram matrices:

    G' = (A G A^T) ** 2   (elementwise square)

instead of through the exponentially large amplitude space.  The top
bipartition (first half vs second half of the pixel chain) then yields the
Schmidt spectrum and von Neumann entropy of every class state from
matrices of size (d_L + 1).  A brute-force amplitude oracle validates the
recursion at small pixel counts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import basis
from .config import ModelConfig
from .linalg import ShapeError, as_matrix, cholesky, matmul, sym_eigenvalues
from .model import AugmentedTensors, Model

EIGENVALUE_FLOOR = 1e-14
BRUTE_FORCE_LIMIT = 10 ** 6


class DegenerateStateError(ArithmeticError):
    """A class state has (numerically) zero norm and cannot be normalized."""


class UndefinedProbabilityError(ValueError):
    """All class scores are zero; the conditional distribution is undefined."""


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Descending probabilities of the reduced density matrix of one class
    state, the unnormalized weights they came from, and the squared norm."""

    probabilities: np.ndarray
    weights: np.ndarray
    norm: float


@dataclass(frozen=True)
class EEReport:
    per_class: tuple[float, ...]
    average: float
    bipartition: str
    epoch: int | None = None

    def to_json(self) -> str:
        payload = {
            "per_class": list(self.per_class),
            "average": self.average,
            "bipartition": self.bipartition,
        }
        if self.epoch is not None:
            payload["epoch"] = self.epoch
        return json.dumps(payload, indent=2, sort_keys=True)


def gram_base(local_dim: int) -> np.ndarray:
    """Level-0 Gram matrix: the identity, since the basis is orthonormal."""
    if local_dim < 1:
        raise ShapeError(f"local_dim must be >= 1, got {local_dim}")
    return np.eye(local_dim)


def _congruence(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    h = matmul(matmul(a, g), a.T)
    return 0.5 * (h + h.T)


def gram_ascend(g, a_tilde) -> np.ndarray:
    """Gram matrix one level up: congruence by the level matrix, then an
    elementwise square (the two child subtrees are identical maps)."""
    G = as_matrix(g, "g")
    A = as_matrix(a_tilde, "a_tilde")
    if G.shape[0] != G.shape[1]:
        raise ShapeError(f"g must be square, got {G.shape}")
    if A.shape[1] != G.shape[0]:
        raise ShapeError(f"level matrix {A.shape} does not accept Gram size {G.shape[0]}")
    h = _congruence(A, G)
    return h * h


def top_gram(tensors: AugmentedTensors) -> np.ndarray:
    """Gram matrix of the two half-chain states entering the top product node.

    Ascends from the orthonormal leaves through all but the last level
    matrix, then applies the last level matrix *without* the elementwise
    square: the squaring of the top node happens inside the norm and
    spectrum formulas.
    """
    g = gram_base(tensors.local_dim)
    for l in range(tensors.levels - 1):
        g = gram_ascend(g, tensors.level(l))
    return _congruence(tensors.level(tensors.levels - 1), g)


def _checked_row_and_gram(a_row, g_top) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a_row, dtype=np.float64).ravel()
    G = as_matrix(g_top, "g_top")
    if G.shape[0] != G.shape[1] or G.shape[0] != a.shape[0]:
        raise ShapeError(f"class row of length {a.shape[0]} does not match Gram {G.shape}")
    return a, G


def network_norm(a_row, g_top) -> float:
    """Squared norm of one class state: sum_{IJ} a_I a_J G_IJ^2.

    Raises when the sum is zero or indistinguishable from zero at the
    rounding level of its terms; such a state cannot be normalized.
    """
    a, G = _checked_row_and_gram(a_row, g_top)
    coupling = np.outer(a, a) * G
    terms = coupling * G
    z = float(terms.sum())
    tol = a.size * np.finfo(np.float64).eps * float(np.abs(terms).sum())
    if z <= tol:
        raise DegenerateStateError(f"class state norm is not positive (Z = {z:.6e})")
    return z


def schmidt_spectrum(a_row, g_top, jitter: float = 1e-12) -> SchmidtSpectrum:
    """Schmidt probabilities of one class state across the top bipartition.

    With C = (a a^T) * G (elementwise) and G = L L^T, the nonzero spectrum
    of the reduced density matrix equals the spectrum of L^T C L divided by
    the norm.  The computation runs in the correlation frame: each subtree
    state is rescaled to unit norm and the norms are folded into the class
    row, which the spectrum's scale invariance absorbs.  This keeps every
    matrix entry bounded even when subtree norms span hundreds of orders of
    magnitude (the product nodes make that the typical untrained regime).
    Weights below ``EIGENVALUE_FLOOR`` of the largest are zeroed.
    """
    a, G = _checked_row_and_gram(a_row, g_top)
    s = np.sqrt(np.clip(np.diag(G), 0.0, None))
    alive = s > 0.0
    denom = np.where(alive, s, 1.0)
    corr = G / np.outer(denom, denom)
    corr[~alive, :] = 0.0
    corr[:, ~alive] = 0.0
    row = a * s * s
    scale = float(np.sqrt((row * row).sum()))
    if scale == 0.0:
        raise DegenerateStateError("class state norm is not positive; cannot normalize")
    row /= scale
    coupling = np.outer(row, row) * corr
    low = cholesky(corr, jitter)
    core = matmul(matmul(low.T, coupling), low)
    lam = sym_eigenvalues(0.5 * (core + core.T))
    top = float(lam.max(initial=0.0))
    if top <= 0.0:
        raise DegenerateStateError("all Schmidt weights vanish")
    lam = np.where(lam < EIGENVALUE_FLOOR * top, 0.0, lam)
    probs = lam / lam.sum()
    weights = lam * (scale * scale)
    return SchmidtSpectrum(probabilities=probs, weights=weights, norm=float(weights.sum()))


def entanglement_entropy(spectrum) -> float:
    """Von Neumann entropy in nats; 0 log 0 counts as 0."""
    p = spectrum.probabilities if isinstance(spectrum, SchmidtSpectrum) else np.asarray(spectrum)
    p = p[p > 0.0]
    return max(0.0, float(-(p * np.log(p)).sum()))


def brute_force_state(tensors: AugmentedTensors) -> np.ndarray:
    """Full class-state amplitudes, shape ``(num_classes, local_dim ** N)``.

    Explicit contraction of the tree: leaf channel states are basis vectors,
    level matrices mix channels, product nodes tensor two identical child
    states.  Exponential in N; guarded, and meant only as a validation
    oracle at small sizes.
    """
    dim = tensors.local_dim
    n_pixels = 2 ** tensors.levels
    if dim ** n_pixels > BRUTE_FORCE_LIMIT:
        raise ValueError(f"amplitude space {dim}**{n_pixels} exceeds {BRUTE_FORCE_LIMIT}")
    states = np.eye(dim)  # (channels, amplitudes), one leaf
    for l in range(tensors.levels - 1):
        mixed = tensors.level(l) @ states
        states = (mixed[:, :, np.newaxis] * mixed[:, np.newaxis, :]).reshape(mixed.shape[0], -1)
    half = tensors.level(tensors.levels - 1) @ states  # (d_L + 1, dim ** (N/2))
    return np.einsum("yi,ia,ib->yab", tensors.level(tensors.levels), half, half,
                     optimize=True).reshape(tensors.num_classes, -1)


def bipartition_matrix(amplitudes: np.ndarray, local_dim: int, n_pixels: int) -> np.ndarray:
    """Reshape one class's amplitudes to (first half) x (second half)."""
    side = local_dim ** (n_pixels // 2)
    return np.asarray(amplitudes).reshape(side, side)


def contract_score(tensors: AugmentedTensors, x, config: ModelConfig) -> np.ndarray:
    """Class scores by contracting the matrix stack against the embedded
    input; linear cost in the pixel count.  Equals the layer-path forward
    pass in evaluation mode."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = basis.augmented_features(arr, config.basis, config.n)
    if z.shape[-1] != tensors.local_dim:
        raise ShapeError(f"input dimension {z.shape[-1]} does not match tensors "
                         f"({tensors.local_dim})")
    for l in range(tensors.levels):
        z = z @ tensors.level(l).T
        z = z[:, 0::2, :] * z[:, 1::2, :]
    return z[:, 0, :] @ tensors.level(tensors.levels).T


def conditional_prob(scores) -> np.ndarray:
    """Class distribution proportional to the squared scores; invariant
    under rescaling of the score vector."""
    arr = np.asarray(scores, dtype=np.float64)
    peak = np.abs(arr).max(axis=-1, keepdims=True)
    if np.any(peak == 0.0):
        raise UndefinedProbabilityError("all class scores are zero")
    sq = (arr / peak) ** 2
    return sq / sq.sum(axis=-1, keepdims=True)


def _rescaled(g: np.ndarray) -> np.ndarray:
    peak = float(np.diag(g).max())
    return g / peak if peak > 0.0 else g


def _assert_psd(g: np.ndarray, where: str) -> None:
    lam = sym_eigenvalues(g)
    if lam[-1] < -1e-10 * max(float(lam[0]), 1e-300):
        raise ArithmeticError(f"{where}: Gram matrix lost positive semidefiniteness "
                              f"(min eigenvalue {lam[-1]:.3e})")


def class_entropies(tensors: AugmentedTensors, check_psd: bool = True) -> np.ndarray:
    """Entanglement entropy of every class state across the top bipartition.

    Gram matrices are rescaled per level for numerical headroom; entropies
    are scale-invariant, so the result is unaffected.
    """
    g = gram_base(tensors.local_dim)
    for l in range(tensors.levels - 1):
        g = _rescaled(gram_ascend(g, tensors.level(l)))
        if check_psd:
            _assert_psd(g, f"level {l + 1}")
    h = _rescaled(_congruence(tensors.level(tensors.levels - 1), g))
    if check_psd:
        _assert_psd(h, "top")
    out = np.empty(tensors.num_classes)
    for y in range(tensors.num_classes):
        out[y] = entanglement_entropy(schmidt_spectrum(tensors.level(tensors.levels)[y], h))
    return out


def ee_report(model: Model, bipartition: str, epoch: int | None = None) -> EEReport:
    """Per-class and average entropies of the evaluation-mode network."""
    entropies = class_entropies(model.export_augmented_tensors())
    return EEReport(per_class=tuple(float(s) for s in entropies),
                    average=float(entropies.mean()),
                    bipartition=bipartition, epoch=epoch)
