"""Self-check suites: oracle equivalences and invariants, CLI-runnable.

Each check returns (name, ok, detail).  The "fast" level finishes within a
minute on a laptop; "full" adds the largest brute-force entanglement oracle
and more samples.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import basis, entanglement, linalg
from .config import ModelConfig
from .model import Model, classify, init_model, param_count

Check = tuple[str, bool, str]


def random_model(config: ModelConfig, rng: np.random.Generator,
                 randomize_stats: bool = True) -> Model:
    """Seeded model with optionally randomized normalization state, so the
    exported matrices exercise nontrivial affine parts."""
    model = init_model(config, seed=int(rng.integers(2 ** 31)))
    if randomize_stats:
        for bn in model.bns:
            c = bn.channels
            bn.scale = rng.uniform(0.5, 1.5, c)
            bn.shift = rng.uniform(-0.5, 0.5, c)
            bn.running_mean = rng.uniform(-0.5, 0.5, c)
            bn.running_var = rng.uniform(0.2, 2.0, c)
    return model


def _relative_score_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.abs(a), np.abs(b)).max(axis=-1, keepdims=True)
    scale = np.maximum(scale, 1e-300)
    return float((np.abs(a - b) / scale).max())


def check_quadrature_orthonormality(basis_name: str = "fourier", n: int = 4,
                                    tol: float = 1e-10) -> Check:
    overlaps = basis.overlap_matrix(basis_name, n)
    dev = float(np.abs(overlaps - np.eye(overlaps.shape[0])).max())
    return (f"quadrature orthonormality ({basis_name}, n={n})", dev <= tol,
            f"max deviation from identity {dev:.3e}")


def check_dirichlet(n: int = 4) -> Check:
    value = float(basis.dirichlet_kernel(n, np.array(0.0)))
    ok = value == 2 * n + 1
    return (f"Dirichlet kernel value at zero (n={n})", ok, f"{value} vs {2 * n + 1}")


def check_forward_contraction(model: Model | None = None, tensors=None,
                              num_inputs: int = 20, seed: int = 7,
                              tol: float = 1e-10) -> Check:
    rng = np.random.default_rng(seed)
    if model is None:
        model = random_model(ModelConfig(n_pixels=256, d=8), rng)
    if tensors is None:
        tensors = model.export_augmented_tensors()
    x = rng.uniform(0.0, 1.0, (num_inputs, model.config.n_pixels))
    err = _relative_score_error(model.forward(x, mode="eval"),
                                entanglement.contract_score(tensors, x, model.config))
    return ("forward pass vs tensor contraction (N=%d)" % model.config.n_pixels,
            err <= tol, f"max relative error {err:.3e}")


def check_gram_vs_svd(n_pixels: int, num_models: int, seed: int = 11,
                      tol: float = 1e-8) -> Check:
    rng = np.random.default_rng(seed)
    config = ModelConfig(n_pixels=n_pixels, d=2, num_classes=4)
    worst = 0.0
    for _ in range(num_models):
        tensors = random_model(config, rng).export_augmented_tensors()
        h = entanglement.top_gram(tensors)
        psi = entanglement.brute_force_state(tensors)
        for y in range(config.num_classes):
            spec = entanglement.schmidt_spectrum(tensors.level(tensors.levels)[y], h)
            mat = entanglement.bipartition_matrix(psi[y], tensors.local_dim, n_pixels)
            sv = np.linalg.svd(mat, compute_uv=False)
            ref = sv * sv
            ref = ref / ref.sum()
            k = max(len(ref), len(spec.probabilities))
            pa = np.sort(np.pad(spec.probabilities, (0, k - len(spec.probabilities))))[::-1]
            pb = np.sort(np.pad(ref, (0, k - len(ref))))[::-1]
            worst = max(worst, float(np.abs(pa - pb).max()))
            worst = max(worst, abs(entanglement.entanglement_entropy(pa)
                                   - entanglement.entanglement_entropy(pb)))
    return (f"Gram recursion vs SVD oracle (N={n_pixels}, {num_models} models)",
            worst <= tol, f"max deviation {worst:.3e}")


def check_gradients(n_pixels: int = 8, d: int = 2, batch: int = 4, seed: int = 3,
                    tol: float = 1e-4, step: float = 1e-5) -> Check:
    rng = np.random.default_rng(seed)
    config = ModelConfig(n_pixels=n_pixels, d=d, num_classes=3)
    model = init_model(config, seed=int(rng.integers(2 ** 31)))
    x = rng.uniform(0.0, 1.0, (batch, n_pixels))
    y = rng.integers(0, config.num_classes, batch)

    def loss_value() -> float:
        saved = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in model.bns]
        with ad.GradientTape() as tape:
            loss, _ = model.loss_graph(tape, x, y)
        for bn, (m, v) in zip(model.bns, saved):
            bn.running_mean, bn.running_var = m, v
        return float(loss.value)

    saved = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in model.bns]
    with ad.GradientTape() as tape:
        loss, _ = model.loss_graph(tape, x, y)
        grads = ad.backward(tape)
    for bn, (m, v) in zip(model.bns, saved):
        bn.running_mean, bn.running_var = m, v

    worst = 0.0
    arrays = [arr for _, arr in model.trainables()]
    for arr, grad in zip(arrays, grads):
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, err)
    return (f"reverse-mode gradients vs central differences (N={n_pixels}, d={d})",
            worst <= tol, f"max relative error {worst:.3e}")


def check_schmidt_invariants(seed: int = 5, trials: int = 20) -> Check:
    rng = np.random.default_rng(seed)
    worst = ""
    ok = True
    for _ in range(trials):
        k = int(rng.integers(2, 9))
        raw = rng.normal(size=(k, k))
        g = raw @ raw.T + 1e-6 * np.eye(k)
        g /= np.diag(g).max()
        a = rng.normal(size=k)
        spec = entanglement.schmidt_spectrum(a, g)
        p = spec.probabilities
        if not (p >= 0).all():
            ok, worst = False, "negative probability"
            break
        if abs(p.sum() - 1.0) > 1e-10:
            ok, worst = False, f"sum(p) off by {abs(p.sum() - 1.0):.3e}"
            break
        if abs(spec.weights.sum() - spec.norm) > 1e-8 * spec.norm:
            ok, worst = False, "trace identity violated"
            break
        s = entanglement.entanglement_entropy(spec)
        if not (0.0 <= s <= np.log(k) + 1e-12):
            ok, worst = False, f"entropy {s:.3e} outside [0, log {k}]"
            break
        scaled = entanglement.schmidt_spectrum(3.7 * a, g)
        m = max(len(scaled.probabilities), len(p))
        pa = np.pad(p, (0, m - len(p)))
        pb = np.pad(scaled.probabilities, (0, m - len(scaled.probabilities)))
        if np.abs(pa - pb).max() > 1e-12:
            ok, worst = False, "spectrum not scale invariant"
            break
    return ("Schmidt simplex, trace identity, entropy bound, scale invariance",
            ok, worst or f"{trials} random draws")


def check_gram_psd(seed: int = 13, trials: int = 10) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(2, 7))
        raw = rng.normal(size=(k, k))
        g = raw @ raw.T
        a = rng.normal(size=(int(rng.integers(2, 7)) + 1, k))
        g2 = entanglement.gram_ascend(g, a)
        lam = linalg.sym_eigenvalues(g2)
        floor = -1e-10 * max(float(lam[0]), 1e-300)
        worst = min(worst, float(lam[-1] - floor)) if lam[-1] < floor else worst
        if lam[-1] < floor:
            return ("Gram ascent preserves positive semidefiniteness", False,
                    f"min eigenvalue {lam[-1]:.3e}")
    return ("Gram ascent preserves positive semidefiniteness", True, f"{trials} random draws")


def check_classify_scale(seed: int = 17, trials: int = 50) -> Check:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        scores = rng.normal(size=(4, int(rng.integers(2, 11))))
        c = float(rng.uniform(0.1, 10.0)) * float(rng.choice([-1.0, 1.0]))
        if not np.array_equal(classify(scores), classify(c * scores)):
            return ("classification invariant under score rescaling", False, "mismatch")
    return ("classification invariant under score rescaling", True, f"{trials} random draws")


def check_param_count() -> Check:
    values = {18: 81000, 2: 1320, 40: 391200}
    for d, expected in values.items():
        got = param_count(ModelConfig(n_pixels=256, d=d))
        if got != expected:
            return ("parameter count formula", False, f"d={d}: {got} != {expected}")
    return ("parameter count formula", True, "d=2, 18, 40 at N=256")


def suite(level: str = "fast") -> list[Check]:
    if level not in ("fast", "full"):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    checks = [
        check_param_count(),
        check_quadrature_orthonormality("fourier", 4),
        check_quadrature_orthonormality("legendre", 6),
        check_dirichlet(4),
        check_forward_contraction(num_inputs=20 if level == "fast" else 100),
        check_gram_vs_svd(2, 5 if level == "fast" else 20),
        check_gram_vs_svd(4, 3 if level == "fast" else 20),
        check_gradients(n_pixels=4 if level == "fast" else 8, d=2),
        check_schmidt_invariants(),
        check_gram_psd(),
        check_classify_scale(),
    ]
    if level == "full":
        checks.append(check_gram_vs_svd(8, 20))
    return checks


def run(level: str = "fast", log=print) -> bool:
    results = suite(level)
    for name, ok, detail in results:
        log(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
    passed = all(ok for _, ok, _ in results)
    log(f"{'all checks passed' if passed else 'CHECKS FAILED'} ({level} level)")
    return passed
