"""Objective functions: benchmark functions, regularized least squares for
sparse recovery, and gradient-verification helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import CHANNEL_INIT, RngStream


class Objective:
    """Evaluation interface for the particle dynamics.

    Subclasses must set ``dimension`` and implement ``values``.  A batched
    objective exposes ``n_batches > 1`` and interprets the ``batch`` argument;
    non-batched objectives ignore it.  ``gradients`` is optional and only
    required when a gradient drift or gradient noise term is active.
    """

    dimension: int
    n_batches: int = 1
    has_gradient: bool = False

    def values(self, points: np.ndarray, batch: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, batch: int | None = None) -> float:
        return float(self.values(np.atleast_2d(np.asarray(x, dtype=float)), batch)[0])

    def gradients(self, points: np.ndarray, batch: int | None = None) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} provides no gradient")

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.gradients(np.atleast_2d(np.asarray(x, dtype=float)))[0]


class FunctionObjective(Objective):
    """Wrap plain callables (vectorized over the first axis)."""

    def __init__(self, fn, dimension, grad_fn=None):
        self.fn = fn
        self.dimension = dimension
        self.grad_fn = grad_fn
        self.has_gradient = grad_fn is not None

    def values(self, points, batch=None):
        return np.asarray(self.fn(points), dtype=float)

    def gradients(self, points, batch=None):
        if self.grad_fn is None:
            raise NotImplementedError("no gradient supplied")
        return np.asarray(self.grad_fn(points), dtype=float)


class Sphere(Objective):
    """E(x) = ||x||^2, minimizer at the origin."""

    has_gradient = True

    def __init__(self, dimension: int):
        self.dimension = dimension

    def values(self, points, batch=None):
        return np.einsum("ij,ij->i", points, points)

    def gradients(self, points, batch=None):
        return 2.0 * points


class Rastrigin(Objective):
    """E(x) = sum x_k^2 + 5/2 (1 - cos(2 pi x_k)), global minimum 0 at 0."""

    has_gradient = True

    def __init__(self, dimension: int):
        self.dimension = dimension

    def values(self, points, batch=None):
        return np.sum(points**2 + 2.5 * (1.0 - np.cos(2.0 * np.pi * points)), axis=1)

    def gradients(self, points, batch=None):
        return 2.0 * points + 5.0 * np.pi * np.sin(2.0 * np.pi * points)


def rastrigin(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x**2 + 2.5 * (1.0 - np.cos(2.0 * np.pi * x))))


def rastrigin_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 2.0 * x + 5.0 * np.pi * np.sin(2.0 * np.pi * x)


@dataclass
class CsInstance:
    """Sparse-recovery problem instance: recover x* with b = A x*."""

    A: np.ndarray
    b: np.ndarray
    mu: float
    p: float
    ground_truth: np.ndarray | None = None
    sparsity: int | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.p not in (1.0, 0.5):
            raise ValueError(f"unsupported exponent p={self.p}")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def save(self, path) -> None:
        """Plain-text format: header "d m s mu p", then A row-major, b, x*."""
        tokens = [f"{self.d} {self.m} {self.sparsity or 0} {self.mu!r} {self.p!r}"]
        tokens += [repr(float(v)) for v in self.A.ravel()]
        tokens += [repr(float(v)) for v in self.b]
        if self.ground_truth is not None:
            tokens += [repr(float(v)) for v in self.ground_truth]
        with open(path, "w") as f:
            f.write("\n".join(tokens) + "\n")

    @classmethod
    def load(cls, path) -> "CsInstance":
        with open(path) as f:
            header = f.readline().split()
            d, m, s = int(header[0]), int(header[1]), int(header[2])
            mu, p = float(header[3]), float(header[4])
            vals = np.array([float(tok) for tok in f.read().split()])
        A = vals[: m * d].reshape(m, d)
        b = vals[m * d : m * d + m]
        rest = vals[m * d + m :]
        gt = rest if rest.size == d else None
        return cls(A=A, b=b, mu=mu, p=p, ground_truth=gt, sparsity=s or None)


def cs_eval(inst: CsInstance, x: np.ndarray) -> float:
    """E(x) = 1/2 ||Ax - b||^2 + mu ||x||_p^p."""
    x = np.asarray(x, dtype=float)
    residual = inst.A @ x - inst.b
    return float(0.5 * residual @ residual + inst.mu * np.sum(np.abs(x) ** inst.p))


def cs_grad(inst: CsInstance, x: np.ndarray, smoothing_eps: float = 1e-8) -> np.ndarray:
    """Gradient (subgradient for p=1, smoothed for p=1/2) of cs_eval.

    sign(0) = 0 for p=1; for p<1 the singular factor |x|^(p-1) is capped by
    adding smoothing_eps inside, with gradient 0 at exactly 0 when eps=0.
    """
    x = np.asarray(x, dtype=float)
    g = inst.A.T @ (inst.A @ x - inst.b)
    if inst.mu != 0:
        if inst.p == 1.0:
            g = g + inst.mu * np.sign(x)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                reg = np.sign(x) * inst.p * (np.abs(x) + smoothing_eps) ** (inst.p - 1.0)
            if smoothing_eps == 0.0:
                reg = np.where(x == 0.0, 0.0, reg)
            g = g + inst.mu * reg
    return g


class CsObjective(Objective):
    """Objective view of a CsInstance for the particle dynamics."""

    has_gradient = True

    def __init__(self, inst: CsInstance, smoothing_eps: float = 1e-8):
        self.inst = inst
        self.dimension = inst.d
        self.smoothing_eps = smoothing_eps

    def values(self, points, batch=None):
        residual = points @ self.inst.A.T - self.inst.b
        return 0.5 * np.einsum("ij,ij->i", residual, residual) + self.inst.mu * np.sum(
            np.abs(points) ** self.inst.p, axis=1
        )

    def gradients(self, points, batch=None):
        g = (points @ self.inst.A.T - self.inst.b) @ self.inst.A
        if self.inst.mu != 0:
            p = self.inst.p
            if p == 1.0:
                g = g + self.inst.mu * np.sign(points)
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    reg = np.sign(points) * p * (np.abs(points) + self.smoothing_eps) ** (p - 1.0)
                if self.smoothing_eps == 0.0:
                    reg = np.where(points == 0.0, 0.0, reg)
                g = g + self.inst.mu * reg
        return g


def generate_cs_instance(
    d: int, m: int, s: int, mu: float, p: float, rng: RngStream
) -> CsInstance:
    """Random Gaussian instance: A ~ N(0, 1/m) entrywise, x* s-sparse with
    nonzero magnitudes floored at 0.1, and exact measurements b = A x*."""
    if not (1 <= s <= d):
        raise ValueError(f"sparsity s={s} must be in [1, {d}]")
    if not (1 <= m <= d):
        raise ValueError(f"measurement count m={m} must be in [1, {d}]")
    gen = rng.generator(0, CHANNEL_INIT)
    A = gen.standard_normal((m, d)) / np.sqrt(m)
    support = gen.choice(d, size=s, replace=False)
    raw = gen.standard_normal(s)
    vals = np.sign(raw) * np.maximum(np.abs(raw), 0.1)
    vals[vals == 0.0] = 0.1
    x_star = np.zeros(d)
    x_star[support] = vals
    return CsInstance(A=A, b=A @ x_star, mu=mu, p=p, ground_truth=x_star, sparsity=s)


def finite_diff_grad(obj: Objective, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, the verification oracle for analytic ones."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (obj(x + e) - obj(x - e)) / (2.0 * h)
    return g


class ToyStochasticObjective(Objective):
    """Mini-batched quadratic: E_batch(x) = ||x - c_batch||^2 with batch
    centers summing to zero, so the full-data minimizer is the origin."""

    has_gradient = True

    def __init__(self, dimension: int, n_batches: int, center_scale: float = 0.5, seed: int = 0):
        if n_batches < 1:
            raise ValueError("n_batches must be at least 1")
        self.dimension = dimension
        self.n_batches = n_batches
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        if n_batches == 1:
            self.centers = np.zeros((1, dimension))
        else:
            c = gen.standard_normal((n_batches, dimension)) * center_scale
            self.centers = c - c.mean(axis=0)

    def values(self, points, batch=None):
        c = self.centers[0 if batch is None else batch]
        diff = points - c
        return np.einsum("ij,ij->i", diff, diff)

    def gradients(self, points, batch=None):
        c = self.centers[0 if batch is None else batch]
        return 2.0 * (points - c)


def toy_stochastic_objective(d: int, n_batches: int, seed: int = 0) -> ToyStochasticObjective:
    return ToyStochasticObjective(d, n_batches, seed=seed)
