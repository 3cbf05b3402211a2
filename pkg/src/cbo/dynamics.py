"""Discretized consensus-based particle dynamics with memory effects and
gradient drift (Euler-Maruyama scheme)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .objectives import Objective
from .rng import (
    CHANNEL_BATCH,
    CHANNEL_CONSENSUS,
    CHANNEL_GRADIENT,
    CHANNEL_INIT,
    CHANNEL_MEMORY,
    CHANNEL_SUBSET,
    RngStream,
)


class DivergedError(RuntimeError):
    """Raised when the ensemble develops non-finite coordinates."""

    def __init__(self, step_index: int):
        super().__init__(f"diverged ensemble at step {step_index}")
        self.step_index = step_index


class DiffusionType(Enum):
    ISOTROPIC = "isotropic"
    ANISOTROPIC = "anisotropic"


@dataclass(frozen=True)
class CboParams:
    """All dynamics parameters.

    beta = inf together with theta = 0 and kappa = 1/dt selects the exact
    historical-best memory rule, which reuses the objective values of the
    freshly moved particles and costs no extra evaluations.
    """

    lambda1: float = 1.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    sigma3: float = 0.0
    alpha: float = 100.0
    beta: float = math.inf
    theta: float = 0.0
    kappa: float = 100.0
    dt: float = 0.01
    diffusion: DiffusionType = DiffusionType.ANISOTROPIC

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got dt={self.dt}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got alpha={self.alpha}")
        if self.lambda1 <= 0:
            raise ValueError(f"lambda1 must be positive, got lambda1={self.lambda1}")
        for name in ("lambda2", "lambda3", "sigma1", "sigma2", "sigma3", "theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative (or inf)")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got kappa={self.kappa}")

    @property
    def uses_exact_memory(self) -> bool:
        return (
            math.isinf(self.beta)
            and self.theta == 0.0
            and abs(self.kappa * self.dt - 1.0) < 1e-12
        )


@dataclass
class Ensemble:
    """Positions X, historical-best memories Y and cached memory energies."""

    positions: np.ndarray
    memories: np.ndarray
    memory_energies: np.ndarray
    step_index: int = 0
    dt: float = 0.0

    def __post_init__(self):
        if self.positions.shape != self.memories.shape:
            raise ValueError("positions and memories must have identical shape")
        if self.memory_energies.shape != (self.positions.shape[0],):
            raise ValueError("memory_energies must have one entry per particle")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.positions.copy(),
            self.memories.copy(),
            self.memory_energies.copy(),
            self.step_index,
            self.dt,
        )


@dataclass(frozen=True)
class Schedule:
    """Per-epoch parameter schedules: optional alpha doubling and log2
    noise cooling sigma_epoch = sigma_0 / log2(epoch + 2)."""

    alpha_rule: str = "constant"
    sigma_rule: str = "constant"
    epoch_length: int = 1

    def __post_init__(self):
        if self.alpha_rule not in ("constant", "double_per_epoch"):
            raise ValueError(f"unknown alpha_rule {self.alpha_rule!r}")
        if self.sigma_rule not in ("constant", "log2_cooling"):
            raise ValueError(f"unknown sigma_rule {self.sigma_rule!r}")
        if self.epoch_length <= 0:
            raise ValueError("epoch_length must be positive")

    def params_at(self, base: CboParams, step_index: int) -> CboParams:
        epoch = step_index // self.epoch_length
        if epoch == 0 or (self.alpha_rule == "constant" and self.sigma_rule == "constant"):
            return base
        out = base
        if self.alpha_rule == "double_per_epoch":
            out = replace(out, alpha=base.alpha * 2.0**epoch)
        if self.sigma_rule == "log2_cooling":
            scale = 1.0 / math.log2(epoch + 2)
            out = replace(
                out,
                sigma1=base.sigma1 * scale,
                sigma2=base.sigma2 * scale,
                sigma3=base.sigma3 * scale,
            )
        return out


@dataclass(frozen=True)
class StoppingRule:
    max_steps: int
    consensus_tol: float | None = None  # stop when the consensus point moves less

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class RunResult:
    ensemble: Ensemble
    consensus: np.ndarray
    n_steps: int
    diagnostics: dict = field(default_factory=dict)


def consensus_point(points, energies, alpha, subset=None) -> np.ndarray:
    """Softmax-weighted average of points with weights exp(-alpha * energy).

    The minimum energy is subtracted inside the exponential; this cancels in
    the normalized weights and keeps alpha up to 1e15 overflow-safe.
    """
    points = np.asarray(points, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if subset is not None:
        subset = np.asarray(subset, dtype=int)
        if subset.size == 0:
            raise ValueError("empty consensus set")
        points = points[subset]
        energies = energies[subset]
    if points.shape[0] == 0:
        raise ValueError("empty consensus set")
    if not np.all(np.isfinite(energies)):
        raise ValueError("invalid energy")
    weights = np.exp(-alpha * (energies - energies.min()))
    return (weights @ points) / weights.sum()


def memory_switch(e_x, e_y, beta, theta):
    """Smoothed Heaviside switch 1/2 (1 + theta + tanh(beta (E(y) - E(x)))).

    For beta = inf this is the sign limit with sign(0) = 0, so ties keep the
    old memory, matching the strict inequality of the exact rule.
    """
    e_x = np.asarray(e_x, dtype=float)
    e_y = np.asarray(e_y, dtype=float)
    if math.isinf(beta):
        return 0.5 * (1.0 + theta) + 0.5 * np.sign(e_y - e_x)
    return 0.5 * (1.0 + theta + np.tanh(beta * (e_y - e_x)))


def exact_memory_update(ens: Ensemble, new_positions, new_energies) -> Ensemble:
    """Replace memory rows on strict energy improvement (in place).

    Reuses the supplied energies, so no extra objective evaluations happen;
    memory energies are non-increasing along any trajectory.
    """
    new_positions = np.asarray(new_positions, dtype=float)
    new_energies = np.asarray(new_energies, dtype=float)
    if new_positions.shape != ens.memories.shape:
        raise ValueError("shape mismatch between new positions and memories")
    if new_energies.shape != ens.memory_energies.shape:
        raise ValueError("shape mismatch between new energies and cache")
    improved = new_energies < ens.memory_energies
    ens.memories[improved] = new_positions[improved]
    ens.memory_energies[improved] = new_energies[improved]
    return ens


def _diffusion_noise(arg: np.ndarray, z: np.ndarray, diffusion: DiffusionType) -> np.ndarray:
    if diffusion is DiffusionType.ANISOTROPIC:
        return arg * z
    return np.linalg.norm(arg, axis=1, keepdims=True) * z


def step(
    ens: Ensemble,
    params: CboParams,
    objective: Objective,
    rng: RngStream,
    batch: int | None = None,
    n_consensus: int | None = None,
) -> Ensemble:
    """One Euler-Maruyama update of positions followed by the memory update.

    The consensus point is computed from the memories Y, with optional random
    particle subset of size n_consensus. Mutates and returns ``ens``.
    """
    k = ens.step_index
    x = ens.positions
    y = ens.memories
    e_y = ens.memory_energies
    dt = params.dt

    subset = None
    if n_consensus is not None and n_consensus < ens.n:
        subset = rng.generator(k, CHANNEL_SUBSET).choice(ens.n, size=n_consensus, replace=False)

    y_alpha = consensus_point(y, e_y, params.alpha, subset)

    drift = params.lambda1 * (x - y_alpha)
    if params.lambda2 != 0.0:
        drift = drift + params.lambda2 * (x - y)
    grads = None
    if params.lambda3 != 0.0 or params.sigma3 != 0.0:
        grads = objective.gradients(x, batch)
        if params.lambda3 != 0.0:
            drift = drift + params.lambda3 * grads

    x_new = x - dt * drift
    sqrt_dt = math.sqrt(dt)
    if params.sigma1 != 0.0:
        z = rng.gaussians(k, CHANNEL_CONSENSUS, ens.n, ens.d)
        x_new = x_new + params.sigma1 * sqrt_dt * _diffusion_noise(x - y_alpha, z, params.diffusion)
    if params.sigma2 != 0.0:
        z = rng.gaussians(k, CHANNEL_MEMORY, ens.n, ens.d)
        x_new = x_new + params.sigma2 * sqrt_dt * _diffusion_noise(x - y, z, params.diffusion)
    if params.sigma3 != 0.0:
        z = rng.gaussians(k, CHANNEL_GRADIENT, ens.n, ens.d)
        x_new = x_new + params.sigma3 * sqrt_dt * _diffusion_noise(grads, z, params.diffusion)

    if not np.all(np.isfinite(x_new)):
        raise DivergedError(k)

    e_new = objective.values(x_new, batch)
    if not np.all(np.isfinite(e_new)):
        raise DivergedError(k)

    ens.positions = x_new
    if params.uses_exact_memory:
        exact_memory_update(ens, x_new, e_new)
    else:
        s = memory_switch(e_new, e_y, params.beta, params.theta)
        ens.memories = y + dt * params.kappa * (x_new - y) * s[:, None]
        # smoothed rule moves the memory, so its energy must be re-evaluated
        ens.memory_energies = objective.values(ens.memories, batch)
    ens.step_index = k + 1
    ens.dt = dt
    return ens


@dataclass(frozen=True)
class InitSpec:
    """Initial distribution for the particle positions (memories start equal).

    kind "gaussian": mean plus per-coordinate std; kind "uniform": box
    [low, high]^d.
    """

    kind: str = "gaussian"
    mean: float = 0.0
    std: float = 1.0
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.std < 0:
                raise ValueError("std must be nonnegative")
        elif self.kind == "uniform":
            if not self.high > self.low:
                raise ValueError("empty box: high must exceed low")
        else:
            raise ValueError(f"unknown init kind {self.kind!r}")


def init_ensemble(
    n: int, d: int, init: InitSpec, rng: RngStream, objective: Objective, dt: float,
    batch: int | None = None,
) -> Ensemble:
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    gen = rng.generator(0, CHANNEL_INIT)
    if init.kind == "gaussian":
        x = init.mean + init.std * gen.standard_normal((n, d))
    else:
        x = gen.uniform(init.low, init.high, size=(n, d))
    energies = objective.values(x, batch)
    return Ensemble(x, x.copy(), np.asarray(energies, dtype=float), 0, dt)


def run(
    initial: Ensemble,
    params: CboParams,
    schedule: Schedule,
    objective: Objective,
    stop: StoppingRule,
    rng: RngStream,
    x_star: np.ndarray | None = None,
    record: bool = False,
    n_consensus: int | None = None,
) -> RunResult:
    """Iterate ``step`` up to stop.max_steps, applying the schedule at epoch
    boundaries.  With ``record`` the per-step Lyapunov / distance diagnostics
    are collected (requires ``x_star`` for the distance track)."""
    ens = initial
    diagnostics: dict = {}
    if record:
        diagnostics = {"time": [], "memory_energy_max": []}
        if x_star is not None:
            diagnostics["lyapunov"] = []
            diagnostics["w2_to_dirac"] = []
            diagnostics["consensus_dist"] = []

    def consensus_of(e: Ensemble) -> np.ndarray:
        return consensus_point(e.memories, e.memory_energies, params.alpha)

    def snapshot(e: Ensemble, y_alpha: np.ndarray | None = None):
        diagnostics["time"].append(e.step_index * params.dt)
        if x_star is not None:
            dx = e.positions - x_star
            v = 0.5 * (
                np.einsum("ij,ij->i", dx, dx).mean()
                + np.einsum(
                    "ij,ij->i", e.memories - e.positions, e.memories - e.positions
                ).mean()
            )
            diagnostics["lyapunov"].append(v)
            dy = e.memories - x_star
            diagnostics["w2_to_dirac"].append(
                np.einsum("ij,ij->i", dx, dx).mean()
                + np.einsum("ij,ij->i", dy, dy).mean()
            )
            if y_alpha is None:
                y_alpha = consensus_of(e)
            diagnostics["consensus_dist"].append(float(np.linalg.norm(y_alpha - x_star)))
        diagnostics["memory_energy_max"].append(float(e.memory_energies.max()))

    if record:
        snapshot(ens)

    prev_consensus = None
    realized = 0
    batched = objective.n_batches > 1
    for k in range(stop.max_steps):
        step_params = schedule.params_at(params, ens.step_index)
        batch = None
        if batched:
            batch = int(
                rng.generator(ens.step_index, CHANNEL_BATCH).integers(objective.n_batches)
            )
            # the memory-energy cache refers to the previous batch
            ens.memory_energies = objective.values(ens.memories, batch)
        step(ens, step_params, objective, rng, batch=batch, n_consensus=n_consensus)
        realized += 1
        if record:
            snapshot(ens)
        if stop.consensus_tol is not None:
            cur = consensus_of(ens)
            if prev_consensus is not None and (
                np.linalg.norm(cur - prev_consensus) < stop.consensus_tol
            ):
                prev_consensus = cur
                break
            prev_consensus = cur

    final_consensus = consensus_of(ens)
    if record:
        diagnostics = {key: np.asarray(val) for key, val in diagnostics.items()}
    return RunResult(ens, final_consensus, realized, diagnostics)
