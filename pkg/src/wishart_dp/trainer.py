"""Desk-scale private training loops on synthetic convex tasks.

Mechanisms:

* NOISE_FREE_LORA: frozen-factor low-rank training, update B <- B - eta G A^T;
* DP_LORA_FA: per-example clipping of the B-gradient plus Gaussian noise,
  budget reported by basic composition of the per-step guarantee;
* NOISY_PROJ: clip the full W-gradient, add Gaussian noise, right-multiply by
  A^T A with a fresh A every step; accounted by the exact Gaussian trade-off
  on the summed per-step mu plus a per-step capture-failure term;
* RP_GD: vector-query projected gradient descent w <- w - eta M grad.

The noise-free and DP LoRA loops share one gradient code path, so setting
sigma = 0 and clip = inf reproduces the non-private trajectory bit for bit.
Budgets never claim amplification by subsampling: with Poisson batches the
reported budget is the unamplified one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import accountants, mechanisms
from .errors import ConfigError, DomainError
from .mechanisms import MechanismInput, NoisyMechParams, SigmaConvention, Variant
from .randmat import Seed, sample_gaussian_matrix

FULL_BATCH = "full"


class TaskKind(enum.Enum):
    RIDGE = "ridge"
    LOGISTIC = "logistic"


class Mechanism(enum.Enum):
    NOISE_FREE_LORA = "noise_free_lora"
    DP_LORA_FA = "dp_lora_fa"
    NOISY_PROJ = "noisy_proj"
    RP_GD = "rp_gd"


@dataclass(eq=False)
class TrainTask:
    """Synthetic convex task; weights are (n_out x n_features) matrices.

    RIDGE is scalar-output squared error plus an L2 term; LOGISTIC is
    multinomial cross-entropy with integer labels. Per-example gradients
    carry the data term only; the (data-independent) regularizer is added to
    batch gradients after averaging.
    """

    kind: TaskKind
    n_features: int
    n_classes: int
    X: np.ndarray
    y: np.ndarray
    reg: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if not np.all(np.isfinite(self.X)):
            raise DomainError("features must be finite")
        if self.kind is TaskKind.LOGISTIC:
            self.y = np.asarray(self.y, dtype=int)
            if self.y.min() < 0 or self.y.max() >= self.n_classes:
                raise DomainError("labels must be valid class indices")
        else:
            self.y = np.asarray(self.y, dtype=float)

    @property
    def n_examples(self) -> int:
        return self.X.shape[0]

    @property
    def n_out(self) -> int:
        return self.n_classes if self.kind is TaskKind.LOGISTIC else 1

    def _logits(self, W: np.ndarray, X: np.ndarray) -> np.ndarray:
        return X @ W.T

    def loss(self, W: np.ndarray, idx: np.ndarray | None = None) -> float:
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        if X.shape[0] == 0:
            return 0.0
        reg_term = 0.5 * self.reg * float(np.sum(W * W))
        if self.kind is TaskKind.RIDGE:
            resid = X @ W[0] - y
            return 0.5 * float(np.mean(resid**2)) + reg_term
        Z = self._logits(W, X)
        Z = Z - Z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(Z).sum(axis=1))
        return float(np.mean(log_norm - Z[np.arange(X.shape[0]), y])) + reg_term

    def per_example_grad_W(self, W: np.ndarray, idx: np.ndarray | None = None) -> np.ndarray:
        """Data-term gradients, one (n_out x n_features) slice per example."""
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        if self.kind is TaskKind.RIDGE:
            resid = X @ W[0] - y
            return resid[:, None, None] * X[:, None, :]
        Z = self._logits(W, X)
        Z = Z - Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        P[np.arange(X.shape[0]), y] -= 1.0
        return P[:, :, None] * X[:, None, :]

    def grad_W(self, W: np.ndarray, idx: np.ndarray | None = None) -> np.ndarray:
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        if X.shape[0] == 0:
            return self.reg * W
        if self.kind is TaskKind.RIDGE:
            resid = X @ W[0] - y
            return (resid @ X)[None, :] / X.shape[0] + self.reg * W
        Z = self._logits(W, X)
        Z = Z - Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        P[np.arange(X.shape[0]), y] -= 1.0
        return P.T @ X / X.shape[0] + self.reg * W

    def example_loss(self, W: np.ndarray, x: np.ndarray, y) -> float:
        """Loss of a single probe example (no regularizer)."""
        z = W @ np.asarray(x, dtype=float)
        if self.kind is TaskKind.RIDGE:
            return 0.5 * float((z[0] - y) ** 2)
        z = z - z.max()
        return float(np.log(np.exp(z).sum()) - z[int(y)])

    def add_example(self, x: np.ndarray, y) -> "TrainTask":
        X = np.vstack([self.X, np.asarray(x, dtype=float)[None, :]])
        y_new = np.concatenate([self.y, [y]])
        return TrainTask(
            kind=self.kind,
            n_features=self.n_features,
            n_classes=self.n_classes,
            X=X,
            y=y_new,
            reg=self.reg,
        )

    def ridge_optimum(self) -> np.ndarray:
        if self.kind is not TaskKind.RIDGE:
            raise DomainError("ridge_optimum is only defined for ridge tasks")
        d = self.n_features
        H = self.X.T @ self.X / self.n_examples + self.reg * np.eye(d)
        return np.linalg.solve(H, self.X.T @ self.y / self.n_examples)


def make_ridge_task(
    n: int, d: int, seed: Seed, noise: float = 0.1, reg: float = 1e-3
) -> TrainTask:
    rng = seed.generator()
    X = rng.standard_normal((n, d))
    w_true = rng.standard_normal(d) / math.sqrt(d)
    y = X @ w_true + noise * rng.standard_normal(n)
    return TrainTask(kind=TaskKind.RIDGE, n_features=d, n_classes=1, X=X, y=y, reg=reg)


def make_logistic_task(n: int, d: int, n_classes: int, seed: Seed, reg: float = 0.0) -> TrainTask:
    """Standard-normal features, labels from a random ground-truth linear map."""
    rng = seed.generator()
    X = rng.standard_normal((n, d))
    W_true = rng.standard_normal((n_classes, d)) / math.sqrt(d)
    y = np.argmax(X @ W_true.T, axis=1)
    return TrainTask(kind=TaskKind.LOGISTIC, n_features=d, n_classes=n_classes, X=X, y=y, reg=reg)


# ---------------------------------------------------------------------------
# LoRA state and steps
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LoraState:
    """Frozen-down-projection adapter state; effective weights W0 + B A."""

    W0: np.ndarray
    LoraB: np.ndarray
    LoraA: np.ndarray
    step: int = 0

    @property
    def r(self) -> int:
        return self.LoraA.shape[0]

    def effective_weights(self) -> np.ndarray:
        return self.W0 + self.LoraB @ self.LoraA


def init_lora(W0: np.ndarray, r: int, seed: Seed) -> LoraState:
    """B starts at zero; A has i.i.d. N(0, 1/r) entries so E[A^T A] = I.

    A is materialized as the transpose of a (d x r) draw so that replaying the
    same seed through the noisy mechanism reconstructs the identical factor.
    """
    W0 = np.asarray(W0, dtype=float)
    n_out, d = W0.shape
    Z = sample_gaussian_matrix(d, r, 1.0 / r, seed)
    return LoraState(W0=W0.copy(), LoraB=np.zeros((n_out, r)), LoraA=Z.T, step=0)


def lora_fa_step(state: LoraState, grad_W: np.ndarray, eta: float) -> LoraState:
    """One frozen-factor step: B <- B - eta (grad_W A^T)."""
    grad_W = np.asarray(grad_W, dtype=float)
    if grad_W.shape != state.W0.shape:
        raise DomainError(f"grad_W shape {grad_W.shape} does not match weights {state.W0.shape}")
    newB = state.LoraB - eta * (grad_W @ state.LoraA.T)
    return replace(state, LoraB=newB, step=state.step + 1)


@dataclass(frozen=True)
class DpTrainConfig:
    T: int
    eta: float
    batch: int | str = FULL_BATCH
    clip: float = math.inf
    sigma: float | None = None
    eps_target: float | None = None
    delta_target: float | None = None
    mechanism: Mechanism = Mechanism.NOISE_FREE_LORA
    r: int = 8
    alpha: float | None = None
    sens_rank: int = 2
    redraw_each_step: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise DomainError(f"T must be >= 1, got {self.T}")
        if self.mechanism is Mechanism.DP_LORA_FA:
            # there sigma derives from the budget (or vice versa), never both
            if self.sigma is not None and self.eps_target is not None:
                raise ConfigError("set either sigma or (eps_target, delta_target), not both")
            if self.eps_target is not None and not math.isfinite(self.clip):
                raise ConfigError("a privacy target needs a finite clipping threshold")
        if self.eps_target is not None and self.delta_target is None:
            raise ConfigError("eps_target requires delta_target")
        if self.batch != FULL_BATCH and (not isinstance(self.batch, int) or self.batch < 1):
            raise ConfigError(f"batch must be 'full' or a positive int, got {self.batch!r}")
        if not self.clip > 0.0:
            raise DomainError(f"clip must be > 0, got {self.clip}")
        if self.r < 1:
            raise DomainError(f"r must be >= 1, got {self.r}")


def _batch_indices(task: TrainTask, cfg: DpTrainConfig, rng: np.random.Generator):
    """Poisson-subsampled indices at rate q = batch/N, or everything."""
    if cfg.batch == FULL_BATCH:
        return None, task.n_examples
    q = min(1.0, cfg.batch / task.n_examples)
    mask = rng.random(task.n_examples) < q
    return np.flatnonzero(mask), cfg.batch


def _clipped_mean_grad_B(
    task: TrainTask,
    W_eff: np.ndarray,
    A: np.ndarray,
    idx: np.ndarray | None,
    clip: float,
    divisor: int,
) -> np.ndarray:
    """Per-example B-gradients via the chain rule, clipped and averaged.

    Shared by the noise-free and DP LoRA loops so the sigma = 0, clip = inf
    configuration reduces to non-private training exactly.
    """
    gW = task.per_example_grad_W(W_eff, idx)
    if gW.shape[0] == 0:
        return np.zeros((W_eff.shape[0], A.shape[0]))
    gB = np.einsum("bnd,rd->bnr", gW, A)
    if math.isfinite(clip):
        norms = np.sqrt(np.einsum("bnr,bnr->b", gB, gB))
        factors = np.minimum(1.0, clip / np.maximum(norms, 1e-300))
        gB = gB * factors[:, None, None]
    return gB.sum(axis=0) / divisor


@dataclass(eq=False)
class Trajectory:
    """Per-step records of a training run, exportable as CSV."""

    records: list[tuple[int, float, float, float, float]]

    def final_loss(self) -> float:
        return self.records[-1][1]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,loss,grad_norm,eps_spent,delta_spent\n")
            for step, loss, gnorm, eps, delta in self.records:
                fh.write(f"{step},{loss!r},{gnorm!r},{eps!r},{delta!r}\n")


def _lora_fa_sigma(cfg: DpTrainConfig) -> tuple[float, float, float]:
    """Resolve (sigma, per-step eps, per-step delta) for the DP LoRA loop."""
    if cfg.eps_target is not None:
        sigma = mechanisms.gaussian_sigma(
            cfg.clip, cfg.eps_target, cfg.delta_target, SigmaConvention.ALGORITHM
        )
        return sigma, cfg.eps_target, cfg.delta_target
    sigma = cfg.sigma or 0.0
    if sigma > 0.0 and cfg.delta_target is not None:
        eps_step = 2.0 * cfg.clip * math.sqrt(2.0 * math.log(1.25 / cfg.delta_target)) / sigma
        return sigma, eps_step, cfg.delta_target
    return sigma, math.inf, 0.0


def dp_lora_fa(
    task: TrainTask, state: LoraState, cfg: DpTrainConfig, seed: Seed
) -> tuple[LoraState, tuple[float, float], Trajectory]:
    """Per-example clipped, noised B-gradient descent for T steps.

    The per-step mechanism is Gaussian with sensitivity 2 * clip on the summed
    clipped gradient; the returned budget is the basic T-fold composition of
    the per-step guarantee (no subsampling amplification is claimed).
    """
    if cfg.mechanism is not Mechanism.DP_LORA_FA:
        raise ConfigError(f"dp_lora_fa called with mechanism {cfg.mechanism}")
    sigma, eps_step, delta_step = _lora_fa_sigma(cfg)
    records = []
    for t in range(cfg.T):
        rng = seed.child(t).generator()
        idx, divisor = _batch_indices(task, cfg, rng)
        W_eff = state.effective_weights()
        ghat = _clipped_mean_grad_B(task, W_eff, state.LoraA, idx, cfg.clip, divisor)
        if task.reg:
            ghat = ghat + (task.reg * W_eff) @ state.LoraA.T
        if sigma > 0.0:
            noise = rng.standard_normal(ghat.shape)
            ghat = ghat + (sigma / divisor) * noise
        state = replace(state, LoraB=state.LoraB - cfg.eta * ghat, step=state.step + 1)
        eps_spent, delta_spent = accountants.compose_basic([(eps_step, delta_step)], k=t + 1)
        records.append(
            (
                state.step,
                task.loss(state.effective_weights()),
                float(np.linalg.norm(ghat)),
                eps_spent,
                delta_spent,
            )
        )
    budget = accountants.compose_basic([(eps_step, delta_step)], k=cfg.T)
    return state, budget, Trajectory(records)


def noise_free_lora(
    task: TrainTask, state: LoraState, cfg: DpTrainConfig, seed: Seed
) -> tuple[LoraState, Trajectory]:
    """Non-private LoRA-FA gradient descent (the sigma = 0 reduction)."""
    reduction = replace(
        cfg, mechanism=Mechanism.DP_LORA_FA, sigma=0.0, clip=math.inf,
        eps_target=None, delta_target=None,
    )
    state, _, traj = dp_lora_fa(task, state, reduction, seed)
    return state, traj


def noisy_proj_step(
    task: TrainTask, state: LoraState, cfg: DpTrainConfig, seed: Seed
) -> tuple[LoraState, accountants.SmallRReport]:
    """One clipped noisy-projection step applied to effective weights.

    Draws a fresh factor A each step (update = (clip(G) + sigma E) A^T A), so
    prior low-rank state is first folded into the base weights; the returned
    state has B = 0 and carries this step's factor. The report prices the step
    at sensitivity 2 * clip with the configured capture level alpha.
    """
    if cfg.mechanism is not Mechanism.NOISY_PROJ:
        raise ConfigError(f"noisy_proj_step called with mechanism {cfg.mechanism}")
    if cfg.sigma is None or not cfg.sigma > 0.0:
        raise ConfigError("noisy_proj_step requires sigma > 0")
    if not math.isfinite(cfg.clip):
        raise ConfigError("noisy_proj_step requires a finite clipping threshold")
    W_eff = state.effective_weights()
    d = task.n_features
    idx, _ = _batch_indices(task, cfg, seed.generator())
    G = task.grad_W(W_eff, idx)
    params = NoisyMechParams(
        variant=Variant.M2,
        r=cfg.r,
        entry_var=1.0 / cfg.r,
        sigma_G=cfg.sigma,
        clip_beta=cfg.clip,
    )
    mech_seed = seed.child(0)
    out = mechanisms.noisy_mech(MechanismInput(V=G.T), params, mech_seed)
    # Replay the mechanism's factor draw to record A = Z^T for this step.
    Z = mech_seed.generator().standard_normal((d, cfg.r)) * math.sqrt(1.0 / cfg.r)
    new_state = LoraState(
        W0=W_eff - cfg.eta * out.T,
        LoraB=np.zeros((W_eff.shape[0], cfg.r)),
        LoraA=Z.T,
        step=state.step + 1,
    )
    alpha = cfg.alpha if cfg.alpha is not None else min(1.0, 1.5 * cfg.r / d)
    report = accountants.account_small_r(
        eps=cfg.eps_target if cfg.eps_target is not None else 1.0,
        sens_frob=2.0 * cfg.clip,
        s=cfg.sens_rank,
        d=d,
        r=cfg.r,
        sigma=cfg.sigma,
        alpha=alpha,
    )
    return new_state, report


def noisy_proj_budget(cfg: DpTrainConfig, T: int, eps: float, d: int) -> float:
    """delta(eps) of T composed noisy-projection steps.

    Each step contributes mu_t = alpha (2 clip)^2 / sigma^2 to the exact
    Gaussian trade-off and one capture-failure probability delta_p; the total
    is T(eps; sum mu_t) + T delta_p.
    """
    if cfg.sigma is None or not cfg.sigma > 0.0:
        raise ConfigError("noisy_proj_budget requires sigma > 0")
    alpha = cfg.alpha if cfg.alpha is not None else min(1.0, 1.5 * cfg.r / d)
    mu_step = alpha * (2.0 * cfg.clip) ** 2 / (cfg.sigma**2)
    delta_p = accountants.delta_M_bound(cfg.sens_rank, alpha, cfg.r, d) if alpha < 1.0 else 0.0
    return accountants.compose_gaussian_steps([mu_step] * T, eps, delta_p)


def rp_gd(
    task: TrainTask,
    w0: np.ndarray,
    eta: float,
    T: int,
    r: int,
    redraw_each_step: bool,
    seed: Seed,
    entry_var: float | None = None,
) -> tuple[np.ndarray, Trajectory]:
    """Projected gradient descent w <- w - eta M grad on a scalar-output task."""
    if task.n_out != 1:
        raise DomainError("rp_gd is defined for scalar-output (vector-query) tasks")
    w = np.asarray(w0, dtype=float).copy()
    d = w.shape[0]
    if entry_var is None:
        entry_var = 1.0 / r
    M = None
    if not redraw_each_step:
        Z = sample_gaussian_matrix(d, r, entry_var, seed.child(0))
        M = Z @ Z.T
    records = []
    for t in range(T):
        if redraw_each_step:
            Z = sample_gaussian_matrix(d, r, entry_var, seed.child(t))
            M = Z @ Z.T
        g = task.grad_W(w[None, :])[0]
        w = w - eta * (M @ g)
        records.append((t + 1, task.loss(w[None, :]), float(np.linalg.norm(g)), math.inf, 0.0))
    return w, Trajectory(records)


@dataclass(frozen=True)
class ClipCompareResult:
    beta: float
    beta_prime: float
    zeta: float
    interval_low: float
    interval_high: float
    vacuous: bool

    def to_dict(self) -> dict:
        return {
            "kind": "clip_compare",
            "beta": self.beta,
            "beta_prime": self.beta_prime,
            "zeta": self.zeta,
            "interval": [self.interval_low, self.interval_high],
            "vacuous": self.vacuous,
        }


def clip_compare(n: int, r: int, delta_jl: float, beta: float) -> ClipCompareResult:
    """Relate the B-space and W-space clipping thresholds through the sketch distortion.

    With distortion zeta, a W-space threshold beta corresponds to a B-space
    threshold in [beta / sqrt(1 + zeta), beta / sqrt(1 - zeta)]; the simple
    convention beta' = beta is reported alongside.
    """
    if not beta > 0.0:
        raise DomainError(f"beta must be > 0, got {beta}")
    jz = accountants.jl_clip_zeta(n, r, delta_jl)
    if jz.vacuous:
        low, high = beta / math.sqrt(1.0 + jz.zeta), math.inf
    else:
        low, high = beta / math.sqrt(1.0 + jz.zeta), beta / math.sqrt(1.0 - jz.zeta)
    return ClipCompareResult(
        beta=beta,
        beta_prime=beta,
        zeta=jz.zeta,
        interval_low=low,
        interval_high=high,
        vacuous=jz.vacuous,
    )


def fit(task: TrainTask, cfg: DpTrainConfig, seed: Seed) -> np.ndarray:
    """Train from zero initial weights and return the final effective weights."""
    n_out, d = task.n_out, task.n_features
    W0 = np.zeros((n_out, d))
    if cfg.mechanism is Mechanism.RP_GD:
        w, _ = rp_gd(task, W0[0], cfg.eta, cfg.T, cfg.r, cfg.redraw_each_step, seed.child(1))
        return w[None, :]
    state = init_lora(W0, cfg.r, seed.child(0))
    if cfg.mechanism is Mechanism.NOISE_FREE_LORA:
        state, _ = noise_free_lora(task, state, cfg, seed.child(1))
        return state.effective_weights()
    if cfg.mechanism is Mechanism.DP_LORA_FA:
        state, _, _ = dp_lora_fa(task, state, cfg, seed.child(1))
        return state.effective_weights()
    if cfg.mechanism is Mechanism.NOISY_PROJ:
        for t in range(cfg.T):
            state, _ = noisy_proj_step(task, state, cfg, seed.child(1).child(t))
        return state.effective_weights()
    raise ConfigError(f"unknown mechanism {cfg.mechanism}")


# ---------------------------------------------------------------------------
# Flat key=value config files (every DpTrainConfig field nameable)
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {
    "T": int,
    "eta": float,
    "batch": None,
    "clip": float,
    "sigma": float,
    "eps_target": float,
    "delta_target": float,
    "mechanism": None,
    "r": int,
    "alpha": float,
    "sens_rank": int,
    "redraw_each_step": None,
}


def load_config(path) -> DpTrainConfig:
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.rstrip()!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key == "mechanism":
                values[key] = Mechanism(val.lower())
            elif key == "batch":
                values[key] = FULL_BATCH if val.lower() == FULL_BATCH else int(val)
            elif key == "redraw_each_step":
                values[key] = val.lower() in ("1", "true", "yes")
            else:
                caster = _CONFIG_FIELDS[key]
                values[key] = caster(val) if val.lower() != "none" else None
    if "T" not in values or "eta" not in values:
        raise ConfigError(f"{path}: config must set at least T and eta")
    return DpTrainConfig(**values)
