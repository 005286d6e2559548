"""
Gradient-based adversarial attacks.

FGSM and PGD work under an L-infinity bound with inputs kept in [0, 1];
CW-L2 optimizes in tanh space with a binary search over the balancing
factor; the zero-gradient probe keeps ascending past misclassification
until the input gradient vanishes.

All attacks are untargeted and operate on whole batches; every sample's
iterate depends only on its own row, so results do not depend on batching.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConfigError
from .nn_core import AdamState, CrossEntropy, LogitMargin, adam_step, forward, input_gradient

logger = logging.getLogger(__name__)

# keeps arctanh finite at pixels that are exactly 0 or 1
_TANH_SMOOTHER = 0.999999
_C_UPPER_BOUND = 1e10


# ========== Configurations ==========

@dataclass(frozen=True)
class LinfAttackConfig:
    """
    Bound, step and budget of an L-infinity attack.

    epsilon may be 0 (identity attack) or math.inf (unbounded, used by the
    zero-gradient probe); otherwise step_size <= epsilon.
    """

    epsilon: float
    step_size: float
    max_iter: int = 10
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if 0 < self.epsilon < math.inf and self.step_size > self.epsilon:
            raise ConfigError(
                f"step_size {self.step_size} exceeds epsilon {self.epsilon}"
            )
        if int(self.max_iter) < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.random_start and not self.bounded:
            raise ConfigError("random_start needs a finite epsilon")

    @property
    def bounded(self):
        return math.isfinite(self.epsilon)

    @classmethod
    def growth_defaults(cls):
        """PGD used for the per-layer perturbation-growth experiment"""
        return cls(epsilon=20 / 256, step_size=2 / 256, max_iter=20)

    @classmethod
    def table_defaults(cls):
        """PGD used for robust accuracy and adversarial training"""
        return cls(epsilon=0.1, step_size=0.01, max_iter=10)

    @classmethod
    def probe_defaults(cls):
        return cls(epsilon=math.inf, step_size=2 / 256, max_iter=200)


@dataclass(frozen=True)
class CwConfig:
    """Carlini-Wagner L2 settings; defaults are the full-scale evaluation values"""

    max_iter: int = 10000
    lr: float = 0.01
    initial_c: float = 0.001
    binary_search_steps: int = 9
    confidence: float = 0.0
    abort_early: bool = True

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ConfigError(f"CW max_iter must be >= 1, got {self.max_iter}")
        if int(self.binary_search_steps) < 1:
            raise ConfigError("CW binary_search_steps must be >= 1")
        if not self.initial_c > 0:
            raise ConfigError(f"CW initial_c must be > 0, got {self.initial_c}")
        if not self.lr > 0:
            raise ConfigError(f"CW lr must be > 0, got {self.lr}")
        if self.confidence < 0:
            raise ConfigError(f"CW confidence must be >= 0, got {self.confidence}")


@dataclass
class ZeroGradProbeResult:
    """Outcome of one zero-gradient probe; distance is None when not found"""

    found: bool
    distance: Optional[float]
    iterations_used: int

    def __post_init__(self):
        if not self.found and self.distance is not None:
            raise ConfigError("A probe that found nothing has no distance")
        if self.found and (self.distance is None or self.distance < 0):
            raise ConfigError("A found probe needs a distance >= 0")


@dataclass
class CwResult:
    """Adversarial batch plus per-sample success flags and L2 distances"""

    x_adv: np.ndarray
    success: np.ndarray
    distances: np.ndarray


# ========== Helpers ==========

def _batch(x, labels):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] == 1 and x.shape[0] > 1:
        labels = np.full(x.shape[0], labels[0])
    return x, labels, single


def _project(x, x0, epsilon):
    """Project onto the epsilon L-inf ball around x0, then onto [0, 1]"""
    if math.isfinite(epsilon):
        x = np.clip(x, x0 - epsilon, x0 + epsilon)
    return np.clip(x, 0.0, 1.0)


def _best_other_class(logits, labels):
    masked = logits.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return np.argmax(masked, axis=1)


# ========== Attacks ==========

def fgsm(net, x, labels, epsilon):
    """
    Fast gradient sign method: clip(x + eps * sign(grad_x CE), 0, 1).
    """
    x0, labels, single = _batch(x, labels)
    grad = input_gradient(net, x0, CrossEntropy(labels))
    x_adv = np.clip(x0 + epsilon * np.sign(grad), 0.0, 1.0)
    return x_adv[0] if single else x_adv


def pgd(net, x, labels, cfg):
    """
    Projected gradient descent under an L-inf bound.

    Iterates x <- Proj(x + step * sign(grad_x CE)) for cfg.max_iter steps,
    optionally from a uniform random start inside the ball, and returns the
    final iterate.
    """
    x0, labels, single = _batch(x, labels)
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x_adv = _project(x0 + rng.uniform(-cfg.epsilon, cfg.epsilon, x0.shape), x0, cfg.epsilon)
    else:
        x_adv = x0.copy()
    for _ in range(int(cfg.max_iter)):
        grad = input_gradient(net, x_adv, CrossEntropy(labels))
        x_adv = _project(x_adv + cfg.step_size * np.sign(grad), x0, cfg.epsilon)
    return x_adv[0] if single else x_adv


def cw_l2(net, x, labels, cfg):
    """
    Untargeted Carlini-Wagner L2 attack.

    Minimizes ||x' - x||^2 + c * max(Z_label - max_{i != label} Z_i, -kappa)
    over w with x' = (tanh(w) + 1) / 2, using Adam at cfg.lr. The balancing
    factor c is searched per sample: it doubles after a failed search step
    until an upper bound is known and is bisected otherwise.

    Returns:
        CwResult; failed samples keep x unchanged with success False
    """
    x0, labels, _ = _batch(x, labels)
    n = x0.shape[0]
    rows = np.arange(n)
    w0 = np.arctanh((2.0 * x0 - 1.0) * _TANH_SMOOTHER)

    lower = np.zeros(n)
    upper = np.full(n, _C_UPPER_BOUND)
    c = np.full(n, float(cfg.initial_c))
    best_l2 = np.full(n, np.inf)
    best_adv = x0.copy()
    check_every = max(int(cfg.max_iter) // 10, 1)

    for step in range(int(cfg.binary_search_steps)):
        logger.debug("CW search step %d/%d mean c=%g", step + 1, cfg.binary_search_steps, c.mean())
        w = w0.copy()
        state = AdamState(lr=cfg.lr)
        succeeded = np.zeros(n, dtype=bool)
        prev_loss = np.inf

        for it in range(int(cfg.max_iter) + 1):
            tanh_w = np.tanh(w)
            x_adv = np.clip((tanh_w / _TANH_SMOOTHER + 1.0) / 2.0, 0.0, 1.0)
            trace = forward(net, x_adv)
            logits = trace.logits
            other = _best_other_class(logits, labels)
            margin = logits[rows, labels] - logits[rows, other]
            l2 = np.sum((x_adv - x0) ** 2, axis=1)
            loss = l2 + c * np.maximum(margin, -cfg.confidence)

            fooled = np.argmax(logits, axis=1) != labels
            succeeded |= fooled
            improved = fooled & (l2 < best_l2)
            best_l2[improved] = l2[improved]
            best_adv[improved] = x_adv[improved]

            if it == cfg.max_iter:
                break
            if cfg.abort_early and it % check_every == 0:
                total = float(loss.sum())
                if total > prev_loss * 0.9999:
                    break
                prev_loss = total

            active = (margin > -cfg.confidence).astype(np.float64)
            grad_margin = input_gradient(net, x_adv, LogitMargin(labels, other), trace=trace)
            grad_x = 2.0 * (x_adv - x0) + (c * active)[:, np.newaxis] * grad_margin
            grad_w = grad_x * (1.0 - tanh_w * tanh_w) / (2.0 * _TANH_SMOOTHER)
            adam_step(state, [w], [grad_w])

        upper = np.where(succeeded, np.minimum(upper, c), upper)
        lower = np.where(succeeded, lower, np.maximum(lower, c))
        bounded = upper < _C_UPPER_BOUND
        c = np.where(bounded, (lower + upper) / 2.0, c * 2.0)
        logger.debug("CW search step %d: %d/%d fooled", step + 1, int(succeeded.sum()), n)

    success = np.isfinite(best_l2)
    x_adv = np.where(success[:, np.newaxis], best_adv, x0)
    distances = np.linalg.norm(x_adv - x0, axis=1)
    return CwResult(x_adv=x_adv, success=success, distances=distances)


def zero_gradient_probe(net, x, labels, cfg=None, grad_tolerance=1e-12):
    """
    Keep ascending the cross-entropy until the input gradient vanishes.

    A sample is found when ||grad_x CE||_inf <= grad_tolerance; its distance is
    the Euclidean distance from the clean sample. Samples whose gradient never
    vanishes within cfg.max_iter steps are reported as not found.

    Returns:
        list of ZeroGradProbeResult (one result when x is a single sample)
    """
    cfg = cfg or LinfAttackConfig.probe_defaults()
    x0, labels, single = _batch(x, labels)
    n = x0.shape[0]
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x_cur = _project(x0 + rng.uniform(-cfg.epsilon, cfg.epsilon, x0.shape), x0, cfg.epsilon)
    else:
        x_cur = x0.copy()

    found = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    distances = np.zeros(n)
    active = np.ones(n, dtype=bool)

    for t in range(int(cfg.max_iter) + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        grad = input_gradient(net, x_cur[idx], CrossEntropy(labels[idx]))
        vanished = np.max(np.abs(grad), axis=1) <= grad_tolerance
        hit = idx[vanished]
        found[hit] = True
        iterations[hit] = t
        distances[hit] = np.linalg.norm(x_cur[hit] - x0[hit], axis=1)
        active[hit] = False
        if t == cfg.max_iter:
            iterations[idx[~vanished]] = t
            break
        moving = idx[~vanished]
        x_cur[moving] = _project(
            x_cur[moving] + cfg.step_size * np.sign(grad[~vanished]), x0[moving], cfg.epsilon
        )

    results = [
        ZeroGradProbeResult(bool(found[i]), float(distances[i]) if found[i] else None,
                            int(iterations[i]))
        for i in range(n)
    ]
    logger.debug("zero-gradient probe: %d/%d found", int(found.sum()), n)
    return results[0] if single else results


# ========== Dispatch ==========

ATTACK_KINDS = ("none", "fgsm", "pgd", "cw")


@dataclass(frozen=True)
class AttackSpec:
    """An attack and its settings; calling it maps (net, x, labels) to x_adv"""

    kind: str = "none"
    linf: Optional[LinfAttackConfig] = None
    cw: Optional[CwConfig] = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"Unknown attack '{self.kind}', expected one of {ATTACK_KINDS}")
        if self.kind in ("fgsm", "pgd") and self.linf is None:
            raise ConfigError(f"{self.kind} needs an L-inf configuration")
        if self.kind == "cw" and self.cw is None:
            raise ConfigError("cw needs a CwConfig")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def fgsm(cls, epsilon):
        return cls("fgsm", linf=LinfAttackConfig(epsilon=epsilon, step_size=epsilon or 1.0, max_iter=1))

    @classmethod
    def pgd(cls, cfg=None):
        return cls("pgd", linf=cfg or LinfAttackConfig.table_defaults())

    @classmethod
    def carlini_wagner(cls, cfg=None):
        return cls("cw", cw=cfg or CwConfig())

    @property
    def label(self):
        if self.kind in ("fgsm", "pgd"):
            text = f"{self.kind}(eps={self.linf.epsilon:g}"
            if self.kind == "pgd":
                text += f",step={self.linf.step_size:g},iters={self.linf.max_iter}"
            return text + ")"
        if self.kind == "cw":
            return (f"cw(iters={self.cw.max_iter},lr={self.cw.lr:g},"
                    f"c0={self.cw.initial_c:g},searches={self.cw.binary_search_steps})")
        return "none"

    def run(self, net, x, labels):
        if self.kind == "fgsm":
            return fgsm(net, x, labels, self.linf.epsilon)
        if self.kind == "pgd":
            return pgd(net, x, labels, self.linf)
        if self.kind == "cw":
            return cw_l2(net, x, labels, self.cw).x_adv
        return np.array(x, dtype=np.float64, copy=True)

    __call__ = run


def probe_many(net, x, labels, cfg=None, grad_tolerance=1e-12, chunk=500) -> List[ZeroGradProbeResult]:
    """Run the zero-gradient probe over a large set in chunks"""
    results = []
    for start in range(0, len(labels), chunk):
        results.extend(zero_gradient_probe(net, x[start:start + chunk], labels[start:start + chunk],
                                           cfg, grad_tolerance))
    return results
