"""
Robustness diagnostics: per-layer perturbation growth, sensitivity maps,
accuracy / robust accuracy / success rate, zero-gradient aggregation.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from tqdm.auto import tqdm

from .errors import ShapeError
from .nn_core import Logit, LogitCombination, forward, input_gradient

logger = logging.getLogger(__name__)

NORMS = ("linf", "l2")
EVAL_CHUNK = 500


def attack_chunks(n, chunk=EVAL_CHUNK, desc="attack"):
    """Chunk start offsets over n samples; a tqdm bar is shown at DEBUG level"""
    return tqdm(range(0, n, chunk), desc=desc, leave=False,
                disable=not logger.isEnabledFor(logging.DEBUG))


@dataclass
class LayerDistanceProfile:
    """Mean distance between clean and adversarial outputs of every layer"""

    distances: np.ndarray
    norm: str

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if np.any(self.distances < 0):
            raise ShapeError("Layer distances must be non-negative")

    def __len__(self):
        return len(self.distances)


@dataclass
class SensitivityMap:
    """Per-pixel attack susceptibility and its sum over pixels"""

    map: np.ndarray
    total: float


@dataclass
class RobustnessMetrics:
    standard_accuracy: float
    robust_accuracy: float
    success_rate: float
    n_evaluated: int

    def to_dict(self):
        return {
            "std_acc": self.standard_accuracy,
            "rob_acc": self.robust_accuracy,
            "success_rate": self.success_rate,
            "n": self.n_evaluated,
        }


@dataclass
class ZeroGradSummary:
    mean_distance: Optional[float]
    found_fraction: float


def _norm_rows(diff, norm):
    if norm == "linf":
        return np.max(np.abs(diff), axis=1)
    return np.linalg.norm(diff, axis=1)


def layer_distance_profile(net, clean_batch, adv_batch, norm="linf"):
    """
    Mean over samples of ||a_l(x_adv) - a_l(x_clean)|| for every hidden layer l,
    followed by the logits.

    Args:
        net: Network
        clean_batch, adv_batch: equally shaped input batches
        norm: "linf" (max abs component) or "l2" (Euclidean)

    Returns:
        LayerDistanceProfile of length (number of hidden layers + 1)
    """
    norm = norm.lower()
    if norm not in NORMS:
        raise ShapeError(f"Unknown norm '{norm}', expected one of {NORMS}")
    clean = np.asarray(clean_batch, dtype=np.float64)
    adv = np.asarray(adv_batch, dtype=np.float64)
    if clean.shape != adv.shape:
        raise ShapeError(f"Clean batch {clean.shape} and adversarial batch {adv.shape} differ")

    sums = np.zeros(len(net.layers))
    for start in range(0, clean.shape[0], EVAL_CHUNK):
        stop = start + EVAL_CHUNK
        clean_post = forward(net, clean[start:stop]).post
        adv_post = forward(net, adv[start:stop]).post
        for idx, (a_clean, a_adv) in enumerate(zip(clean_post, adv_post)):
            sums[idx] += _norm_rows(a_adv - a_clean, norm).sum()
    return LayerDistanceProfile(sums / max(clean.shape[0], 1), norm)


def _image_shape(n_pixels):
    side = math.isqrt(n_pixels)
    return (side, side) if side * side == n_pixels else (1, n_pixels)


def sensitivity_map(net, x, t):
    """
    Pixel sensitivity max(0, dZ_t/dx * sum_{c != t} dZ_c/dx) on the logits.

    Args:
        net: Network
        x: one flattened image
        t: its true class

    Returns:
        SensitivityMap reshaped to the square image (28 x 28 for MNIST)
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    t = int(t)
    if not 0 <= t < net.num_classes:
        raise ShapeError(f"Class {t} out of range [0, {net.num_classes})")
    trace = forward(net, x)
    grad_t = input_gradient(net, x, Logit(t), trace=trace)
    rest = np.ones(net.num_classes)
    rest[t] = 0.0
    grad_rest = input_gradient(net, x, LogitCombination(rest), trace=trace)
    smap = np.maximum(0.0, grad_t * grad_rest).reshape(_image_shape(x.size))
    return SensitivityMap(map=smap, total=float(smap.sum()))


def sensitivity_totals(net, images, labels):
    """Sensitivity-map totals for many images, computed batch-wise"""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    totals = np.zeros(len(labels))
    onehot = np.eye(net.num_classes)
    for start in range(0, len(labels), EVAL_CHUNK):
        x = images[start:start + EVAL_CHUNK]
        y = labels[start:start + EVAL_CHUNK]
        trace = forward(net, x)
        grad_t = input_gradient(net, x, LogitCombination(onehot[y]), trace=trace)
        grad_rest = input_gradient(net, x, LogitCombination(1.0 - onehot[y]), trace=trace)
        totals[start:start + len(y)] = np.maximum(0.0, grad_t * grad_rest).sum(axis=1)
    return totals


def _predict(net, images):
    preds = [np.argmax(forward(net, images[s:s + EVAL_CHUNK]).logits, axis=1)
             for s in range(0, images.shape[0], EVAL_CHUNK)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(net, dataset):
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label"""
    if len(dataset) == 0:
        raise ShapeError("Cannot evaluate on an empty dataset")
    return float(np.mean(_predict(net, dataset.images) == dataset.labels))


def evaluate_under_attack(net, dataset, attack, chunk=EVAL_CHUNK):
    """
    Standard accuracy, robust accuracy and success rate of an attack.

    The success rate counts, among initially correct samples, those whose
    adversarial counterpart is misclassified.

    Args:
        net: Network
        dataset: ImageDataset
        attack: AttackSpec (or any callable (net, x, labels) -> x_adv)

    Returns:
        RobustnessMetrics
    """
    n = len(dataset)
    if n == 0:
        raise ShapeError("Cannot evaluate on an empty dataset")
    clean_correct = _predict(net, dataset.images) == dataset.labels
    adv_correct = np.zeros(n, dtype=bool)
    for start in attack_chunks(n, chunk, getattr(attack, "label", "attack")):
        x = dataset.images[start:start + chunk]
        y = dataset.labels[start:start + chunk]
        x_adv = attack(net, x, y)
        adv_correct[start:start + len(y)] = _predict(net, x_adv) == y
    n_correct = int(clean_correct.sum())
    flipped = int(np.sum(clean_correct & ~adv_correct))
    return RobustnessMetrics(
        standard_accuracy=n_correct / n,
        robust_accuracy=float(adv_correct.mean()),
        success_rate=flipped / n_correct if n_correct else 0.0,
        n_evaluated=n,
    )


def aggregate_zero_grad(results):
    """Mean distance over found probes and the fraction found"""
    results = list(results)
    if not results:
        return ZeroGradSummary(None, 0.0)
    distances = [r.distance for r in results if r.found]
    mean = float(np.mean(distances)) if distances else None
    return ZeroGradSummary(mean, len(distances) / len(results))


def pairwise_rank_agreement(closer_is_better, accuracy):
    """
    Fraction of pairs of configurations ordered the same way by two scores.

    A smaller zero-gradient distance and a larger robust accuracy both mean
    "more robust", so a pair agrees when dist_a < dist_b and acc_a > acc_b
    (or both reversed). Keys missing a value in either mapping are skipped.

    Args:
        closer_is_better: mapping key -> mean zero-gradient distance (or None)
        accuracy: mapping key -> robust accuracy

    Returns:
        tuple: (agreeing pairs, compared pairs)
    """
    keys = sorted(k for k in closer_is_better
                  if closer_is_better[k] is not None and k in accuracy)
    agree = compared = 0
    for a, b in itertools.combinations(keys, 2):
        d = np.sign(closer_is_better[b] - closer_is_better[a])
        r = np.sign(accuracy[a] - accuracy[b])
        if d == 0 or r == 0:
            continue
        compared += 1
        agree += int(d == r)
    return agree, compared
