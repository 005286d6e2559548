"""
Experiment runners.

Each runner expands its config into independent cells (architecture, cap
placement, train beta, ...), runs them inline or over a process pool, and
assembles an ExperimentReport in cell order.
"""

import logging
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from . import analysis
from .attacks import AttackSpec, LinfAttackConfig, probe_many
from .config import (ADV_TRAIN_TABLE, CAP_ORDER, CAP_SWEEP, PERTURBATION_GROWTH, SENSITIVITY,
                     ZERO_GRAD, format_beta)
from .data_io import load_mnist
from .errors import CheckpointError, ConfigError
from .nn_core import (build_network, checkpoint_provenance, load_checkpoint, save_checkpoint,
                      set_cap, train)
from .reports import ExperimentReport

logger = logging.getLogger(__name__)

# Datasets visible to cell jobs; filled once per process by _init_worker.
_WORKER: Dict[str, Any] = {}


@dataclass
class CellResult:
    key: tuple
    rows: List[Tuple[str, dict]] = field(default_factory=list)
    grids: List[Tuple[str, np.ndarray]] = field(default_factory=list)
    seconds: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)


# ========== Datasets and workers ==========

def load_datasets(cfg, train_set=None, test_set=None):
    """Load whatever split was not passed in; raises DatasetError naming the path"""
    if train_set is None:
        train_set = load_mnist(cfg.data.dir, "train")
    if test_set is None:
        test_set = load_mnist(cfg.data.dir, "test")
    return train_set, test_set


def _init_worker(data_cfg, train_set, test_set, shared=None):
    _WORKER["train"] = train_set.subset(data_cfg.train_subset, data_cfg.shuffle_seed)
    _WORKER["test_full"] = test_set
    _WORKER["test"] = test_set.subset(data_cfg.subset, data_cfg.shuffle_seed)
    _WORKER.update(shared or {})


def _run_cells(cfg, job, cells, train_set, test_set, shared=None) -> List[CellResult]:
    args = [(cfg, cell) for cell in cells]
    if cfg.workers > 1 and len(cells) > 1:
        n_proc = min(cfg.workers, len(cells))
        logger.info("running %d cells on %d workers", len(cells), n_proc)
        with Pool(n_proc, initializer=_init_worker, initargs=(cfg.data, train_set, test_set, shared)) as pool:
            return pool.starmap(job, args)
    _init_worker(cfg.data, train_set, test_set, shared)
    return [job(*a) for a in args]


def _assemble(cfg, results, metadata=None):
    t = cfg.training
    notes = {"training_settings": (f"{t.epochs} epochs, Adam lr={t.lr:g}, batch {t.batch_size}, "
                                   f"seed {t.seed}; assumed for every experiment kind")}
    notes.update(metadata or {})
    report = ExperimentReport(cfg.kind, config=cfg.to_dict(), metadata=notes)
    for result in results:
        for table, row in result.rows:
            report.add_row(table, **row)
        for relpath, grid in result.grids:
            report.add_grid(relpath, grid)
        report.record_timing("/".join(str(k) for k in result.key), result.seconds)
    return report


# ========== Training with checkpoint cache ==========

def _fresh_network(cfg, dims, cap_indices, beta):
    activations = ["relu"] * (len(dims) - 2) + ["identity"]
    net = build_network(dims, activations, seed=cfg.training.seed)
    if beta is not None and cap_indices:
        net = set_cap(net, cap_indices, beta)
    return net


def _provenance(cfg, arch, label, beta, regime, n_train):
    prov = {
        "arch": arch,
        "cap_layers": label,
        "train_beta": format_beta(beta),
        "regime": regime,
        "epochs": cfg.training.epochs,
        "lr": cfg.training.lr,
        "batch_size": cfg.training.batch_size,
        "seed": cfg.training.seed,
        "n_train": n_train,
        "train_subset": cfg.data.train_subset,
    }
    if regime != "none":
        adv = cfg.adv_training
        prov.update(adv_epochs=adv.epochs, adv_epsilon=adv.epsilon, adv_step_size=adv.step_size,
                    adv_max_iter=adv.max_iter, adv_mixed=adv.mixed)
    return prov


def _cached(cfg, prov):
    if not cfg.checkpoint_dir:
        return None, None
    name = "{arch}-{cap_layers}-{train_beta}-{regime}-seed{seed}.crlu".format(**prov)
    path = Path(cfg.checkpoint_dir) / name
    if not path.is_file():
        return None, path
    try:
        net = load_checkpoint(path)
    except CheckpointError as exc:
        logger.warning("ignoring unusable checkpoint %s: %s", path, exc)
        return None, path
    try:
        stored = checkpoint_provenance(path)
    except CheckpointError:
        stored = None
    if stored != prov:
        logger.info("checkpoint %s was trained with other settings, retraining", path)
        return None, path
    logger.info("reusing %s", path)
    return net, path


def _adversary(cfg, regime):
    adv = cfg.adv_training
    if regime == "fgsm":
        return AttackSpec.fgsm(adv.epsilon)
    if regime == "pgd":
        return AttackSpec.pgd(LinfAttackConfig(adv.epsilon, adv.step_size, adv.max_iter))
    raise ConfigError(f"Unknown adversarial-training regime '{regime}'")


def train_cell_model(cfg, arch, label, cap_indices, beta, regime="none", base=None):
    """
    Clean-train (and optionally adversarially fine-tune) one cell's network,
    reusing a matching checkpoint from cfg.checkpoint_dir when present.

    An adversarial regime fine-tunes a copy of `base`, the cell's clean
    network, which is trained first when not given.
    """
    train_set = _WORKER["train"]
    prov = _provenance(cfg, arch, label, beta, regime, len(train_set))
    net, path = _cached(cfg, prov)
    if net is not None:
        return net

    t = cfg.training
    if regime == "none":
        net = _fresh_network(cfg, cfg.architectures[arch], cap_indices, beta)
        train(net, train_set, t.epochs, batch_size=t.batch_size, lr=t.lr, seed=t.seed)
    else:
        if base is None:
            base = train_cell_model(cfg, arch, label, cap_indices, beta, "none")
        net = base.copy()
        train(net, train_set, cfg.adv_training.epochs, batch_size=t.batch_size, lr=t.lr,
              seed=t.seed, adversary=_adversary(cfg, regime), mixed=cfg.adv_training.mixed)
    if path is not None:
        save_checkpoint(net, path, provenance=prov)
    return net


def _attack_in_chunks(attack, net, images, labels, chunk=analysis.EVAL_CHUNK):
    parts = [attack(net, images[s:s + chunk], labels[s:s + chunk])
             for s in analysis.attack_chunks(len(labels), chunk, attack.label)]
    return np.concatenate(parts) if parts else images.copy()


# ========== Cell jobs ==========

def _growth_cell(cfg, cell):
    arch, label, cap_indices, beta = cell
    start = time.perf_counter()
    net = train_cell_model(cfg, arch, label, cap_indices, beta)
    test = _WORKER["test"]
    if cfg.pgd_source == "uncapped":
        x_adv = _WORKER["source_adv"]
    else:
        x_adv = _attack_in_chunks(AttackSpec.pgd(cfg.pgd), net, test.images, test.labels)

    result = CellResult(key=(label, format_beta(beta)))
    for norm in analysis.NORMS:
        profile = analysis.layer_distance_profile(net, test.images, x_adv, norm)
        for idx, dist in enumerate(profile.distances, start=1):
            result.rows.append(("layerdist", dict(cap_layers=label, train_beta=format_beta(beta),
                                                  norm=norm, layer_index=idx,
                                                  mean_distance=float(dist))))
    rob = float(np.mean(net.predict(x_adv) == test.labels))
    result.rows.append(("accuracy", dict(cap_layers=label, train_beta=format_beta(beta),
                                         std_acc=analysis.evaluate(net, test), rob_acc=rob)))
    result.seconds = time.perf_counter() - start
    logger.info("growth cell %s beta=%s done in %.1fs", label, format_beta(beta), result.seconds)
    return result


def _sweep_cell(cfg, cell):
    arch, label, cap_indices, beta = cell
    start = time.perf_counter()
    net = train_cell_model(cfg, arch, label, cap_indices, beta)
    test = _WORKER["test"]
    attack = AttackSpec.pgd(cfg.pgd)

    result = CellResult(key=(arch, label, format_beta(beta)))
    for eval_beta in cfg.sweep.values():
        metrics = analysis.evaluate_under_attack(set_cap(net, cap_indices, eval_beta), test, attack)
        result.rows.append(("capsweep", dict(
            arch=arch, cap_layers=label, train_beta=format_beta(beta), eval_beta=format_beta(eval_beta),
            std_acc=metrics.standard_accuracy, rob_acc=metrics.robust_accuracy,
            success_rate=metrics.success_rate,
        )))
    result.seconds = time.perf_counter() - start
    logger.info("sweep cell %s %s beta=%s done in %.1fs", arch, label, format_beta(beta), result.seconds)
    return result


def _zero_grad_cell(cfg, cell):
    arch, label, cap_indices, beta = cell
    start = time.perf_counter()
    net = train_cell_model(cfg, arch, label, cap_indices, beta)
    test = _WORKER["test"]
    attack = AttackSpec.pgd(cfg.pgd)
    probe_cfg = cfg.probe.to_attack_config()

    result = CellResult(key=(arch, label, format_beta(beta)))
    robust = {}
    for eval_beta in cfg.sweep.values():
        capped = set_cap(net, cap_indices, eval_beta)
        probes = probe_many(capped, test.images, test.labels, probe_cfg, cfg.probe.grad_tolerance)
        summary = analysis.aggregate_zero_grad(probes)
        robust[format_beta(eval_beta)] = analysis.evaluate_under_attack(capped, test, attack).robust_accuracy
        result.rows.append(("zerograd", dict(
            arch=arch, cap_layers=label, train_beta=format_beta(beta), eval_beta=format_beta(eval_beta),
            mean_distance=summary.mean_distance, found_fraction=summary.found_fraction,
        )))
    result.extra["robust_accuracy"] = robust
    result.seconds = time.perf_counter() - start
    logger.info("zero-grad cell %s %s beta=%s done in %.1fs", arch, label, format_beta(beta),
                result.seconds)
    return result


def sensitivity_image_ids(cfg, test_full):
    """Configured image ids plus the first test image of cfg.smap_digit, in order, deduplicated"""
    ids = [int(i) for i in cfg.image_ids]
    for i in ids:
        if not 0 <= i < len(test_full):
            raise ConfigError(f"image id {i} outside the test set (size {len(test_full)})")
    if cfg.smap_digit is not None:
        matches = np.flatnonzero(test_full.labels == cfg.smap_digit)
        if matches.size:
            ids.append(int(matches[0]))
    return list(dict.fromkeys(ids))


def _sensitivity_cell(cfg, cell):
    arch, label, cap_indices, beta = cell
    start = time.perf_counter()
    net = train_cell_model(cfg, arch, label, cap_indices, beta)
    test_full = _WORKER["test_full"]
    test = _WORKER["test"]
    tag = format_beta(beta)

    result = CellResult(key=(tag,))
    for image_id in sensitivity_image_ids(cfg, test_full):
        smap = analysis.sensitivity_map(net, test_full.images[image_id], test_full.labels[image_id])
        result.rows.append(("smap", dict(train_beta=tag, image_id=str(image_id), total=smap.total)))
        result.grids.append((f"maps/{tag}/smap_{image_id}.csv", smap.map))
    totals = analysis.sensitivity_totals(net, test.images, test.labels)
    result.rows.append(("smap", dict(train_beta=tag, image_id="mean", total=float(totals.mean()))))
    result.seconds = time.perf_counter() - start
    logger.info("sensitivity cell beta=%s done in %.1fs", tag, result.seconds)
    return result


def _table_cell(cfg, cell):
    arch, label, cap_indices, beta = cell
    start = time.perf_counter()
    test = _WORKER["test"]
    attacks = {
        "fgsm_acc": AttackSpec.fgsm(cfg.fgsm_epsilon),
        "pgd_acc": AttackSpec.pgd(cfg.pgd),
        "cw_acc": AttackSpec.carlini_wagner(cfg.cw),
    }

    result = CellResult(key=(format_beta(beta),))
    base = train_cell_model(cfg, arch, label, cap_indices, beta)
    for regime in cfg.adv_training.regimes:
        net = base if regime == "none" else train_cell_model(cfg, arch, label, cap_indices, beta,
                                                             regime, base=base)
        row = dict(max_val=format_beta(beta), adv_training=regime, clean_acc=analysis.evaluate(net, test))
        for column, attack in attacks.items():
            row[column] = analysis.evaluate_under_attack(net, test, attack).robust_accuracy
            logger.debug("beta=%s regime=%s %s=%.4f", format_beta(beta), regime, column, row[column])
        result.rows.append(("table1", row))
    result.seconds = time.perf_counter() - start
    logger.info("table row beta=%s done in %.1fs", format_beta(beta), result.seconds)
    return result


# ========== Runners ==========

def _cells(cfg):
    return [(arch, label, indices, beta)
            for arch in cfg.architectures
            for label, indices in cfg.placements
            for beta in cfg.betas]


def _check_kind(cfg, *kinds):
    if cfg.kind not in kinds:
        raise ConfigError(f"Config is for '{cfg.kind}', expected {' or '.join(kinds)}")


def run_perturbation_growth(cfg, train_set=None, test_set=None):
    """Per-layer L-inf / L2 distance profiles plus clean and robust accuracy per cell"""
    _check_kind(cfg, PERTURBATION_GROWTH)
    train_set, test_set = load_datasets(cfg, train_set, test_set)
    shared = None
    source = "each cell's own network"
    if cfg.pgd_source == "uncapped":
        shared = {"source_adv": uncapped_source_examples(cfg, train_set, test_set)}
        source = "uncapped {} network, shared by every cell".format(next(iter(cfg.architectures)))
    results = _run_cells(cfg, _growth_cell, _cells(cfg), train_set, test_set, shared)
    return _assemble(cfg, results, metadata={"profile_average": "all test samples",
                                             "adversarial_source": source})


def uncapped_source_examples(cfg, train_set, test_set):
    """
    PGD examples of the evaluated test samples, crafted once against a plain
    ReLU network of the experiment's architecture.
    """
    _init_worker(cfg.data, train_set, test_set)
    arch = next(iter(cfg.architectures))
    net = train_cell_model(cfg, arch, "none", (), None)
    test = _WORKER["test"]
    logger.info("crafting %s examples on the uncapped %s network", AttackSpec.pgd(cfg.pgd).label, arch)
    return _attack_in_chunks(AttackSpec.pgd(cfg.pgd), net, test.images, test.labels)


def run_cap_sweep(cfg, train_set=None, test_set=None):
    """Accuracy, robust accuracy and success rate across evaluation caps"""
    _check_kind(cfg, CAP_SWEEP, CAP_ORDER)
    train_set, test_set = load_datasets(cfg, train_set, test_set)
    results = _run_cells(cfg, _sweep_cell, _cells(cfg), train_set, test_set)
    return _assemble(cfg, results)


def run_cap_order(cfg, train_set=None, test_set=None):
    """The cap sweep on equal-width hidden layers"""
    _check_kind(cfg, CAP_ORDER)
    return run_cap_sweep(cfg, train_set, test_set)


def run_zero_grad(cfg, train_set=None, test_set=None):
    """
    Mean distance to vanishing input gradients and the found fraction per
    (architecture, placement, train beta, eval beta), with the agreement
    between distance and PGD robust-accuracy rankings across placements.
    """
    _check_kind(cfg, ZERO_GRAD)
    train_set, test_set = load_datasets(cfg, train_set, test_set)
    results = _run_cells(cfg, _zero_grad_cell, _cells(cfg), train_set, test_set)

    agree = compared = 0
    distances = {}
    robust = {}
    for result in results:
        arch, label, beta = result.key
        for _, row in result.rows:
            point = (arch, beta, row["eval_beta"])
            distances.setdefault(point, {})[label] = row["mean_distance"]
        for eval_beta, acc in result.extra["robust_accuracy"].items():
            robust.setdefault((arch, beta, eval_beta), {})[label] = acc
    for point, by_label in distances.items():
        a, c = analysis.pairwise_rank_agreement(by_label, robust[point])
        agree += a
        compared += c
    metadata = {
        "rank_agreement": {
            "agreeing_pairs": agree,
            "compared_pairs": compared,
            "fraction": agree / compared if compared else None,
        },
        "robust_accuracy": {"/".join(k): v for k, v in sorted(robust.items())},
    }
    logger.info("zero-grad rank agreement: %d/%d pairs", agree, compared)
    return _assemble(cfg, results, metadata=metadata)


def run_sensitivity(cfg, train_set=None, test_set=None):
    """Per-image sensitivity maps and the mean total for each train beta"""
    _check_kind(cfg, SENSITIVITY)
    train_set, test_set = load_datasets(cfg, train_set, test_set)
    results = _run_cells(cfg, _sensitivity_cell, _cells(cfg), train_set, test_set)
    return _assemble(cfg, results)


def run_adv_train_table(cfg, train_set=None, test_set=None):
    """Clean / FGSM / PGD / CW accuracy for every (cap value, adversarial-training regime)"""
    _check_kind(cfg, ADV_TRAIN_TABLE)
    train_set, test_set = load_datasets(cfg, train_set, test_set)
    results = _run_cells(cfg, _table_cell, _cells(cfg), train_set, test_set)
    return _assemble(cfg, results)


RUNNERS = {
    PERTURBATION_GROWTH: run_perturbation_growth,
    CAP_SWEEP: run_cap_sweep,
    CAP_ORDER: run_cap_order,
    ZERO_GRAD: run_zero_grad,
    SENSITIVITY: run_sensitivity,
    ADV_TRAIN_TABLE: run_adv_train_table,
}


def run_experiment(cfg, train_set=None, test_set=None) -> ExperimentReport:
    return RUNNERS[cfg.kind](cfg, train_set, test_set)
