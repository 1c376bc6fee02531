"""Training loop, evaluation, gradient gate, and the ablation suite.

One training run: load the dataset into memory, pick a fold, sub-split the
training indices 4:1 into fit/validation, gate the gradients in double
precision, then run AdamW with the warmup + cosine schedule. Losses are
summed over each mini-batch; the checkpoint with the best validation WAR is
kept and evaluated on the held-out test fold.
"""

import copy
import csv
import json
import time
from pathlib import Path

import numpy as np

from . import data as D
from . import tensor as T
from .checkpoint import apply_params, load_checkpoint, save_checkpoint
from .config import apply_override
from .losses import compute_metrics
from .model import IFDDModel
from .optim import AdamW, lr_schedule


class TrainingError(Exception):
    pass


# ordered variant grid for the ablation suite
ABLATION_VARIANTS = {
    "full": {},
    "even_odd": {"issm.variant": "even_odd"},
    "no_ladm": {"ladm.enabled": False},
    "neither": {"issm.variant": "even_odd", "ladm.enabled": False},
    "issm_entire": {"issm.variant": "entire_features"},
    "issm_weighting": {"issm.variant": "weighting"},
    "predictor_first": {"ladm.order": "predictor_first"},
    "range_t4": {"issm.range_l": "T/4"},
    "midpoint": {"issm.init_mode": "midpoint"},
    "lift_off": {"loss.constrained_dims": "none"},
    "lift_thwc": {"loss.constrained_dims": "thwc"},
    "frame_diff": {
        "model.frame_diff": True,
        "issm.variant": "even_odd",
        "ladm.enabled": False,
    },
}


def variant_config(cfg, name):
    out = copy.deepcopy(cfg)
    for key, val in ABLATION_VARIANTS[name].items():
        apply_override(out, key, val)
    return out


def batch_indices(order, batch_size):
    for lo in range(0, len(order), batch_size):
        yield order[lo : lo + batch_size]


def batch_loss(model, clips, labels, idx, flip_mask=None):
    """Summed decoupling loss over one mini-batch (single tape)."""
    total = None
    cls_sum = 0.0
    lift_sum = 0.0
    for pos, i in enumerate(idx):
        clip = clips[i]
        if flip_mask is not None and flip_mask[pos]:
            clip = clip[:, :, ::-1, :]
        fwd = model.forward(clip)
        loss, cls_term, lift_term = model.loss(fwd, labels[i])
        total = loss if total is None else T.add(total, loss)
        cls_sum += cls_term.item()
        lift_sum += lift_term.item()
    return total, cls_sum, lift_sum


def validation_pass(model, clips, labels, idx):
    """Single gradient-free sweep: loss components plus a MetricsReport."""
    if len(idx) == 0:
        raise TrainingError("cannot evaluate an empty split")
    preds = np.zeros(len(idx), dtype=int)
    cls_sum = 0.0
    lift_sum = 0.0
    with T.no_grad():
        for j, i in enumerate(idx):
            fwd = model.forward(clips[i])
            _, cls_term, lift_term = model.loss(fwd, labels[i])
            cls_sum += cls_term.item()
            lift_sum += lift_term.item()
            preds[j] = int(np.argmax(fwd.logits.data))
    report = compute_metrics(preds, labels[idx], model.head.n_classes)
    return cls_sum, lift_sum, report


def evaluate_split(model, clips, labels, idx):
    """Predictions over a split -> (MetricsReport, confidence rows)."""
    if len(idx) == 0:
        raise TrainingError("cannot evaluate an empty split")
    preds = np.zeros(len(idx), dtype=int)
    rows = []
    for j, i in enumerate(idx):
        pred, conf = model.predict(clips[i])
        preds[j] = pred
        rows.append([int(i), int(labels[i]), pred] + [float(c) for c in conf])
    report = compute_metrics(preds, labels[idx], model.head.n_classes)
    return report, rows


def gradient_gate(cfg, clips, labels, idx, threshold=1e-4, entries_per_param=3):
    """Finite-difference check of a double-precision model on a mini-batch.

    Zero-initialized heads sit exactly on interpolation kinks and behind
    zero final layers, where central differences are ill-defined, so the
    check runs at a deterministically jittered parameter point.
    """
    model = IFDDModel(cfg, seed=cfg["train"]["seed"], dtype=np.float64)
    jitter = np.random.default_rng([cfg["train"]["seed"], 3])
    for p in model.params().values():
        p.data += jitter.normal(0.0, 0.02, p.data.shape)

    def f():
        loss, _, _ = batch_loss(model, clips, labels, idx)
        return loss

    err = T.finite_diff_check(
        f, model.params(), step=1e-5, entries_per_param=entries_per_param,
        rng=np.random.default_rng([cfg["train"]["seed"], 4]),
    )
    if err > threshold:
        raise TrainingError(f"gradient gate failed: max relative error {err:.3e} > {threshold:g}")
    return err


def train_run(cfg, dataset_dir, out_dir, fold=None, quiet=False):
    """Train one fold end to end; writes run.json, metrics.csv, checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = cfg["train"]
    seed = int(tr["seed"])
    t_start = time.time()

    manifest, clips, labels = D.load_dataset(dataset_dir)
    if manifest["classes"] != cfg["data"]["classes"]:
        raise TrainingError(
            f"dataset has {manifest['classes']} classes, config expects {cfg['data']['classes']}"
        )
    for key in ("t0", "h0", "w0"):
        if manifest["config"][key] != cfg["data"][key]:
            raise TrainingError(
                f"dataset {key}={manifest['config'][key]} disagrees with config {cfg['data'][key]}"
            )

    fold = tr["fold"] if fold is None else fold
    folds = D.kfold_split(labels, int(tr["folds"]), manifest["master_seed"])
    if not 0 <= int(fold) < len(folds):
        raise TrainingError(f"fold {fold} outside [0, {len(folds)})")
    train_idx, test_idx = folds[int(fold)]
    fit_idx, val_idx = D.train_val_split(labels, train_idx, seed)

    dtype = np.float64 if tr["precision"] == "double" else np.float32
    if tr["grad_gate"]:
        gate_idx = np.random.default_rng([seed, 5]).choice(fit_idx, size=min(2, len(fit_idx)), replace=False)
        gate_err = gradient_gate(cfg, clips, labels, gate_idx)
    else:
        gate_err = None

    if dtype == np.float32:
        clips = [c.astype(np.float32) for c in clips]
    model = IFDDModel(cfg, seed=seed, dtype=dtype)
    opt = AdamW(model.params(), lr=tr["lr"], weight_decay=tr["weight_decay"])
    shuffle_rng = np.random.default_rng([seed, 1])
    flip_rng = np.random.default_rng([seed, 2])

    ckpt_path = out / "checkpoint.ifddckpt"
    epochs = []
    best_war = -1.0
    best_epoch = -1

    def validate(epoch, lr, train_cls, train_lift):
        nonlocal best_war, best_epoch
        val_cls, val_lift, report = validation_pass(model, clips, labels, val_idx)
        epochs.append({
            "epoch": epoch,
            "lr": lr,
            "train_cls": train_cls,
            "train_lift": train_lift,
            "train_total": train_cls + train_lift,
            "val_cls": val_cls,
            "val_lift": val_lift,
            "val_total": val_cls + val_lift,
            "val_war": report.war,
            "val_uar": report.uar,
        })
        if report.war > best_war:
            best_war = report.war
            best_epoch = epoch
            save_checkpoint(ckpt_path, cfg, model.params())
        if not quiet:
            print(f"epoch {epoch:3d}  lr {lr:.2e}  train {train_cls + train_lift:9.4f}  "
                  f"val WAR {report.war:.4f}", flush=True)

    n_epochs = int(tr["epochs"])
    if n_epochs == 0:
        validate(-1, 0.0, float("nan"), float("nan"))
    for epoch in range(n_epochs):
        lr = lr_schedule(epoch, n_epochs, int(tr["warmup_epochs"]), tr["lr"], tr["warmup_lr"])
        order = shuffle_rng.permutation(fit_idx)
        cls_sum = 0.0
        lift_sum = 0.0
        for batch in batch_indices(order, int(tr["batch_size"])):
            flip_mask = None
            if tr["augment_flip"]:
                flip_mask = flip_rng.random(len(batch)) < 0.5
            opt.zero_grad()
            loss, c, l = batch_loss(model, clips, labels, batch, flip_mask)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (cls {c:.4g}, lift {l:.4g})"
                )
            loss.backward()
            opt.step(lr)
            cls_sum += c
            lift_sum += l
        validate(epoch, lr, cls_sum / len(fit_idx), lift_sum / len(fit_idx))

    # test the best checkpoint
    _, best_params = load_checkpoint(ckpt_path)
    apply_params(model, best_params)
    test_report, conf_rows = evaluate_split(model, clips, labels, test_idx)

    record = {
        "config": cfg,
        "dataset": str(dataset_dir),
        "fold": int(fold),
        "split_sizes": {"fit": len(fit_idx), "val": len(val_idx), "test": len(test_idx)},
        "gate_max_rel_error": gate_err,
        "epochs": epochs,
        "epochs_recorded": len(epochs),
        "early_stopped": False,
        "best_epoch": best_epoch,
        "best_val_war": best_war,
        "test": test_report.to_dict(),
        "checkpoint": ckpt_path.name,
        "wall_clock_sec": time.time() - t_start,
    }
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_metrics_csv(out / "metrics.csv", [(int(fold), test_report)])
    write_confidence_csv(out / "confidence.csv", conf_rows, model.head.n_classes)
    return record


def write_metrics_csv(path, fold_reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        n_classes = len(fold_reports[0][1].per_class_recall)
        writer.writerow(["fold", "uar", "war"] + [f"recall_{c}" for c in range(n_classes)])
        for fold, report in fold_reports:
            writer.writerow([fold, f"{report.uar:.6f}", f"{report.war:.6f}"]
                            + [f"{r:.6f}" for r in report.per_class_recall])


def write_confidence_csv(path, rows, n_classes):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "label", "pred"] + [f"conf_{c}" for c in range(n_classes)])
        for row in rows:
            writer.writerow(row[:3] + [f"{v:.6f}" for v in row[3:]])


def evaluate_checkpoint(ckpt_path, dataset_dir, split, out_dir, fold=None):
    """Rebuild the checkpointed model and score one split of the dataset."""
    stored_cfg, params = load_checkpoint(ckpt_path)
    tr = stored_cfg["train"]
    dtype = np.float64 if tr["precision"] == "double" else np.float32
    model = IFDDModel(stored_cfg, seed=tr["seed"], dtype=dtype)
    apply_params(model, params)

    manifest, clips, labels = D.load_dataset(dataset_dir)
    if dtype == np.float32:
        clips = [c.astype(np.float32) for c in clips]
    fold = tr["fold"] if fold is None else int(fold)
    folds = D.kfold_split(labels, int(tr["folds"]), manifest["master_seed"])
    train_idx, test_idx = folds[int(fold)]
    fit_idx, val_idx = D.train_val_split(labels, train_idx, tr["seed"])
    idx = {"train": fit_idx, "val": val_idx, "test": test_idx, "all": np.arange(len(labels))}[split]

    report, rows = evaluate_split(model, clips, labels, idx)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", [(int(fold), report)])
    write_confidence_csv(out / "confidence.csv", rows, model.head.n_classes)
    return report


def inspect_splits(ckpt_path, dataset_dir, out_path, limit=None):
    """Dump per-clip learned splitting indices as CSV."""
    stored_cfg, params = load_checkpoint(ckpt_path)
    tr = stored_cfg["train"]
    dtype = np.float64 if tr["precision"] == "double" else np.float32
    model = IFDDModel(stored_cfg, seed=tr["seed"], dtype=dtype)
    apply_params(model, params)
    _, clips, labels = D.load_dataset(dataset_dir)
    if dtype == np.float32:
        clips = [c.astype(np.float32) for c in clips]
    n = len(clips) if limit is None else min(limit, len(clips))
    half = model.t // 2
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "label"]
                        + [f"i_s_{i}" for i in range(half)] + [f"i_d_{i}" for i in range(half)])
        for i in range(n):
            with T.no_grad():
                fwd = model.forward(clips[i])
            if fwd.i_s is None:
                row = [""] * (2 * half)  # weighting variant has no indices
            else:
                row = [f"{v:.4f}" for v in fwd.i_s] + [f"{v:.4f}" for v in fwd.i_d]
            writer.writerow([i, int(labels[i])] + row)


def run_ablation_suite(cfg, dataset_dir, out_dir, seeds, variants=None, quiet=False):
    """Train and test the variant grid; one failed variant does not abort."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(ABLATION_VARIANTS) if variants is None else list(variants)
    for name in names:
        if name not in ABLATION_VARIANTS:
            raise TrainingError(f"unknown ablation variant {name!r}")
    rows = []
    results = {}
    for name in names:
        scores = []
        for seed in seeds:
            vcfg = variant_config(cfg, name)
            apply_override(vcfg, "train.seed", int(seed))
            run_dir = out / f"{name}_seed{seed}"
            try:
                record = train_run(vcfg, dataset_dir, run_dir, quiet=quiet)
                uar, war = record["test"]["uar"], record["test"]["war"]
                rows.append([name, seed, f"{uar:.6f}", f"{war:.6f}", "ok"])
                scores.append((uar, war))
            except Exception as e:  # noqa: BLE001 - suite must survive one bad variant
                rows.append([name, seed, "", "", f"error: {e}"])
            if not quiet:
                print(f"[ablate] {name} seed {seed}: {rows[-1][4]}", flush=True)
        if scores:
            arr = np.array(scores)
            results[name] = {
                "uar_mean": float(arr[:, 0].mean()), "uar_std": float(arr[:, 0].std()),
                "war_mean": float(arr[:, 1].mean()), "war_std": float(arr[:, 1].std()),
                "seeds": len(scores),
            }
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "uar", "war", "status"])
        writer.writerows(rows)
        writer.writerow([])
        writer.writerow(["variant", "seeds", "uar_mean", "uar_std", "war_mean", "war_std"])
        for name, agg in results.items():
            writer.writerow([name, agg["seeds"], f"{agg['uar_mean']:.6f}", f"{agg['uar_std']:.6f}",
                             f"{agg['war_mean']:.6f}", f"{agg['war_std']:.6f}"])
    return results
