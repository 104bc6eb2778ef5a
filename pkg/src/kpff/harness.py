"""Training loop and the five-fold cross-validation harness.

All methods inside one cross-validation call share the same fold plan and
the same per-fold RNG streams, so runs differ only in the fusion stage.
Reports are pure functions of the config: rerunning a config reproduces
them byte for byte.
"""

import json
import time

import numpy as np

from .config import RunConfig, serialize_config, config_hash
from .data import Dataset, generate_synthetic, load_image_dir, make_folds, write_fold_plan
from .net import Model, OptimizerState
from .rng import stream

METHOD_TOKENS = ("none", "add", "concat", "kpff", "kpff-frozen")


def resolve_method(token, cfg: RunConfig):
    """Map a method token to (fusion, freeze_fusion, kpff_noise)."""
    if token == "kpff-frozen":
        return "kpff", True, 0.0
    if token == "kpff":
        return "kpff", cfg.freeze_fusion, cfg.kpff_noise
    if token in ("none", "add", "concat"):
        return token, False, 0.0
    raise ValueError(f"unknown method {token!r}; known: {METHOD_TOKENS}")


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data_dir:
        return load_image_dir(cfg.data_dir)
    return generate_synthetic(per_class=cfg.per_class, size=cfg.image_size, seed=cfg.seed)


def build_model(cfg: RunConfig, fusion, kpff_noise, in_channels, image_size, num_classes):
    return Model(
        seed=cfg.seed,
        in_channels=in_channels,
        image_size=image_size,
        channels=tuple(cfg.channels),
        activation=cfg.activation,
        fusion=fusion,
        num_classes=num_classes,
        dropout_p=cfg.dropout_p,
        kpff_noise=kpff_noise,
    )


def train_run(cfg: RunConfig, images, labels, train_idx, test_idx, method_token, fold):
    """Train one model on one fold split; return its history and metrics."""
    fusion, freeze, noise = resolve_method(method_token, cfg)
    model = build_model(
        cfg, fusion, noise,
        in_channels=images.shape[1], image_size=images.shape[2],
        num_classes=int(labels.max()) + 1,
    )
    params = model.params()
    frozen = set(model.fusion_param_names()) if freeze else set()
    opt = OptimizerState(cfg.optimizer, lr=cfg.lr, weight_decay=cfg.weight_decay)

    shuffle_stream = stream(cfg.seed, f"shuffle/fold{fold}")
    dropout_stream = stream(cfg.seed, f"dropout/fold{fold}")

    x_train, y_train = images[train_idx], labels[train_idx]
    x_test, y_test = images[test_idx], labels[test_idx]
    batch = min(cfg.batch_size, len(train_idx))

    loss_curve = []
    val_curve = []
    best_acc = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_stream.permutation(len(train_idx))
        epoch_losses = []
        for start in range(0, len(perm), batch):
            sel = perm[start : start + batch]
            loss, _, grads = model.forward_backward(
                x_train[sel], y_train[sel], train=True, dropout_stream=dropout_stream
            )
            opt.apply(params, grads, frozen)
            epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        if epoch % cfg.val_interval == 0 or epoch == cfg.max_epochs:
            _, acc = model.evaluate(x_test, y_test)
            val_curve.append((epoch, acc))
            best_acc = max(best_acc, acc)

    final_loss, final_acc = model.evaluate(x_test, y_test)
    return {
        "fold": fold,
        "final_acc": final_acc,
        "best_acc": best_acc,
        "final_loss": final_loss,
        "loss_curve": loss_curve,
        "val_curve": val_curve,
    }, model


def crossval(cfg: RunConfig, methods):
    """Run k-fold cross-validation for each method over shared folds."""
    for m in methods:
        resolve_method(m, cfg)  # validate early
    dataset = load_dataset(cfg)
    plan = make_folds(dataset, k=cfg.folds, seed=cfg.seed)
    images, labels = dataset.stacked()

    started = time.perf_counter()
    results = {}
    for token in methods:
        fold_results = []
        for fold in range(plan.k):
            res, _ = train_run(
                cfg, images, labels, plan.train_indices(fold), plan.folds[fold], token, fold
            )
            fold_results.append(res)
        accs = [r["final_acc"] for r in fold_results]
        results[token] = {
            "folds": fold_results,
            "mean_final_acc": float(np.mean(accs)),
            "std_final_acc": float(np.std(accs)),
            "mean_best_acc": float(np.mean([r["best_acc"] for r in fold_results])),
        }
    wall = time.perf_counter() - started

    report = {
        "config": serialize_config(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "methods": results,
    }
    return report, plan, wall


# ---------------------------------------------------------------------------
# report writers: deterministic byte-for-byte given the same config


def _fmt(x):
    return "%.17g" % x


def report_csv(report) -> str:
    lines = ["method,fold,final_acc,best_acc,final_loss"]
    for token, res in report["methods"].items():
        for r in res["folds"]:
            lines.append(
                f"{token},{r['fold']},{_fmt(r['final_acc'])},"
                f"{_fmt(r['best_acc'])},{_fmt(r['final_loss'])}"
            )
    return "\n".join(lines) + "\n"


def summary_json(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def comparison_table(report) -> str:
    lines = ["Method          mean acc    std       best-val mean"]
    for token, res in report["methods"].items():
        lines.append(
            f"{token:<15} {res['mean_final_acc']*100:7.2f}%   "
            f"{res['std_final_acc']*100:6.2f}%   {res['mean_best_acc']*100:7.2f}%"
        )
    return "\n".join(lines)


def write_report(outdir, report, plan):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.csv").write_text(report_csv(report))
    (outdir / "summary.json").write_text(summary_json(report))
    write_fold_plan(outdir / "folds.txt", plan)
