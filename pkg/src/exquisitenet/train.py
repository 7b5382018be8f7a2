"""Training and evaluation loops with best-checkpoint selection and a
reproducibility manifest (seed, config hash, split checksums) written next
to every checkpoint."""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .data import batch_iter
from .layers import softmax_cross_entropy, softmax_cross_entropy_backward
from .optim import make_optimizer


@dataclass
class TrainResult:
    history: list          # per epoch: {"epoch", "loss", "step_losses", ["acc"]}
    best_acc: float
    best_epoch: int
    checkpoint: str        # path, or "" if no eval happened
    manifest: str

    def step_losses(self):
        out = []
        for rec in self.history:
            out.extend(rec["step_losses"])
        return out


def split_checksum(split):
    text = "".join(f"{p} {l}\n" for p, l in split.entries)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def evaluate(model, split, cfg, batch_size=50, workers=0):
    """Top-1 accuracy of eval-mode forward over the whole split."""
    correct = 0
    for images, labels in batch_iter(split, batch_size, 0, cfg, workers=workers):
        logits = model.forward(images.astype(model.dtype), train=False)
        correct += int(np.sum(np.argmax(logits, axis=1) == np.asarray(labels)))
    return correct / len(split)


def train(model, train_split, eval_split, cfg, *, epochs, batch_size=50,
          lr=0.001, optim_name="ranger", eval_every=10, out_path=None,
          seed=0, workers=0, log=None):
    """Optimize `model` on train_split; evaluate on eval_split every
    `eval_every` epochs (and at the last epoch), checkpointing whenever the
    accuracy improves. Deterministic for a fixed seed."""
    say = log if log is not None else (lambda line: None)
    optimizer = make_optimizer(optim_name, model.parameters(), lr)
    model.set_dropout_rng(np.random.default_rng(seed ^ 0x9E3779B9))
    history = []
    best_acc = -1.0
    best_epoch = 0
    manifest_path = ""
    checkpoint_path = ""
    for epoch in range(1, epochs + 1):
        step_losses = []
        shuffle_seed = seed * 100000 + epoch
        for images, labels in batch_iter(train_split, batch_size, shuffle_seed,
                                         cfg, workers=workers):
            logits = model.forward(images.astype(model.dtype), train=True)
            loss, probs = softmax_cross_entropy(logits, labels)
            model.backward(softmax_cross_entropy_backward(probs, labels))
            optimizer.step(model.gradients())
            step_losses.append(float(loss))
        record = {"epoch": epoch, "loss": float(np.mean(step_losses)),
                  "step_losses": step_losses}
        say(f"epoch={epoch} loss={record['loss']:.6f}")
        if epoch % eval_every == 0 or epoch == epochs:
            acc = evaluate(model, eval_split, cfg, batch_size, workers=workers)
            record["acc"] = acc
            say(f"epoch={epoch} acc={acc:.6f}")
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                if out_path:
                    model_mod.save(model, out_path)
                    checkpoint_path = out_path
                    manifest_path = out_path + ".manifest.json"
                    _write_manifest(manifest_path, model, train_split,
                                    eval_split, cfg, seed=seed, epoch=epoch,
                                    acc=acc, batch_size=batch_size, lr=lr,
                                    optim_name=optim_name, epochs=epochs,
                                    eval_every=eval_every)
                    say(f"checkpoint={out_path} epoch={epoch} acc={acc:.6f}")
        history.append(record)
    return TrainResult(history=history, best_acc=best_acc, best_epoch=best_epoch,
                       checkpoint=checkpoint_path, manifest=manifest_path)


def _write_manifest(path, model, train_split, eval_split, cfg, **meta):
    config_json = model.config.to_json()
    manifest = {
        "seed": meta["seed"],
        "config_hash": hashlib.sha256(config_json.encode("utf-8")).hexdigest(),
        "config": json.loads(config_json),
        "train_checksum": split_checksum(train_split),
        "eval_checksum": split_checksum(eval_split),
        "pipeline": {"resolution": cfg.resolution, "mean": cfg.mean, "std": cfg.std},
        "epoch": meta["epoch"],
        "accuracy": meta["acc"],
        "batch_size": meta["batch_size"],
        "lr": meta["lr"],
        "optimizer": meta["optim_name"],
        "epochs": meta["epochs"],
        "eval_every": meta["eval_every"],
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
