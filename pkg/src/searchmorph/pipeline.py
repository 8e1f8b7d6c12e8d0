"""Training, registration, evaluation and checkpoint persistence."""
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import io
from .config import RegistrationConfig, parse_config
from .data import SynthPair, stack_pairs
from .losses import LossConfig, similarity_loss, total_loss, warp, warp_labels
from .metrics import (
    dice_per_label,
    endpoint_error,
    folding_ratio,
    format_record,
    mean_magnitude,
    time_pair,
)
from .model import SearchMorph
from .optim import OptimizerState, adam_step
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

OPTIM_PREFIX = "__optim__/"
BUFFER_PREFIX = "__buffer__/"
CONFIG_KEY = "__config__"
RNG_KEY = "__rng__"
HISTORY_KEY = "__history__"


class NumericalError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: RegistrationConfig
    params: dict
    buffers: dict
    optimizer: OptimizerState = None
    rng_state: dict = None
    history: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model, optimizer=None, rng=None, history=None):
        return cls(
            config=model.cfg,
            params={k: p.data.copy() for k, p in model.named_parameters()},
            buffers={k: b.copy() for k, b in model.named_buffers()},
            optimizer=optimizer,
            rng_state=rng.bit_generator.state if rng is not None else None,
            history=list(history or []),
        )

    def build_model(self):
        model = SearchMorph(self.config)
        params = dict(model.named_parameters())
        if set(params) != set(self.params):
            missing = set(params) ^ set(self.params)
            raise io.FormatError(f"checkpoint parameters do not match the model: {sorted(missing)}")
        for name, p in params.items():
            p.data[...] = self.params[name]
        for name, buf in model.named_buffers():
            buf[...] = self.buffers[name]
        return model.eval()

    def save(self, path):
        entries = {CONFIG_KEY: io.text_to_array(self.config.to_text())}
        for name, arr in self.params.items():
            entries[name] = arr
        for name, arr in self.buffers.items():
            entries[BUFFER_PREFIX + name] = arr
        if self.optimizer is not None:
            opt = self.optimizer
            entries[OPTIM_PREFIX + "hyper"] = np.array(
                [opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step], dtype=np.float64
            )
            for name, m in opt.m.items():
                entries[f"{OPTIM_PREFIX}m/{name}"] = m
                entries[f"{OPTIM_PREFIX}v/{name}"] = opt.v[name]
        if self.rng_state is not None:
            entries[RNG_KEY] = io.text_to_array(json.dumps(self.rng_state))
        if self.history:
            entries[HISTORY_KEY] = np.asarray(self.history, dtype=np.float32)
        io.write_entries(path, entries)

    @classmethod
    def load(cls, path):
        entries = io.read_entries(path)
        if CONFIG_KEY not in entries:
            raise io.FormatError(f"{path}: checkpoint has no config entry")
        cfg = parse_config(io.array_to_text(entries.pop(CONFIG_KEY)))
        rng_state = None
        if RNG_KEY in entries:
            rng_state = json.loads(io.array_to_text(entries.pop(RNG_KEY)))
        history = entries.pop(HISTORY_KEY, np.zeros(0)).tolist()
        params, buffers, m, v = {}, {}, {}, {}
        hyper = None
        for name, arr in entries.items():
            if name.startswith(BUFFER_PREFIX):
                buffers[name[len(BUFFER_PREFIX):]] = arr
            elif name == OPTIM_PREFIX + "hyper":
                hyper = arr
            elif name.startswith(OPTIM_PREFIX + "m/"):
                m[name[len(OPTIM_PREFIX) + 2:]] = arr.copy()
            elif name.startswith(OPTIM_PREFIX + "v/"):
                v[name[len(OPTIM_PREFIX) + 2:]] = arr.copy()
            else:
                params[name] = arr
        opt = None
        if hyper is not None:
            lr, b1, b2, eps, step = (float(x) for x in hyper)
            opt = OptimizerState(lr, b1, b2, eps, int(step), m, v)
        return cls(cfg, params, buffers, opt, rng_state, history)


def _batch_tensors(pairs):
    moving, fixed = stack_pairs(pairs)
    return Tensor(moving), Tensor(fixed)


def corpus_loss(model, corpus, loss_cfg, batch_size=8):
    """Mean loss over the corpus in eval mode (no gradient)."""
    model.eval()
    total = 0.0
    with no_grad():
        for start in range(0, len(corpus), batch_size):
            chunk = corpus[start : start + batch_size]
            moving, fixed = _batch_tensors(chunk)
            field, _ = model(moving, fixed)
            total += total_loss(moving, fixed, field, loss_cfg).item() * len(chunk)
    return total / len(corpus)


def train(cfg, corpus, model=None, on_epoch=None, checkpoint_path=None):
    """Minibatch Adam on similarity + alpha * smoothness.

    Returns a :class:`Checkpoint`; its ``history`` holds the loss before
    training followed by the mean training loss of every epoch.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    model = model or SearchMorph(cfg)
    loss_cfg = LossConfig.from_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(lr=cfg.learning_rate)
    names, params = zip(*model.named_parameters())
    history = [corpus_loss(model, corpus, loss_cfg, cfg.batch_size)]
    log.info("epoch 0 loss=%.6f", history[0])
    batch_index = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(corpus))
        running = 0.0
        for start in range(0, len(corpus), cfg.batch_size):
            chunk = [corpus[i] for i in order[start : start + cfg.batch_size]]
            moving, fixed = _batch_tensors(chunk)
            field, _ = model(moving, fixed)
            loss = total_loss(moving, fixed, field, loss_cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at batch {batch_index} (epoch {epoch})")
            backward(loss)
            adam_step(opt, params, names)
            running += value * len(chunk)
            batch_index += 1
        history.append(running / len(corpus))
        log.info("epoch %d loss=%.6f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        if checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            Checkpoint.from_model(model, opt, rng, history).save(checkpoint_path)
    model.eval()
    ckpt = Checkpoint.from_model(model, opt, rng, history)
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return ckpt


def _as_model(ckpt_or_model):
    if isinstance(ckpt_or_model, Checkpoint):
        return ckpt_or_model.build_model()
    return ckpt_or_model.eval()


def _as_image(x):
    arr = np.asarray(getattr(x, "data", x), dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def register(ckpt, moving, fixed, moving_mask=None, fixed_mask=None, model=None, steps=None):
    """Register one (1, H, W) moving image onto a fixed image.

    Returns ``(warped, field, record)``: warped image (1, H, W) array, the
    full-resolution field (2, H, W) array and a metrics dict. If ``steps`` is
    a list, the half-resolution field after each iteration is appended to it.
    """
    model = model or _as_model(ckpt)
    cfg = model.cfg
    m = _as_image(moving)
    f = _as_image(fixed)
    if m.shape != f.shape:
        raise ValueError(f"moving {m.shape} and fixed {f.shape} differ in size")
    if m.shape[-2] % 4 or m.shape[-1] % 4:
        raise ValueError(f"image size {m.shape[-2:]} is not padded to a multiple of 4")
    mt, ft = Tensor(m[None]), Tensor(f[None])
    out = {}

    def run():
        with no_grad():
            field, out["steps"] = model(mt, ft)
            out["field"] = field
            out["warped"] = warp(mt, field)

    seconds = time_pair(run)
    field = out["field"].flow.data[0]
    warped = out["warped"].data[0]
    if not (np.all(np.isfinite(field)) and np.all(np.isfinite(warped))):
        raise NumericalError("registration produced a non-finite field")
    if steps is not None:
        steps.extend(s.flow.data[0].copy() for s in out["steps"])
    with no_grad():
        sim = similarity_loss(out["warped"], ft, LossConfig.from_config(cfg)).item()
    record = {
        "similarity": sim,
        "folding": folding_ratio(field),
        "seconds": seconds,
    }
    if moving_mask is not None and fixed_mask is not None:
        warped_mask = warp_labels(moving_mask, field)
        for label, score in dice_per_label(warped_mask, fixed_mask).items():
            record[f"dice_{label}"] = score
    return warped, field, record


@dataclass
class Report:
    rows: list
    aggregate: dict

    @property
    def row_count(self):
        return len(self.rows) + 1

    def table(self):
        """Per-pair rows, then ``mean(std)`` per metric."""
        keys = list(self.aggregate.keys())
        lines = ["pair " + "".join(f"{k:>20s}" for k in keys)]
        for i, row in enumerate(self.rows):
            lines.append(f"{i:4d} " + "".join(f"{row.get(k, float('nan')):20.6f}" for k in keys))
        cells = [f"{mu:.4f}({sd:.4f})" for mu, sd in self.aggregate.values()]
        lines.append("mean " + "".join(f"{c:>20s}" for c in cells))
        return "\n".join(lines)

    def records(self):
        out = [format_record({"pair": i, **row}) for i, row in enumerate(self.rows)]
        agg = {}
        for k, (mu, sd) in self.aggregate.items():
            agg[f"{k}_mean"] = mu
            agg[f"{k}_std"] = sd
        out.append(format_record({"pair": "all", **agg}))
        return out

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.table() + "\n\n")
            fh.write("\n".join(self.records()) + "\n")


def evaluate(ckpt, corpus, dump_dir=None, model=None):
    """Per-pair metrics plus mean and standard deviation across pairs."""
    if not corpus:
        raise ValueError("evaluation corpus is empty")
    model = model or _as_model(ckpt)
    rows = []
    for i, pair in enumerate(corpus):
        _, field, rec = register(None, pair.moving, pair.fixed, pair.moving_mask,
                                 pair.fixed_mask, model=model)
        row = {}
        if pair.fixed_mask is not None and pair.moving_mask is not None:
            labels = sorted(set(np.unique(pair.fixed_mask)) - {0})
            before = dice_per_label(pair.moving_mask, pair.fixed_mask, labels)
            after = [rec.pop(f"dice_{lab}") for lab in labels if f"dice_{lab}" in rec]
            row["dice"] = float(np.mean(after)) if after else 1.0
            row["dice_before"] = float(np.mean(list(before.values()))) if before else 1.0
        row.update(rec)
        if isinstance(pair, SynthPair):
            row["epe"] = endpoint_error(field, pair.target_field)
            row["epe_identity"] = mean_magnitude(pair.target_field)
            row["mean_disp"] = mean_magnitude(field)
        rows.append(row)
        if dump_dir is not None:
            os.makedirs(dump_dir, exist_ok=True)
            io.save_tnsr(os.path.join(dump_dir, f"field_{i:04d}.tnsr"), field)
    keys = [k for k in rows[0] if all(k in r for r in rows)]
    aggregate = {}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        aggregate[k] = (float(vals.mean()), float(vals.std()))
    return Report(rows, aggregate)
