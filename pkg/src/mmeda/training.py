"""Batch trainer, convergence logic and loss history for every model kind."""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError
from .data import MultiModalDataset
from .models import (
    AemfModel,
    CmfModel,
    ConvAE,
    Mmeda1Model,
    Mmeda2Model,
    MlpModel,
    aemf_forward,
    aemf_loss_terms,
    cmf_forward,
    mlp_forward,
    mmeda1_forward,
    mmeda1_loss_terms,
    mmeda2_forward,
    mmeda2_loss_terms,
)
from .nn import Module, Optimizer, make_rng

__all__ = [
    "DivergenceError",
    "DroppedRowsWarning",
    "TrainConfig",
    "TrainHistory",
    "batch_schedule",
    "inner_schedule",
    "steps_per_epoch",
    "term_names",
    "train_epoch",
    "train_epoch_mmeda2",
    "fit",
    "embed_dataset",
]

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, term: str, value: float):
        super().__init__(f"non-finite loss at epoch {epoch}, term {term!r} ({value})")
        self.epoch = epoch
        self.term = term


class DroppedRowsWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 50
    lr: float = 1e-4
    optimizer: str = "adam"
    tol: float = 1e-4
    max_epochs: int = 300
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1, got {self.max_epochs}")


@dataclass
class TrainHistory:
    term_names: list[str]
    losses: list[float] = field(default_factory=list)
    terms: list[list[float]] = field(default_factory=list)
    converged: bool = False
    steps: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(["epoch", "total", *(f"term_{t}" for t in self.term_names)]) + "\n")
        for e, (tot, row) in enumerate(zip(self.losses, self.terms), start=1):
            out.write(",".join([str(e), repr(tot), *(repr(v) for v in row)]) + "\n")
        return out.getvalue()


def batch_schedule(
    n: int, b: int, warn: bool = True, drop_last: bool = True
) -> list[tuple[int, int]]:
    """Contiguous ``[i·b, i·b+b)`` ranges; a trailing partial batch is dropped.

    With ``drop_last=False`` the partial batch is kept as a final short range.
    """
    if b < 1:
        raise ValueError(f"batch size must be at least 1, got {b}")
    if b > n:
        raise ValueError(f"batch size {b} exceeds number of rows {n}")
    full = n // b
    dropped = n - full * b
    if not drop_last:
        return [(s, min(s + b, n)) for s in range(0, n, b)]
    if dropped and warn:
        warnings.warn(
            f"dropping {dropped} trailing rows: {n} rows do not fill batches of {b}",
            DroppedRowsWarning,
            stacklevel=2,
        )
    return [(i * b, i * b + b) for i in range(full)]


def inner_schedule(n2: int, b: int) -> list[tuple[int, int]]:
    """Chunks of the transposed batch's ``n2`` rows; the last one may be short."""
    return [(j, min(j + b, n2)) for j in range(0, n2, b)]


# kinds trained on full batches only (column encoders are exactly b wide)
FIXED_WIDTH_KINDS = ("aemf", "convae", "mmeda1", "mmeda2")


def steps_per_epoch(kind: str, n: int, b: int, n2: int | None = None) -> int:
    outer = n // b if kind in FIXED_WIDTH_KINDS else math.ceil(n / b)
    if kind == "mmeda2":
        return outer * math.ceil(n2 / b)
    return outer


TERMS = {
    "cmf": ["m0", "m1"],
    "aemf": ["view0", "view1", "cat", "col0", "col1"],
    "convae": ["x0"],
    "mmeda1": ["x0", "x1"],
    "mmeda2": ["x0", "x1", "x2", "x1pp"],
}


def term_names(model: Module) -> list[str]:
    if isinstance(model, MlpModel):
        return ["ce"] if model.config.task == "classification" else ["mse"]
    return TERMS[model.kind]


# -- per-kind step generators: each yields the loss terms of one optimizer step


def _steps_cmf(model: CmfModel, ds, idx_batches, cfg) -> Iterator[dict[str, Node]]:
    views = (ds.image_matrix(), ds.m1)
    for idx in idx_batches:
        yield {
            name: ad.mse_loss(cmf_forward(model, m, idx), view[idx])
            for m, (name, view) in enumerate(zip(TERMS["cmf"], views))
        }


def _steps_aemf(model: AemfModel, ds, idx_batches, cfg):
    for idx in idx_batches:
        xa = ds.image_matrix()[idx]
        xb = ds.m1[idx]
        xcat = np.concatenate([xa, xb], axis=1)
        out = aemf_forward(model, ad.constant(xcat), ad.constant(xa.T), ad.constant(xb.T))
        yield aemf_loss_terms(out, xcat, [xa, xb])


def _steps_convae(model: ConvAE, ds, idx_batches, cfg):
    for idx in idx_batches:
        x0 = ds.m0[idx]
        _, recon = model(ad.constant(x0))
        yield {"x0": ad.mse_loss(recon, x0)}


def _steps_mmeda1(model: Mmeda1Model, ds, idx_batches, cfg):
    for idx in idx_batches:
        x0, x1 = ds.m0[idx], ds.m1[idx]
        out = mmeda1_forward(model, ad.constant(x0), ad.constant(x1))
        yield mmeda1_loss_terms(out, x0, x1)


def _steps_mmeda2(model: Mmeda2Model, ds, idx_batches, cfg):
    b = cfg.batch_size
    for idx in idx_batches:
        x0, x1 = ds.m0[idx], ds.m1[idx]
        m2 = np.ascontiguousarray(x1.T)  # n2×b
        for j0, j1 in inner_schedule(m2.shape[0], b):
            x2 = m2[j0:j1]
            block = np.ascontiguousarray(x1[:, j0:j1])
            out = mmeda2_forward(model, ad.constant(x0), ad.constant(x1), ad.constant(x2))
            yield mmeda2_loss_terms(out, x0, x1, x2, block)


def _steps_mlp(model: MlpModel, ds, idx_batches, cfg):
    feats = np.concatenate([ds.image_matrix(), ds.m1], axis=1)
    clf = model.config.task == "classification"
    sup = ds.labels if clf else ds.targets
    if sup is None:
        raise ValueError(f"MLP {model.config.task} needs {'labels' if clf else 'targets'}")
    for idx in idx_batches:
        out = mlp_forward(model, ad.constant(feats[idx]))
        if clf:
            yield {"ce": ad.cross_entropy(out, sup[idx].astype(np.int64))}
        else:
            yield {"mse": ad.mse_loss(out, sup[idx][:, None])}


_STEPS: dict[str, Callable] = {
    "cmf": _steps_cmf,
    "aemf": _steps_aemf,
    "convae": _steps_convae,
    "mmeda1": _steps_mmeda1,
    "mmeda2": _steps_mmeda2,
    "mlp": _steps_mlp,
}


def _check_compat(model: Module, ds: MultiModalDataset, cfg: TrainConfig) -> None:
    c = model.config
    kind = model.kind
    if kind in ("mmeda1", "mmeda2", "aemf") and c.batch_size != cfg.batch_size:
        raise ShapeError(
            f"{kind} column encoders take {c.batch_size} rows but training batch is {cfg.batch_size}"
        )
    if kind in ("mmeda1", "mmeda2", "convae") and tuple(c.image_shape) != ds.image_shape:
        raise ShapeError(f"model expects images {tuple(c.image_shape)}, dataset has {ds.image_shape}")
    if kind in ("mmeda1", "mmeda2") and c.n2 != ds.n2:
        raise ShapeError(f"model expects feature width {c.n2}, dataset has {ds.n2}")
    if kind == "aemf" and list(c.dims) != [int(np.prod(ds.image_shape)), ds.n2]:
        raise ShapeError(f"model expects view widths {c.dims}, dataset has "
                         f"{[int(np.prod(ds.image_shape)), ds.n2]}")
    if kind == "cmf" and (c.n_rows != ds.n or list(c.col_dims) != [int(np.prod(ds.image_shape)), ds.n2]):
        raise ShapeError(f"CMF built for {c.n_rows}×{c.col_dims}, dataset is {ds.n} rows")
    if kind == "mlp" and c.in_dim != int(np.prod(ds.image_shape)) + ds.n2:
        raise ShapeError(f"MLP expects width {c.in_dim}, dataset gives "
                         f"{int(np.prod(ds.image_shape)) + ds.n2}")


def train_epoch(
    model: Module,
    ds: MultiModalDataset,
    cfg: TrainConfig,
    optimizer: Optimizer,
    epoch: int = 1,
    rows: np.ndarray | None = None,
) -> tuple[float, list[float], int]:
    """One pass over the batch schedule; returns (mean total, mean terms, steps)."""
    order = np.arange(ds.n) if rows is None else np.asarray(rows)
    if cfg.shuffle:
        order = make_rng(cfg.seed * 100003 + epoch).permutation(order)
    sched = batch_schedule(
        len(order), cfg.batch_size, warn=epoch == 1, drop_last=model.kind in FIXED_WIDTH_KINDS
    )
    if not sched:
        raise ValueError("empty batch schedule")
    idx_batches = [order[s:e] for s, e in sched]
    names = term_names(model)
    totals: list[float] = []
    term_vals: list[list[float]] = []
    for terms in _STEPS[model.kind](model, ds, idx_batches, cfg):
        vals = [float(terms[t].value) for t in names]
        for t, v in zip(names, vals):
            if not math.isfinite(v):
                raise DivergenceError(epoch, t, v)
        total = terms[names[0]]
        for t in names[1:]:
            total = total + terms[t]
        optimizer.zero_grad()
        ad.backward(total)
        optimizer.step()
        totals.append(float(total.value))
        term_vals.append(vals)
    tv = np.array(term_vals)
    return float(np.mean(totals)), [float(v) for v in tv.mean(axis=0)], len(totals)


def train_epoch_mmeda2(model: Mmeda2Model, m0, m1, cfg: TrainConfig, optimizer: Optimizer) -> float:
    ds = MultiModalDataset(np.asarray(m0), np.asarray(m1))
    return train_epoch(model, ds, cfg, optimizer)[0]


def fit(
    model: Module,
    ds: MultiModalDataset,
    cfg: TrainConfig,
    rows: np.ndarray | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[Module, TrainHistory]:
    """Train until successive epoch losses differ by less than ``cfg.tol``."""
    _check_compat(model, ds, cfg)
    opt = Optimizer(model.parameters(), cfg.optimizer, cfg.lr)
    hist = TrainHistory(term_names(model))
    for epoch in range(1, cfg.max_epochs + 1):
        loss, terms, steps = train_epoch(model, ds, cfg, opt, epoch, rows)
        hist.losses.append(loss)
        hist.terms.append(terms)
        hist.steps += steps
        if on_epoch is not None:
            on_epoch(epoch, loss)
        if epoch > 1 and abs(hist.losses[-1] - hist.losses[-2]) < cfg.tol:
            hist.converged = True
            break
    log.info("%s: %d epochs, final loss %.6g, converged=%s",
             model.kind, hist.epochs_run, hist.losses[-1], hist.converged)
    return model, hist


def embed_dataset(model: Module, ds: MultiModalDataset) -> np.ndarray:
    """Per-entity representation for every row of ``ds``."""
    _check_inference(model, ds)
    kind = model.kind
    if kind == "cmf":
        return model.row.value.copy()
    if kind in ("mmeda1", "mmeda2"):
        return model.represent(ad.constant(ds.m0), ad.constant(ds.m1)).value.copy()
    if kind == "convae":
        return model.encode(ad.constant(ds.m0)).value.copy()
    feats = np.concatenate([ds.image_matrix(), ds.m1], axis=1)
    if kind == "aemf":
        return model.row_ae.encode(ad.constant(feats)).value.copy()
    return model.features(ad.constant(feats)).value.copy()


def _check_inference(model: Module, ds: MultiModalDataset) -> None:
    c = model.config
    if model.kind in ("mmeda1", "mmeda2", "convae") and tuple(c.image_shape) != ds.image_shape:
        raise ShapeError(f"expected images {tuple(c.image_shape)}, got {ds.image_shape}")
    if model.kind in ("mmeda1", "mmeda2") and c.n2 != ds.n2:
        raise ShapeError(f"expected feature width {c.n2}, got {ds.n2}")
    width = int(np.prod(ds.image_shape)) + ds.n2
    if model.kind == "aemf" and sum(c.dims) != width:
        raise ShapeError(f"expected feature width {sum(c.dims)}, got {width}")
    if model.kind == "mlp" and c.in_dim != width:
        raise ShapeError(f"expected feature width {c.in_dim}, got {width}")
    if model.kind == "cmf" and c.n_rows != ds.n:
        raise ShapeError(f"expected {c.n_rows} entities, got {ds.n}")
