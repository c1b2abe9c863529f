"""Model zoo: autoencoders, CMF, AE-based MF, MMEDA-I/II and the MLP baseline.

Every model is built from a config dataclass plus a seed, so a model is fully
described by ``(kind, config)`` and its parameter tensors; see
:func:`descriptor` and :func:`build_model`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError
from .nn import Conv2d, Linear, Module, make_rng

__all__ = [
    "FeedForward",
    "VanillaAE",
    "ConvAE",
    "ConvAEConfig",
    "CmfConfig",
    "CmfModel",
    "AemfConfig",
    "AemfModel",
    "AemfOutput",
    "Mmeda1Config",
    "Mmeda1Model",
    "Mmeda1Output",
    "Mmeda2Config",
    "Mmeda2Model",
    "Mmeda2Output",
    "MlpConfig",
    "MlpModel",
    "vanilla_ae_forward",
    "conv_ae_forward",
    "cmf_forward",
    "aemf_forward",
    "aemf_loss_terms",
    "mmeda1_forward",
    "mmeda1_loss_terms",
    "mmeda1_loss",
    "mmeda2_forward",
    "mmeda2_loss_terms",
    "mmeda2_loss",
    "mlp_forward",
    "embed",
    "descriptor",
    "build_model",
    "MODEL_KINDS",
]


class FeedForward(Module):
    """Linear stack ``widths[0] → … → widths[-1]``; ReLU between layers, linear output."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator):
        if len(widths) < 2:
            raise ValueError(f"need at least input and output widths, got {list(widths)}")
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def __call__(self, x: Node) -> Node:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


class VanillaAE(Module):
    def __init__(
        self, in_dim: int, embed_dim: int, rng: np.random.Generator, hidden: Sequence[int] = ()
    ):
        widths = [in_dim, *hidden, embed_dim]
        self.encoder = FeedForward(widths, rng)
        self.decoder = FeedForward(widths[::-1], rng)

    @property
    def in_dim(self) -> int:
        return self.encoder.in_features

    @property
    def embed_dim(self) -> int:
        return self.encoder.out_features

    def encode(self, x: Node) -> Node:
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"autoencoder expects N×{self.in_dim} input, got {x.shape}")
        return self.encoder(x)

    def decode(self, z: Node) -> Node:
        return self.decoder(z)

    def __call__(self, x: Node) -> tuple[Node, Node]:
        z = self.encode(x)
        return z, self.decode(z)


def vanilla_ae_forward(ae: VanillaAE, x: Node) -> tuple[Node, Node]:
    return ae(x)


# -- convolutional autoencoder ----------------------------------------------

MIN_IMAGE_EXTENT = 4


@dataclass
class ConvAEConfig:
    image_shape: tuple[int, int, int]
    embed_dim: int = 200
    channels: tuple[int, int] = (8, 16)
    kernel: int = 3


class ConvAE(Module):
    """Two conv+ReLU+2×2-pool stages, two linear layers down to the embedding.

    The decoder mirrors it: two linear layers, unflatten, then twice a
    nearest-neighbour upsample followed by a 3×3 convolution. Upsampling
    targets the exact pre-pool extents, so odd sizes round-trip too.
    """

    kind = "convae"

    def __init__(self, config: ConvAEConfig, rng: np.random.Generator):
        c, h, w = (int(v) for v in config.image_shape)
        if h < MIN_IMAGE_EXTENT or w < MIN_IMAGE_EXTENT:
            raise ShapeError(
                f"image {h}x{w} too small for two 2x2 pooling stages; "
                f"minimal extent is {MIN_IMAGE_EXTENT}"
            )
        self.config = config
        c1, c2 = config.channels
        k = config.kernel
        pad = k // 2
        d = config.embed_dim
        self._h1, self._w1 = h // 2, w // 2
        self._h2, self._w2 = self._h1 // 2, self._w1 // 2
        flat = c2 * self._h2 * self._w2
        self.conv1 = Conv2d(c, c1, k, rng, padding=pad)
        self.conv2 = Conv2d(c1, c2, k, rng, padding=pad)
        self.fc1 = Linear(flat, 4 * d, rng)
        self.fc2 = Linear(4 * d, d, rng)
        self.dfc1 = Linear(d, 4 * d, rng)
        self.dfc2 = Linear(4 * d, flat, rng)
        self.dconv1 = Conv2d(c2, c1, k, rng, padding=pad)
        self.dconv2 = Conv2d(c1, c, k, rng, padding=pad)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.config.image_shape)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def encode(self, x: Node) -> Node:
        if x.value.ndim != 4 or x.shape[1:] != self.image_shape:
            raise ShapeError(f"conv autoencoder expects N×{self.image_shape} input, got {x.shape}")
        n = x.shape[0]
        h = ad.maxpool2d(ad.relu(self.conv1(x)), 2)
        h = ad.maxpool2d(ad.relu(self.conv2(h)), 2)
        h = ad.reshape(h, (n, h.value.size // n))
        return self.fc2(ad.relu(self.fc1(h)))

    def decode(self, z: Node) -> Node:
        n = z.shape[0]
        c2 = self.config.channels[1]
        _, hh, ww = self.image_shape
        h = ad.relu(self.dfc2(ad.relu(self.dfc1(z))))
        h = ad.reshape(h, (n, c2, self._h2, self._w2))
        h = ad.relu(self.dconv1(ad.upsample_nearest(h, self._h1, self._w1)))
        return self.dconv2(ad.upsample_nearest(h, hh, ww))

    def __call__(self, x: Node) -> tuple[Node, Node]:
        z = self.encode(x)
        return z, self.decode(z)


def conv_ae_forward(ae: ConvAE, x: Node) -> tuple[Node, Node]:
    return ae(x)


# -- collective matrix factorisation ----------------------------------------


@dataclass
class CmfConfig:
    n_rows: int
    col_dims: list[int]
    embed_dim: int = 50
    links: list[str] | None = None

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embedding dimension must be at least 1")
        if self.links is None:
            self.links = ["identity"] * len(self.col_dims)
        if len(self.links) != len(self.col_dims):
            raise ValueError("one link function per matrix required")
        for link in self.links:
            if link not in ("identity", "sigmoid"):
                raise ValueError(f"unknown link {link!r}")


class CmfModel(Module):
    """Shared row factor, one column factor per matrix: ``X_m ≈ f_m(U_row U_mᵀ)``."""

    kind = "cmf"

    def __init__(self, config: CmfConfig, rng: np.random.Generator):
        self.config = config
        d = config.embed_dim
        scale = 1.0 / np.sqrt(d)
        self.row = ad.parameter(rng.normal(0.0, scale, (config.n_rows, d)))
        self.cols = [ad.parameter(rng.normal(0.0, scale, (n, d))) for n in config.col_dims]

    @property
    def links(self) -> list[str]:
        return self.config.links


def cmf_forward(model: CmfModel, m: int, rows=None) -> Node:
    """Reconstruction of matrix ``m``, optionally restricted to the given row indices."""
    if not 0 <= m < len(model.cols):
        raise IndexError(f"matrix index {m} out of range for {len(model.cols)} matrices")
    u = model.row if rows is None else ad.take_rows(model.row, rows)
    return ad.activation(ad.matmul(u, ad.transpose2d(model.cols[m])), model.links[m])


# -- autoencoder-based matrix factorisation ----------------------------------


@dataclass
class AemfConfig:
    dims: list[int]
    batch_size: int = 50
    embed_dim: int = 50
    hidden: list[int] = field(default_factory=list)


@dataclass
class AemfOutput:
    row: Node
    cols: list[Node]
    recons: list[Node]
    recon_cat: Node
    col_recons: list[Node]


class AemfModel(Module):
    """Row AE over the concatenated views; one column AE per view's transpose."""

    kind = "aemf"

    def __init__(self, config: AemfConfig, rng: np.random.Generator):
        self.config = config
        d = config.embed_dim
        self.row_ae = VanillaAE(sum(config.dims), d, rng, config.hidden)
        self.col_aes = [VanillaAE(config.batch_size, d, rng, config.hidden) for _ in config.dims]


def aemf_forward(model: AemfModel, xcat: Node, *transposes: Node) -> AemfOutput:
    dims = model.config.dims
    if len(transposes) != len(dims):
        raise ShapeError(f"expected {len(dims)} transposed views, got {len(transposes)}")
    if xcat.value.ndim != 2 or xcat.shape[1] != sum(dims):
        raise ShapeError(f"concatenated input must be N×{sum(dims)}, got {xcat.shape}")
    n = xcat.shape[0]
    for i, (t, w) in enumerate(zip(transposes, dims)):
        if t.shape != (w, n):
            raise ShapeError(f"transposed view {i} must be {w}×{n}, got {t.shape}")
    row, recon_cat = model.row_ae(xcat)
    col_pairs = [ae(t) for ae, t in zip(model.col_aes, transposes)]
    cols = [c for c, _ in col_pairs]
    recons = [ad.matmul(row, ad.transpose2d(c)) for c in cols]
    return AemfOutput(row, cols, recons, recon_cat, [r for _, r in col_pairs])


def aemf_loss_terms(out: AemfOutput, xcat: np.ndarray, views: Sequence[np.ndarray]) -> dict[str, Node]:
    terms = {f"view{i}": ad.mse_loss(r, v) for i, (r, v) in enumerate(zip(out.recons, views))}
    terms["cat"] = ad.mse_loss(out.recon_cat, xcat)
    for i, (r, v) in enumerate(zip(out.col_recons, views)):
        terms[f"col{i}"] = ad.mse_loss(r, np.asarray(v).T)
    return terms


# -- MMEDA-I -----------------------------------------------------------------


@dataclass
class Mmeda1Config:
    image_shape: tuple[int, int, int]
    n2: int
    batch_size: int = 50
    embed_dim: int = 50
    channels: tuple[int, int] = (8, 16)
    hidden: list[int] = field(default_factory=list)


@dataclass
class Mmeda1Output:
    rep: Node
    x0p: Node
    x1p: Node


def _check_pair(x0: Node, x1: Node, image_shape, n2: int) -> None:
    if x0.value.ndim != 4 or x0.shape[1:] != tuple(image_shape):
        raise ShapeError(f"X0 must be b×{tuple(image_shape)}, got {x0.shape}")
    if x1.value.ndim != 2 or x1.shape[1] != n2:
        raise ShapeError(f"X1 must be b×{n2}, got {x1.shape}")
    if x0.shape[0] != x1.shape[0]:
        raise ShapeError(f"X0 has {x0.shape[0]} rows but X1 has {x1.shape[0]}")


class Mmeda1Model(Module):
    """Conv AE for the image view, row/column encoders for the matrix view.

    The fused representation drives both reconstructions: the conv decoder
    and the product with the column embeddings.
    """

    kind = "mmeda1"

    def __init__(self, config: Mmeda1Config, rng: np.random.Generator | None = None, **parts):
        self.config = config
        if parts:
            self.conv = parts["conv"]
            self.row_enc = parts["row_enc"]
            self.col_enc = parts["col_enc"]
            self.fusion = parts["fusion"]
            return
        d = config.embed_dim
        hid = list(config.hidden)
        self.conv = ConvAE(ConvAEConfig(tuple(config.image_shape), d, tuple(config.channels)), rng)
        self.row_enc = FeedForward([config.n2, *hid, d], rng)
        self.col_enc = FeedForward([config.batch_size, *hid, d], rng)
        self.fusion = FeedForward([2 * d, d, d], rng)

    def represent(self, x0: Node, x1: Node) -> Node:
        _check_pair(x0, x1, self.config.image_shape, self.config.n2)
        return self.fusion(ad.concat(self.conv.encode(x0), self.row_enc(x1)))


def mmeda1_forward(model: Mmeda1Model, x0: Node, x1: Node) -> Mmeda1Output:
    rep = model.represent(x0, x1)
    if x1.shape[0] != model.config.batch_size:
        raise ShapeError(
            f"column encoder takes batches of {model.config.batch_size} rows, got {x1.shape[0]}"
        )
    col = model.col_enc(ad.transpose2d(x1))
    x1p = ad.matmul(rep, ad.transpose2d(col))
    x0p = model.conv.decode(rep)
    return Mmeda1Output(rep, x0p, x1p)


def mmeda1_loss_terms(out: Mmeda1Output, x0: np.ndarray, x1: np.ndarray) -> dict[str, Node]:
    return {"x0": ad.mse_loss(out.x0p, x0), "x1": ad.mse_loss(out.x1p, x1)}


def mmeda1_loss(out: Mmeda1Output, x0: np.ndarray, x1: np.ndarray) -> Node:
    t = mmeda1_loss_terms(out, x0, x1)
    return t["x0"] + t["x1"]


# -- MMEDA-II ----------------------------------------------------------------


@dataclass
class Mmeda2Config:
    image_shape: tuple[int, int, int]
    n2: int
    batch_size: int = 50
    embed_dim: int = 50
    channels: tuple[int, int] = (8, 16)
    hidden: list[int] = field(default_factory=list)
    # "own": AE0 decodes its own embedding; "fused": it decodes the fused rep
    x0_source: str = "own"

    def __post_init__(self):
        if self.x0_source not in ("own", "fused"):
            raise ValueError(f"x0_source must be 'own' or 'fused', got {self.x0_source!r}")


@dataclass
class Mmeda2Output:
    rep: Node
    x0p: Node
    x1p: Node
    x2p: Node
    x1pp: Node


class Mmeda2Model(Module):
    kind = "mmeda2"

    def __init__(self, config: Mmeda2Config, rng: np.random.Generator):
        self.config = config
        d = config.embed_dim
        hid = list(config.hidden)
        self.ae0 = ConvAE(ConvAEConfig(tuple(config.image_shape), d, tuple(config.channels)), rng)
        self.ae1 = VanillaAE(config.n2, d, rng, hid)
        self.ae2 = VanillaAE(config.batch_size, d, rng, hid)
        self.fusion = FeedForward([2 * d, d, d], rng)

    def represent(self, x0: Node, x1: Node) -> Node:
        _check_pair(x0, x1, self.config.image_shape, self.config.n2)
        return self.fusion(ad.concat(self.ae0.encode(x0), self.ae1.encode(x1)))

    def as_mmeda1(self) -> Mmeda1Model:
        """MMEDA-I view sharing this model's encoders, fusion and conv decoder."""
        cfg = self.config
        m1cfg = Mmeda1Config(
            tuple(cfg.image_shape), cfg.n2, cfg.batch_size, cfg.embed_dim, tuple(cfg.channels),
            list(cfg.hidden),
        )
        return Mmeda1Model(
            m1cfg, conv=self.ae0, row_enc=self.ae1.encoder, col_enc=self.ae2.encoder,
            fusion=self.fusion,
        )


def mmeda2_forward(model: Mmeda2Model, x0: Node, x1: Node, x2: Node) -> Mmeda2Output:
    cfg = model.config
    _check_pair(x0, x1, cfg.image_shape, cfg.n2)
    b = x1.shape[0]
    if b != cfg.batch_size:
        raise ShapeError(f"X1 must have {cfg.batch_size} rows (AE2 width), got {b}")
    if x2.value.ndim != 2 or x2.shape[1] != b or x2.shape[0] > cfg.n2:
        raise ShapeError(f"X2 must be c×{b} with c ≤ {cfg.n2}, got {x2.shape}")
    e0 = model.ae0.encode(x0)
    e1, x1p = model.ae1(x1)
    e2, x2p = model.ae2(x2)
    rep = model.fusion(ad.concat(e0, e1))
    x0p = model.ae0.decode(e0 if cfg.x0_source == "own" else rep)
    x1pp = ad.matmul(rep, ad.transpose2d(e2))
    return Mmeda2Output(rep, x0p, x1p, x2p, x1pp)


def mmeda2_loss_terms(
    out: Mmeda2Output, x0: np.ndarray, x1: np.ndarray, x2: np.ndarray, x1_block: np.ndarray
) -> dict[str, Node]:
    """The four reconstruction terms; ``x1_block`` is the X1 column block matching X1''."""
    return {
        "x0": ad.mse_loss(out.x0p, x0),
        "x1": ad.mse_loss(out.x1p, x1),
        "x2": ad.mse_loss(out.x2p, x2),
        "x1pp": ad.mse_loss(out.x1pp, x1_block),
    }


def mmeda2_loss(out: Mmeda2Output, x0, x1, x2, x1_block) -> Node:
    t = mmeda2_loss_terms(out, x0, x1, x2, x1_block)
    return t["x0"] + t["x1"] + t["x2"] + t["x1pp"]


# -- supervised MLP baseline -------------------------------------------------


@dataclass
class MlpConfig:
    in_dim: int
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    task: str = "classification"

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"task must be classification or regression, got {self.task!r}")


class MlpModel(Module):
    kind = "mlp"

    def __init__(self, config: MlpConfig, rng: np.random.Generator):
        self.config = config
        self.body = FeedForward([config.in_dim, *config.hidden], rng)
        self.head = Linear(config.hidden[-1], 2 if config.task == "classification" else 1, rng)

    def features(self, x: Node) -> Node:
        if x.value.ndim != 2 or x.shape[1] != self.config.in_dim:
            raise ShapeError(f"MLP expects N×{self.config.in_dim} input, got {x.shape}")
        return ad.relu(self.body(x))


def mlp_forward(model: MlpModel, x: Node) -> Node:
    """Class logits (N×2) or scalar predictions (N×1)."""
    return model.head(model.features(x))


# -- representations and descriptors -----------------------------------------


def embed(model: Mmeda1Model | Mmeda2Model, x0, x1) -> np.ndarray:
    """Fused representation for every row of ``(x0, x1)``."""
    x0n = x0 if isinstance(x0, Node) else ad.constant(x0)
    x1n = x1 if isinstance(x1, Node) else ad.constant(x1)
    return model.represent(x0n, x1n).value.copy()


MODEL_KINDS = {
    "cmf": (CmfModel, CmfConfig),
    "aemf": (AemfModel, AemfConfig),
    "convae": (ConvAE, ConvAEConfig),
    "mmeda1": (Mmeda1Model, Mmeda1Config),
    "mmeda2": (Mmeda2Model, Mmeda2Config),
    "mlp": (MlpModel, MlpConfig),
}


def descriptor(model: Module) -> dict:
    return {"kind": model.kind, "config": asdict(model.config)}


def build_model(desc: dict, seed: int = 0) -> Module:
    kind = desc["kind"]
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cls, cfg_cls = MODEL_KINDS[kind]
    raw = dict(desc["config"])
    for key in ("image_shape", "channels"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return cls(cfg_cls(**raw), make_rng(seed))
