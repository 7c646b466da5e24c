"""Multi-head attention GCN for skeleton sequences.

Pipeline: node embedding -> [sum_k A^k U^T W^k, ReLU] x depth -> flatten ->
dense + ReLU -> classifier. All weight tensors except the classifier and the
attention matrices are LatentLayers and pass through the band-stop gate.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .bandstop import BandStopConfig, LatentLayer, gated, hard_export

CHECKPOINT_VERSION = 1


@dataclass
class GcnConfig:
    n: int
    s_raw: int
    classes: int
    adjacency_init: np.ndarray = field(repr=False, default=None)
    s_emb: int = 16
    heads: int = 8
    filters: int = 32
    dense_dim: int = 32
    depth: int = 1
    # multiply each layer's weights by 1/sqrt(fan_in) inside the forward pass
    fan_in_scaling: bool = True
    attention_noise: float = 0.01

    def __post_init__(self):
        for name in ("n", "s_raw", "classes", "s_emb", "heads", "filters", "dense_dim", "depth"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"GcnConfig.{name} must be positive")
        if self.adjacency_init is None:
            self.adjacency_init = np.full((self.n, self.n), 1.0 / self.n)
        adj = np.asarray(self.adjacency_init, dtype=np.float64)
        if adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency_init must be {self.n}x{self.n}, got {adj.shape}")
        if not np.allclose(adj.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("adjacency_init rows must sum to 1")
        self.adjacency_init = adj

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adjacency_init"] = self.adjacency_init.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GcnConfig":
        d = dict(d)
        d["adjacency_init"] = np.asarray(d["adjacency_init"], dtype=np.float64)
        return cls(**d)


class GcnModel:
    """Parameters of the GCN.

    ``gate`` selects the band-stop parametrization (PMP); with ``gate=False``
    latent tensors are used as plain weights, optionally multiplied by a
    frozen 0/1 mask (magnitude-pruning baseline).
    """

    def __init__(self, config: GcnConfig, band: BandStopConfig, embed, attention, conv,
                 dense, classifier, gate: bool = True):
        self.config = config
        self.band = band
        self.gate = gate
        self.embed = LatentLayer(embed, band, "embed")
        self.attention = [ad.parameter(a, f"attention{i}") for i, a in enumerate(attention)]
        self.conv = [LatentLayer(c, band, f"conv{i}") for i, c in enumerate(conv)]
        self.dense = LatentLayer(dense, band, "dense")
        self.classifier = ad.parameter(classifier, "classifier")
        self.masks: dict[str, np.ndarray] | None = None

    # -- structure ---------------------------------------------------------
    @property
    def latent_layers(self) -> list[LatentLayer]:
        return [self.embed, *self.conv, self.dense]

    @property
    def parameters(self) -> list[ad.Tensor]:
        return [l.latent for l in self.latent_layers] + self.attention + [self.classifier]

    def set_band(self, band: BandStopConfig) -> None:
        self.band = band
        for layer in self.latent_layers:
            layer.config = band

    def copy(self) -> "GcnModel":
        m = GcnModel(self.config, self.band, self.embed.latent.numpy(),
                     [a.numpy() for a in self.attention], [c.latent.numpy() for c in self.conv],
                     self.dense.latent.numpy(), self.classifier.numpy(), self.gate)
        if self.masks is not None:
            m.masks = {k: v.copy() for k, v in self.masks.items()}
        return m

    # -- weights -----------------------------------------------------------
    def layer_weights(self, layer: LatentLayer) -> ad.Tensor:
        if self.gate:
            w = gated(layer.latent, layer.config)
        else:
            w = layer.latent
        if self.masks is not None and layer.name in self.masks:
            w = ad.mul(w, self.masks[layer.name])
        return w

    def training_weights(self) -> dict[str, ad.Tensor]:
        return {l.name: self.layer_weights(l) for l in self.latent_layers}

    def exported_weights(self) -> dict[str, np.ndarray]:
        """Inference weights: hard band-stop export (gated) or masked plain weights."""
        out = {}
        for l in self.latent_layers:
            if self.gate:
                out[l.name] = hard_export(l)
            else:
                w = l.latent.numpy()
                if self.masks is not None and l.name in self.masks:
                    w = w * self.masks[l.name]
                out[l.name] = w
        return out


def init_model(config: GcnConfig, band: BandStopConfig | None = None, seed: int = 0,
               init_range: float = 0.5, gate: bool = True, sampler=None) -> GcnModel:
    """Fresh parameters; attention = adjacency + N(0, noise^2).

    Latents are uniform in [-init_range, init_range] unless ``sampler(n, rng)``
    is given, in which case entries are drawn from it.
    """
    band = band or BandStopConfig()
    rng = np.random.default_rng(seed)
    c = config

    def u(*shape):
        if sampler is not None:
            return np.asarray(sampler(int(np.prod(shape)), rng)).reshape(shape)
        r = init_range if c.fan_in_scaling else init_range / math.sqrt(shape[0])
        return rng.uniform(-r, r, size=shape)

    embed = u(c.s_raw, c.s_emb)
    attention, conv = [], []
    c_in = c.s_emb
    for _ in range(c.depth):
        heads = [c.adjacency_init + c.attention_noise * rng.standard_normal((c.n, c.n))
                 for _ in range(c.heads)]
        attention.append(np.concatenate(heads, axis=0))
        conv.append(u(c.heads * c_in, c.filters))
        c_in = c.filters
    dense = u(c.n * c.filters, c.dense_dim)
    classifier = rng.uniform(-1, 1, size=(c.dense_dim, c.classes)) / math.sqrt(c.dense_dim)
    return GcnModel(c, band, embed, attention, conv, dense, classifier, gate)


# ----------------------------------------------------------------- operations

def graph_conv(attn: Sequence, u, filters: Sequence, activation=ad.relu) -> ad.Tensor:
    """f(sum_k A^k U^T W^k) for one graph; ``u`` is s x n, A^k n x n, W^k s x C."""
    if len(attn) != len(filters) or not attn:
        raise ad.ShapeError("graph_conv needs matching, non-empty lists of attentions and filters")
    u = ad.as_tensor(u)
    ut = ad.transpose(u)
    total = None
    for a, w in zip(attn, filters):
        a, w = ad.as_tensor(a), ad.as_tensor(w)
        if a.shape != (ut.shape[0], ut.shape[0]):
            raise ad.ShapeError(f"attention must be {ut.shape[0]}x{ut.shape[0]}, got {a.shape}")
        term = ad.matmul(ad.matmul(a, ut), w)
        total = term if total is None else total + term
    return activation(total) if activation is not None else total


def _scale(config: GcnConfig, w, fan_in: int):
    return ad.mul(w, 1.0 / math.sqrt(fan_in)) if config.fan_in_scaling else ad.as_tensor(w)


def forward_batch(model: GcnModel, signals: np.ndarray, weights: dict | None = None) -> ad.Tensor:
    """Logits (B x classes) for a batch of node signals shaped B x s_raw x n.

    ``weights`` overrides the prunable tensors (e.g. hard-exported arrays);
    by default the differentiable training weights are used.
    """
    c = model.config
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (c.s_raw, c.n):
        raise ad.ShapeError(f"expected node signals of shape (*, {c.s_raw}, {c.n}), got {x.shape}")
    B, n = x.shape[0], c.n
    w = weights if weights is not None else model.training_weights()

    # rows are (sample, node): U^T for every sample stacked
    h = ad.Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(B * n, c.s_raw))
    h = ad.matmul(h, _scale(c, w["embed"], c.s_raw))
    c_in = c.s_emb
    for attn, conv in zip(model.attention, model.conv):
        # aggregate: every head's A^k applied to each sample's n x c_in block at once
        hn = ad.reshape(ad.permute(ad.reshape(h, (B, n, c_in)), (1, 0, 2)), (n, B * c_in))
        agg = ad.matmul(attn, hn)                                       # (heads*n) x (B*c_in)
        agg = ad.reshape(agg, (c.heads, n, B, c_in))
        agg = ad.reshape(ad.permute(agg, (2, 1, 0, 3)), (B * n, c.heads * c_in))
        # convolve: stacked filter banks realize sum_k (A^k U^T) W^k
        h = ad.relu(ad.matmul(agg, _scale(c, w[conv.name], c.heads * c_in)))
        c_in = c.filters
    flat = ad.reshape(h, (B, n * c.filters))
    hidden = ad.relu(ad.matmul(flat, _scale(c, w["dense"], n * c.filters)))
    return ad.matmul(hidden, model.classifier)


def forward(model: GcnModel, sample, weights: dict | None = None) -> ad.Tensor:
    """Logits of shape (classes,) for one sample (GraphSample or s x n array)."""
    signal = getattr(sample, "node_signal", sample)
    return ad.reshape(forward_batch(model, np.asarray(signal)[None], weights), (model.config.classes,))


def cross_entropy(logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean -log softmax(logits)[label]; accepts (C,) or (B, C) logits."""
    logits = ad.as_tensor(logits)
    if logits.data.ndim == 1:
        logits = ad.reshape(logits, (1, -1))
    B, C = logits.shape
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"label out of range [0, {C})")
    shift = logits.data.max(axis=1, keepdims=True)
    z = logits - np.broadcast_to(shift, (B, C)).copy()
    lse = ad.log(ad.sum(ad.exp(z), axis=1))
    onehot = np.zeros((B, C))
    onehot[np.arange(B), labels] = 1.0
    picked = ad.sum(ad.mul(z, onehot), axis=1)
    return ad.mean(lse - picked)


def count_params(model: GcnModel) -> dict[str, int]:
    """Prunable entry counts per LatentLayer plus 'total' (classifier excluded)."""
    layers = model.latent_layers
    if not layers:
        raise ValueError("model has no prunable layers")
    counts = {l.name: l.size for l in layers}
    counts["total"] = sum(counts.values())
    return counts


# ----------------------------------------------------------------- checkpoint

def save_checkpoint(model: GcnModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "band": {"a": model.band.a, "sigma": model.band.sigma},
        "gate": model.gate,
        "depth": len(model.conv),
        "masked": model.masks is not None,
        "extra": extra or {},
    }
    arrays = {"embed": model.embed.latent.data, "dense": model.dense.latent.data,
              "classifier": model.classifier.data}
    for i, (a, c) in enumerate(zip(model.attention, model.conv)):
        arrays[f"attention{i}"] = a.data
        arrays[f"conv{i}"] = c.latent.data
    if model.masks is not None:
        for k, v in model.masks.items():
            arrays[f"mask__{k}"] = v.astype(np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **arrays)
    return path


def load_checkpoint(path) -> tuple[GcnModel, dict]:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    config = GcnConfig.from_dict(meta["config"])
    band = BandStopConfig(**meta["band"])
    depth = meta["depth"]
    model = GcnModel(config, band, arrays["embed"], [arrays[f"attention{i}"] for i in range(depth)],
                     [arrays[f"conv{i}"] for i in range(depth)], arrays["dense"],
                     arrays["classifier"], meta["gate"])
    if meta["masked"]:
        model.masks = {k[len("mask__"):]: v for k, v in arrays.items() if k.startswith("mask__")}
    return model, meta["extra"]
