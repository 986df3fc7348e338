"""Multi-agent interaction architectures over masked sets of agents.

Frames are batched as ``features`` of shape ``(B, N, F)`` with a boolean
``mask`` of shape ``(B, N)``.  Per-agent networks only ever see the active
rows, so padding never leaks into batch statistics or gradients.

Architectures
-------------
VAIN      E^s, E^c -> attention pooling -> D(P_i, e^s_i)
COMMNET   same, pooling is the plain mean over the other agents
IN        psi_int on every ordered pair, aggregated per agent, then D
SMAX      per-agent network with scalar output (no interaction)
FC        flat one-hot input, fully connected, N-way output
ONE_HOP_FC  one CommNet hop, mean over agents, fully connected N-way output
LINEAR    per-agent affine map
MLP       per-agent fully connected network
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .numkit import DTYPE, Parameter, Sequential, ShapeError, mlp, softmax

ARCHS = ("VAIN", "COMMNET", "IN", "FC", "SMAX", "ONE_HOP_FC", "LINEAR", "MLP")
INTERACTIVE = ("VAIN", "COMMNET", "IN")


@dataclass
class AgentFrame:
    """One instant of the system: padded agent features plus a validity mask."""

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=DTYPE)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.features.ndim != 2 or self.mask.shape != (self.features.shape[0],):
            raise ShapeError("AgentFrame needs features (n, f) and mask (n,)")
        if not self.mask.any():
            raise ValueError("AgentFrame needs at least one active agent")
        self.features[~self.mask] = 0.0

    @property
    def n_slots(self) -> int:
        return self.features.shape[0]

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    def permuted(self, perm: np.ndarray) -> "AgentFrame":
        return AgentFrame(self.features[perm], self.mask[perm])

    @staticmethod
    def stack(frames: list["AgentFrame"]) -> tuple[np.ndarray, np.ndarray]:
        return (np.stack([f.features for f in frames]), np.stack([f.mask for f in frames]))


@dataclass
class ModelSpec:
    arch: str
    n_features: int
    out_dim: int = 1
    head: str = "regression"          # or "softmax" (per-agent scalar -> softmax over agents)
    enc_hidden: tuple[int, ...] = (64, 64)
    enc_out: int = 64                 # e^s width
    comm_dim: int = 64                # e^c width
    attn_dim: int = 10
    dec_hidden: tuple[int, ...] = (64, 64)
    pair_hidden: tuple[int, ...] = (64, 64)   # psi_int hidden widths (IN only)
    kernel: str = "softmax"           # or "unnormalized"
    aggregation: str = "mean"         # IN pair aggregation: "sum" or "mean"
    batchnorm: bool = False
    n_slots: int = 32                 # FC / ONE_HOP_FC output width
    seed: int = 0

    def __post_init__(self):
        self.arch = self.arch.upper()
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.head not in ("regression", "softmax"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.kernel not in ("softmax", "unnormalized"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.arch == "VAIN" and self.attn_dim < 1:
            raise ValueError("VAIN needs attn_dim >= 1")
        if self.arch in ("FC", "SMAX", "ONE_HOP_FC") and self.head != "softmax":
            raise ValueError(f"{self.arch} is a classifier; use head='softmax'")
        if self.head == "softmax":
            self.out_dim = 1
        self.enc_hidden = tuple(int(w) for w in self.enc_hidden)
        self.dec_hidden = tuple(int(w) for w in self.dec_hidden)
        self.pair_hidden = tuple(int(w) for w in self.pair_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("enc_hidden", "dec_hidden", "pair_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for k in ("enc_hidden", "dec_hidden", "pair_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def with_(self, **kw) -> "ModelSpec":
        return replace(self, **kw)


@dataclass
class ModelOutput:
    per_agent: np.ndarray                    # (B, N, out); logits when head == softmax
    probs: Optional[np.ndarray] = None       # (B, N)
    attention: Optional[np.ndarray] = None   # (B, N, N)


# --------------------------------------------------------------------------
# pooling primitives


def sq_distances(attn: np.ndarray) -> np.ndarray:
    diff = attn[..., :, None, :] - attn[..., None, :, :]
    return (diff * diff).sum(axis=-1)


def attention_weights(attn: np.ndarray, mask: np.ndarray, kernel: str = "softmax") -> np.ndarray:
    """w[b, i, j] with zero diagonal and zero rows/columns for masked agents.

    softmax: Softmax_j(-|a_i - a_j|^2) over active j including i, then the
    diagonal is zeroed without renormalizing.  unnormalized:
    exp(-|a_i - a_j|^2) - delta_ij.
    """
    d2 = sq_distances(attn)
    pair_mask = mask[..., :, None] & mask[..., None, :]
    n = mask.shape[-1]
    eye = np.eye(n, dtype=bool)
    if kernel == "softmax":
        col = np.broadcast_to(mask[..., None, :], d2.shape)
        # Masked rows still need one valid entry to keep softmax defined.
        safe = col | (~mask[..., :, None] & eye)
        w = softmax(-d2, safe, axis=-1)
    elif kernel == "unnormalized":
        w = np.exp(-d2) - eye
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    w = np.where(pair_mask & ~eye, w, 0.0)
    return w


def attention_pool(ecomm: np.ndarray, attn: np.ndarray, mask: np.ndarray,
                   kernel: str = "softmax") -> tuple[np.ndarray, np.ndarray]:
    """P_i = sum_j w_ij e^c_j.  Returns (pooled, weights)."""
    w = attention_weights(attn, mask, kernel)
    return w @ ecomm, w


def attention_pool_backward(ecomm: np.ndarray, attn: np.ndarray, mask: np.ndarray, w: np.ndarray,
                            grad_pooled: np.ndarray, kernel: str = "softmax"
                            ) -> tuple[np.ndarray, np.ndarray]:
    grad_ecomm = np.swapaxes(w, -1, -2) @ grad_pooled
    grad_w = grad_pooled @ np.swapaxes(ecomm, -1, -2)
    n = mask.shape[-1]
    off = (mask[..., :, None] & mask[..., None, :]) & ~np.eye(n, dtype=bool)
    grad_w = np.where(off, grad_w, 0.0)
    if kernel == "softmax":
        # w = s * offdiag; s = softmax(-d2) over active columns
        d2 = sq_distances(attn)
        col = np.broadcast_to(mask[..., None, :], d2.shape)
        safe = col | (~mask[..., :, None] & np.eye(n, dtype=bool))
        s = softmax(-d2, safe, axis=-1)
        s = np.where(mask[..., :, None], s, 0.0)
        dlogits = s * (grad_w - (s * grad_w).sum(axis=-1, keepdims=True))
        grad_d2 = -dlogits
    else:
        grad_d2 = -grad_w * np.where(off, w, 0.0)
    g = grad_d2 + np.swapaxes(grad_d2, -1, -2)
    grad_attn = 2.0 * (g.sum(axis=-1, keepdims=True) * attn - g @ attn)
    return grad_ecomm, grad_attn


def commnet_pool(ecomm: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """P_i = mean of e^c_j over active j != i (zero when i is alone)."""
    m = mask[..., None].astype(DTYPE)
    e = ecomm * m
    total = e.sum(axis=-2, keepdims=True)
    n = mask.sum(axis=-1)[..., None, None].astype(DTYPE)
    denom = np.maximum(n - 1.0, 1.0)
    return np.where((n > 1) & (m > 0), (total - e) / denom, 0.0)


def commnet_pool_backward(grad_pooled: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = mask[..., None].astype(DTYPE)
    n = mask.sum(axis=-1)[..., None, None].astype(DTYPE)
    g = np.where(n > 1, grad_pooled * m / np.maximum(n - 1.0, 1.0), 0.0)
    return (g.sum(axis=-2, keepdims=True) - g) * m


def pair_index(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All ordered active pairs (b, i, j), i != j, sorted by (b, i, j)."""
    pm = mask[:, :, None] & mask[:, None, :]
    n = mask.shape[1]
    pm &= ~np.eye(n, dtype=bool)
    return np.nonzero(pm)


def count_encoder_evals(arch: str, n: int) -> tuple[int, int]:
    """(communication-encoder evaluations, pairwise evaluations) for n agents."""
    arch = arch.upper()
    if arch in ("VAIN", "COMMNET", "ONE_HOP_FC"):
        return n, 0
    if arch == "IN":
        return 0, n * (n - 1)
    return 0, 0


def multiply_adds(spec: ModelSpec, n: int) -> int:
    """Multiply-adds of the interaction-specific networks for one n-agent frame."""

    def net_cost(sizes):
        return sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))

    f = spec.n_features
    if spec.arch == "IN":
        return n * (n - 1) * net_cost((2 * f, *spec.pair_hidden, spec.comm_dim))
    if spec.arch == "VAIN":
        return n * net_cost((f, *spec.enc_hidden, spec.comm_dim + spec.attn_dim)) + n * n * (
            spec.attn_dim + spec.comm_dim)
    if spec.arch == "COMMNET":
        return n * net_cost((f, *spec.enc_hidden, spec.comm_dim)) + n * spec.comm_dim
    return 0


def parity_pair_width(vain_spec: ModelSpec, n: int, depth: int | None = None) -> int:
    """Hidden width for psi_int so IN's pair cost is closest to VAIN's comm cost."""
    depth = depth if depth is not None else len(vain_spec.enc_hidden)
    target = multiply_adds(vain_spec, n)
    best, best_gap = 1, None
    for w in range(1, 4 * max(vain_spec.enc_hidden + (1,)) + 1):
        cand = vain_spec.with_(arch="IN", pair_hidden=(w,) * depth)
        gap = abs(multiply_adds(cand, n) - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = w, gap
    return best


# --------------------------------------------------------------------------
# model


class _PerAgent:
    """Runs a network on the active rows of a (B, N, F) tensor."""

    def __init__(self, net: Sequential):
        self.net = net
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        self._mask = mask
        rows = self.net.forward(x[mask])
        out = np.zeros(mask.shape + (rows.shape[1],))
        out[mask] = rows
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        rows = self.net.backward(grad[self._mask])
        out = np.zeros(self._mask.shape + (rows.shape[1],))
        out[self._mask] = rows
        return out


class Model:
    """Forward/backward graph for one :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        s, f, bn = spec, spec.n_features, spec.batchnorm
        self.nets: dict[str, Sequential] = {}
        self.counters = {"comm_evals": 0, "pair_evals": 0}
        self.training = True
        if s.arch in ("VAIN", "COMMNET", "IN", "ONE_HOP_FC"):
            self.nets["Es"] = mlp((f, *s.enc_hidden, s.enc_out), rng, bn, "Es")
        if s.arch == "VAIN":
            self.nets["Ec"] = mlp((f, *s.enc_hidden, s.comm_dim + s.attn_dim), rng, bn, "Ec")
        elif s.arch in ("COMMNET", "ONE_HOP_FC"):
            self.nets["Ec"] = mlp((f, *s.enc_hidden, s.comm_dim), rng, bn, "Ec")
        elif s.arch == "IN":
            self.nets["psi"] = mlp((2 * f, *s.pair_hidden, s.comm_dim), rng, bn, "psi")
        if s.arch in INTERACTIVE:
            self.nets["D"] = mlp((s.comm_dim + s.enc_out, *s.dec_hidden, s.out_dim), rng, bn, "D")
        elif s.arch == "ONE_HOP_FC":
            self.nets["cls"] = mlp((s.comm_dim + s.enc_out, *s.dec_hidden, s.n_slots), rng, bn, "cls")
        elif s.arch == "FC":
            self.nets["fc"] = mlp((s.n_slots * f, *s.dec_hidden, s.n_slots), rng, bn, "fc")
        elif s.arch == "SMAX":
            self.nets["emb"] = mlp((f, *s.enc_hidden, 1), rng, bn, "emb")
        elif s.arch == "LINEAR":
            self.nets["lin"] = mlp((f, s.out_dim), rng, False, "lin")
        elif s.arch == "MLP":
            self.nets["mlp"] = mlp((f, *s.dec_hidden, s.out_dim), rng, bn, "mlp")
        self._agents = {k: _PerAgent(v) for k, v in self.nets.items()}
        self._cache: dict = {}

    # parameter plumbing -------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return [p for net in self.nets.values() for p in net.parameters()]

    def batchnorms(self):
        return [b for net in self.nets.values() for b in net.batchnorms()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> None:
        self.training = mode
        for net in self.nets.values():
            net.train(mode)

    def eval(self) -> None:
        self.train(False)

    def reset_counters(self) -> None:
        self.counters = {"comm_evals": 0, "pair_evals": 0}

    # forward -------------------------------------------------------------
    def forward(self, features: np.ndarray, mask: np.ndarray | None = None) -> ModelOutput:
        x = np.asarray(features, dtype=DTYPE)
        single = x.ndim == 2
        if single:
            x = x[None]
            mask = None if mask is None else np.asarray(mask, dtype=bool)[None]
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if x.ndim != 3 or mask.shape != x.shape[:2]:
            raise ShapeError(f"features {x.shape} / mask {mask.shape} mismatch")
        if x.shape[2] != self.spec.n_features:
            raise ShapeError(f"model expects {self.spec.n_features} features, got {x.shape[2]}")
        if not mask.any(axis=1).all():
            raise ValueError("every frame needs at least one active agent")
        x = np.where(mask[..., None], x, 0.0)
        arch = self.spec.arch
        attention = None
        self._cache = {"x": x, "mask": mask, "single": single}
        if arch in INTERACTIVE:
            out, attention = self._forward_interactive(x, mask)
        elif arch == "ONE_HOP_FC":
            out = self._forward_one_hop_fc(x, mask)
        elif arch == "FC":
            if x.shape[1] != self.spec.n_slots:
                raise ShapeError(f"FC expects {self.spec.n_slots} slots, got {x.shape[1]}")
            logits = self.nets["fc"].forward(x.reshape(x.shape[0], -1))
            out = logits[..., None]
        else:
            key = {"SMAX": "emb", "LINEAR": "lin", "MLP": "mlp"}[arch]
            out = self._agents[key].forward(x, mask)
        probs = None
        if self.spec.head == "softmax":
            out = np.where(mask[..., None], out, 0.0)
            probs = softmax(out[..., 0], mask, axis=-1)
        if single:
            out = out[0]
            probs = None if probs is None else probs[0]
            attention = None if attention is None else attention[0]
        return ModelOutput(out, probs, attention)

    def _forward_interactive(self, x, mask):
        s = self.spec
        es = self._agents["Es"].forward(x, mask)
        attention = None
        if s.arch == "VAIN":
            trunk = self._agents["Ec"].forward(x, mask)
            self.counters["comm_evals"] += int(mask.sum())
            ec, a = trunk[..., :s.comm_dim], trunk[..., s.comm_dim:]
            pooled, w = attention_pool(ec, a, mask, s.kernel)
            self._cache.update(ec=ec, a=a, w=w)
            attention = w
        elif s.arch == "COMMNET":
            ec = self._agents["Ec"].forward(x, mask)
            self.counters["comm_evals"] += int(mask.sum())
            pooled = commnet_pool(ec, mask)
        else:
            bi, ii, jj = pair_index(mask)
            rows = np.concatenate([x[bi, ii], x[bi, jj]], axis=1)
            self.counters["pair_evals"] += rows.shape[0]
            pooled = np.zeros(mask.shape + (s.comm_dim,))
            if rows.shape[0]:
                psi = self.nets["psi"].forward(rows)
                if s.aggregation == "mean":
                    n = mask.sum(axis=1)
                    psi = psi / (n[bi] - 1.0)[:, None]
                np.add.at(pooled, (bi, ii), psi)
            self._cache.update(pairs=(bi, ii, jj))
        combined = np.concatenate([pooled, es], axis=-1)
        out = self._agents["D"].forward(combined, mask)
        return out, attention

    def _forward_one_hop_fc(self, x, mask):
        s = self.spec
        if x.shape[1] != s.n_slots:
            raise ShapeError(f"ONE_HOP_FC expects {s.n_slots} slots, got {x.shape[1]}")
        es = self._agents["Es"].forward(x, mask)
        ec = self._agents["Ec"].forward(x, mask)
        self.counters["comm_evals"] += int(mask.sum())
        pooled = commnet_pool(ec, mask)
        combined = np.concatenate([pooled, es], axis=-1)
        n = mask.sum(axis=1, keepdims=True).astype(DTYPE)
        summary = combined.sum(axis=1) / n
        logits = self.nets["cls"].forward(summary)
        return logits[..., None]

    # backward ------------------------------------------------------------
    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients given d(loss)/d(per_agent)."""
        c = self._cache
        if not c:
            raise RuntimeError("backward called before forward")
        mask = c["mask"]
        g = np.asarray(grad_out, dtype=DTYPE)
        if c["single"]:
            g = g[None]
        if g.ndim == 2:
            g = g[..., None]
        g = np.where(mask[..., None], g, 0.0)
        s = self.spec
        if s.arch in INTERACTIVE:
            gc = self._agents["D"].backward(g)
            gp, ges = gc[..., :s.comm_dim], gc[..., s.comm_dim:]
            self._agents["Es"].backward(ges)
            if s.arch == "VAIN":
                gec, ga = attention_pool_backward(c["ec"], c["a"], mask, c["w"], gp, s.kernel)
                self._agents["Ec"].backward(np.concatenate([gec, ga], axis=-1))
            elif s.arch == "COMMNET":
                self._agents["Ec"].backward(commnet_pool_backward(gp, mask))
            else:
                bi, ii, jj = c["pairs"]
                if bi.size:
                    gpsi = gp[bi, ii]
                    if s.aggregation == "mean":
                        n = mask.sum(axis=1)
                        gpsi = gpsi / (n[bi] - 1.0)[:, None]
                    self.nets["psi"].backward(gpsi)
        elif s.arch == "ONE_HOP_FC":
            gsum = self.nets["cls"].backward(g[..., 0])
            n = mask.sum(axis=1, keepdims=True).astype(DTYPE)
            gc = np.where(mask[..., None], (gsum / n)[:, None, :], 0.0)
            gp, ges = gc[..., :s.comm_dim], gc[..., s.comm_dim:]
            self._agents["Es"].backward(ges)
            self._agents["Ec"].backward(commnet_pool_backward(gp, mask))
        elif s.arch == "FC":
            self.nets["fc"].backward(g[..., 0])
        else:
            key = {"SMAX": "emb", "LINEAR": "lin", "MLP": "mlp"}[s.arch]
            self._agents[key].backward(g)

    # convenience -----------------------------------------------------------
    def predict(self, features, mask=None) -> ModelOutput:
        was = self.training
        self.eval()
        try:
            return self.forward(features, mask)
        finally:
            self.train(was)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then batchnorm running statistics, in declaration order."""
        out = [(p.name, p.value) for p in self.parameters()]
        for net in self.nets.values():
            for bn in net.batchnorms():
                prefix = bn.gamma.name[:-len(".gamma")]
                out.append((f"{prefix}.running_mean", bn.running_mean))
                out.append((f"{prefix}.running_var", bn.running_var))
        return out

    def copy_state(self) -> list[np.ndarray]:
        return [a.copy() for _, a in self.state_arrays()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        targets = self.state_arrays()
        if len(arrays) != len(targets):
            raise ValueError("state length mismatch")
        for (name, dst), src in zip(targets, arrays):
            if dst.shape != np.shape(src):
                raise ShapeError(f"{name}: shape {np.shape(src)} != {dst.shape}")
            dst[...] = src


def build_model(spec: ModelSpec) -> Model:
    return Model(spec)


def classify_head(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over agents of per-agent scalar scores."""
    scores = np.asarray(scores, dtype=DTYPE)
    if scores.ndim >= 2 and scores.shape[-1] == 1 and scores.shape[:-1] == np.shape(mask):
        scores = scores[..., 0]
    return softmax(scores, mask, axis=-1)
