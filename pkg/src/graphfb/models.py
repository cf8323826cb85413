"""Model architectures: MLP, GCN, and the two-channel filterbank variants.

All models are expressed as forward functions over the autodiff vocabulary.
The two-channel models run a low-pass and a high-pass filter over separately
transformed copies of the layer input and mix the two channel outputs with
learnable scalars constrained to (0, 1) by a sigmoid:

    H_lp = LP @ f(H W_lp)      H_hp = HP @ f(H W_hp)
    H'   = relu(a_lp * H_lp + a_hp * H_hp)        (no outer relu on the last layer)

where f is relu ("nonlinear" transform) or identity ("linear"). The spatial
variant aggregates w_ij * (h_i + h_j) and diversifies w_ij * (h_i - h_j)
over the closed neighborhood with fixed weights w_ij = 1/(deg_i + 1), which
in matrix form makes its channels (I + hatA_rw) and hatL_rw.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import Graph
from .operators import (
    GAMMA_KINDS,
    PERFECT_RECONSTRUCTION_PAIRS,
    OperatorKind,
    build_operator,
)

ARCHS = ("mlp", "gcn", "fb_gcn", "fb_sage")
CHANNEL_MODES = ("two_channel", "lp_only", "hp_only")
TRANSFORM_MODES = ("nonlinear", "linear")

_FB_ARCHS = ("fb_gcn", "fb_sage")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    For "gcn", `lp_kind` selects the propagation operator (defaults to the
    renormalized symmetric affinity). The filterbank models require
    `lp_kind`/`hp_kind` to be a perfect-reconstruction pair; "fb_sage" is
    pinned to the random-walk pair its fixed edge weights induce.
    `channel_mode` and `transform_mode` are ablation axes of the filterbank
    models only.
    """

    arch: str
    n_layers: int = 2
    hidden_dim: int = 32
    lp_kind: Optional[OperatorKind] = None
    hp_kind: Optional[OperatorKind] = None
    gamma: Optional[float] = None
    dropout_p: float = 0.5
    channel_mode: str = "two_channel"
    transform_mode: str = "nonlinear"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"channel_mode must be one of {CHANNEL_MODES}")
        if self.transform_mode not in TRANSFORM_MODES:
            raise ValueError(f"transform_mode must be one of {TRANSFORM_MODES}")
        if self.arch not in _FB_ARCHS:
            if self.channel_mode != "two_channel":
                raise ValueError(f"channel_mode {self.channel_mode!r} is only valid for fb_* archs")
            if self.transform_mode != "nonlinear":
                raise ValueError("transform_mode is an fb_* ablation axis")

        lp, hp = self.lp_kind, self.hp_kind
        if self.arch == "fb_sage":
            lp = OperatorKind(lp) if lp is not None else OperatorKind.HAT_A_RW
            hp = OperatorKind(hp) if hp is not None else OperatorKind.HAT_L_RW
            if (lp, hp) != (OperatorKind.HAT_A_RW, OperatorKind.HAT_L_RW):
                raise ValueError("fb_sage edge weights fix its filters to the hatA_rw/hatL_rw pair")
        elif self.arch == "fb_gcn":
            lp = OperatorKind(lp) if lp is not None else OperatorKind.HAT_A_SYM
            hp = OperatorKind(hp) if hp is not None else OperatorKind.HAT_L_SYM
            if (lp, hp) not in PERFECT_RECONSTRUCTION_PAIRS:
                raise ValueError(
                    f"({lp.value}, {hp.value}) is not a perfect-reconstruction pair"
                )
        elif self.arch == "gcn":
            lp = OperatorKind(lp) if lp is not None else OperatorKind.HAT_A_SYM
            hp = None
        else:  # mlp
            lp = hp = None
        object.__setattr__(self, "lp_kind", lp)
        object.__setattr__(self, "hp_kind", hp)
        if self.gamma is not None and float(self.gamma) <= 0:
            raise ValueError("gamma must be positive")

    @property
    def is_filterbank(self) -> bool:
        return self.arch in _FB_ARCHS

    def active_channels(self):
        if not self.is_filterbank:
            return ()
        if self.channel_mode == "lp_only":
            return ("lp",)
        if self.channel_mode == "hp_only":
            return ("hp",)
        return ("lp", "hp")

    def to_dict(self):
        return {
            "arch": self.arch,
            "n_layers": self.n_layers,
            "hidden_dim": self.hidden_dim,
            "lp_kind": self.lp_kind.value if self.lp_kind else None,
            "hp_kind": self.hp_kind.value if self.hp_kind else None,
            "gamma": self.gamma,
            "dropout_p": self.dropout_p,
            "channel_mode": self.channel_mode,
            "transform_mode": self.transform_mode,
        }

    @staticmethod
    def from_dict(d) -> "ModelSpec":
        d = dict(d)
        for key in ("lp_kind", "hp_kind"):
            if d.get(key) is not None:
                d[key] = OperatorKind(d[key])
        return ModelSpec(**d)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def layer_dims(spec: ModelSpec, in_dim: int, n_classes: int):
    return [in_dim] + [spec.hidden_dim] * (spec.n_layers - 1) + [n_classes]


@dataclass
class ParamSet:
    """Named trainable tensors of one model instance plus its init record."""

    spec: ModelSpec
    seed: int
    scheme: str
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name) -> ad.Tensor:
        return self.tensors[name]

    def named(self):
        return list(self.tensors.items())

    def trainable(self):
        """Tensors the optimizer should update under the model's channel mode."""
        if not self.spec.is_filterbank or self.spec.channel_mode == "two_channel":
            return list(self.tensors.values())
        active = self.spec.active_channels()[0]
        keep = (f"w_{active}", f"a_{active}")
        return [t for name, t in self.tensors.items() if name.startswith(keep)]

    def effective_alphas(self):
        """Per-layer sigmoid(raw alpha) values for the filterbank models."""
        out = []
        for layer in range(self.spec.n_layers):
            entry = {}
            for ch in self.spec.active_channels():
                raw = self.tensors[f"a_{ch}{layer}"].values[0, 0]
                entry[ch] = float(1.0 / (1.0 + np.exp(-raw)))
            out.append(entry)
        return out

    def state(self):
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_state(self, state):
        for name, t in self.tensors.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.values.shape:
                raise ValueError(f"state shape mismatch for {name}")
            t.values = arr.copy()

    def to_payload(self):
        return {
            "spec": self.spec.to_dict(),
            "spec_hash": self.spec.spec_hash(),
            "seed": self.seed,
            "scheme": self.scheme,
            "tensors": {name: t.values.tolist() for name, t in self.tensors.items()},
        }

    @staticmethod
    def from_payload(payload) -> "ParamSet":
        spec = ModelSpec.from_dict(payload["spec"])
        if payload.get("spec_hash") and payload["spec_hash"] != spec.spec_hash():
            raise ValueError("spec hash mismatch in serialized parameters")
        ps = ParamSet(spec=spec, seed=payload["seed"], scheme=payload["scheme"])
        for name, arr in payload["tensors"].items():
            ps.tensors[name] = ad.parameter(np.asarray(arr, dtype=np.float64))
        return ps


def glorot_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(spec: ModelSpec, in_dim: int, n_classes: int, seed: int) -> ParamSet:
    """Glorot-uniform weights, raw alphas at 0 (effective alpha = 0.5)."""
    rng = np.random.default_rng(seed)
    dims = layer_dims(spec, in_dim, n_classes)
    ps = ParamSet(spec=spec, seed=int(seed), scheme="glorot_uniform")
    for layer in range(spec.n_layers):
        fi, fo = dims[layer], dims[layer + 1]
        if spec.is_filterbank:
            ps.tensors[f"w_lp{layer}"] = ad.parameter(glorot_uniform(rng, fi, fo))
            ps.tensors[f"w_hp{layer}"] = ad.parameter(glorot_uniform(rng, fi, fo))
            ps.tensors[f"a_lp{layer}"] = ad.parameter(np.zeros((1, 1)))
            ps.tensors[f"a_hp{layer}"] = ad.parameter(np.zeros((1, 1)))
        else:
            ps.tensors[f"w{layer}"] = ad.parameter(glorot_uniform(rng, fi, fo))
    return ps


def build_model_operators(graph: Graph, spec: ModelSpec) -> dict:
    """Construct the constant sparse matrices a model's forward pass needs."""
    if spec.arch == "mlp":
        return {}
    gamma = spec.gamma
    if spec.arch == "gcn":
        kind_gamma = None
        if spec.lp_kind in GAMMA_KINDS:
            kind_gamma = 1.0 if gamma is None else gamma
        return {"prop": build_operator(graph, spec.lp_kind, kind_gamma)}
    if spec.arch == "fb_gcn":
        pair_gamma = None
        if (spec.lp_kind, spec.hp_kind) == (OperatorKind.A_LRW, OperatorKind.L_LRW):
            pair_gamma = 1.0 if gamma is None else gamma
        return {
            "lp": build_operator(graph, spec.lp_kind, pair_gamma),
            "hp": build_operator(graph, spec.hp_kind, pair_gamma),
        }
    # fb_sage: aggregation sums h_i + h_j, diversification h_i - h_j, both
    # weighted by 1/(deg_i + 1) over the closed neighborhood
    hat_a = build_operator(graph, OperatorKind.HAT_A_RW)
    hat_l = build_operator(graph, OperatorKind.HAT_L_RW)
    lp_mat = (sp.identity(graph.n_nodes, format="csr") + hat_a.matrix).tocsr()
    return {"lp": lp_mat, "hp": hat_l.matrix}


def _as_tensor(x):
    return x if isinstance(x, ad.Tensor) else ad.constant(x)


def _capture(capture, layer, channel, tensor):
    if capture is not None:
        capture.setdefault(f"layer{layer + 1}", {})[channel] = tensor.values.copy()


def mlp_forward(params: ParamSet, x, train_mode=False, rng=None, dropout_p=None,
                capture=None) -> ad.Tensor:
    """Plain relu MLP; ignores graph structure entirely."""
    spec = params.spec
    p = spec.dropout_p if dropout_p is None else dropout_p
    h = _as_tensor(x)
    for layer in range(spec.n_layers):
        h = ad.dropout(h, p, train_mode, rng)
        h = ad.matmul(h, params[f"w{layer}"])
        if layer < spec.n_layers - 1:
            h = ad.relu(h)
        _capture(capture, layer, "combined", h)
    return h


def gcn_forward(prop, params: ParamSet, x, train_mode=False, rng=None,
                dropout_p=None, capture=None) -> ad.Tensor:
    """Graph convolution: propagate(dropout(H) @ W) with relu between layers.

    The softmax lives in the loss, not here.
    """
    spec = params.spec
    p = spec.dropout_p if dropout_p is None else dropout_p
    h = _as_tensor(x)
    for layer in range(spec.n_layers):
        h = ad.dropout(h, p, train_mode, rng)
        h = ad.spmm(prop, ad.matmul(h, params[f"w{layer}"]))
        if layer < spec.n_layers - 1:
            h = ad.relu(h)
        _capture(capture, layer, "combined", h)
    return h


def _filterbank_forward(lp, hp, params: ParamSet, x, train_mode, rng, dropout_p,
                        capture) -> ad.Tensor:
    spec = params.spec
    p = spec.dropout_p if dropout_p is None else dropout_p
    channels = spec.active_channels()
    ops = {"lp": lp, "hp": hp}
    h = _as_tensor(x)
    for layer in range(spec.n_layers):
        hin = ad.dropout(h, p, train_mode, rng)
        mixed = None
        for ch in channels:
            t = ad.matmul(hin, params[f"w_{ch}{layer}"])
            if spec.transform_mode == "nonlinear":
                t = ad.relu(t)
            filtered = ad.spmm(ops[ch], t)
            _capture(capture, layer, ch, filtered)
            alpha = ad.sigmoid(params[f"a_{ch}{layer}"])
            weighted = ad.scale_by_scalar(alpha, filtered)
            mixed = weighted if mixed is None else ad.add(mixed, weighted)
        if layer < spec.n_layers - 1:
            mixed = ad.relu(mixed)
        _capture(capture, layer, "combined", mixed)
        h = mixed
    return h


def fb_gcn_forward(lp_op, hp_op, params: ParamSet, x, train_mode=False, rng=None,
                   dropout_p=None, capture=None) -> ad.Tensor:
    """Spectral two-channel model over a perfect-reconstruction filter pair."""
    return _filterbank_forward(lp_op, hp_op, params, x, train_mode, rng, dropout_p, capture)


def fb_sage_forward(lp_mat, hp_mat, params: ParamSet, x, train_mode=False, rng=None,
                    dropout_p=None, capture=None) -> ad.Tensor:
    """Spatial two-channel model; channels are (I + hatA_rw) and hatL_rw."""
    return _filterbank_forward(lp_mat, hp_mat, params, x, train_mode, rng, dropout_p, capture)


def model_forward(operators: dict, params: ParamSet, x, train_mode=False, rng=None,
                  dropout_p=None, capture=None) -> ad.Tensor:
    """Dispatch to the arch-specific forward given `build_model_operators` output."""
    arch = params.spec.arch
    if arch == "mlp":
        return mlp_forward(params, x, train_mode, rng, dropout_p, capture)
    if arch == "gcn":
        return gcn_forward(operators["prop"], params, x, train_mode, rng, dropout_p, capture)
    if arch == "fb_gcn":
        return fb_gcn_forward(operators["lp"], operators["hp"], params, x, train_mode,
                              rng, dropout_p, capture)
    return fb_sage_forward(operators["lp"], operators["hp"], params, x, train_mode,
                           rng, dropout_p, capture)
