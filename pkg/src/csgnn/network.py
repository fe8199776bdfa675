"""The full coupled network: encoder, L coupled Euler layers, classifier.

Each layer first moves the features with the previous adjacency state, then
moves the adjacency, so layer l maps (F, A) to (F + h*X(F, A), A + h*sigma(M(A))).
Dropout (inverted scaling) is applied to the raw input, to the features before
every layer, and once more before the classifier; evaluation mode is a pure
function of (graph, parameters).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .activations import leaky_relu
from .dynamics import (LayerParams, Parameterization, _adjoint_raw, _gradient_raw,
                       feature_field, feature_step, symmetrized)
from .equivariant import AdjacencyStepConfig, EquivariantCoeffs, adjacency_step, equivariant_linear
from .graph import Graph, PerturbationBudget, frobenius_distance, l1_vec_distance


@dataclass(frozen=True)
class CoupledLayer:
    feature: LayerParams
    adjacency: AdjacencyStepConfig


@dataclass(frozen=True)
class NetworkParams:
    """Full trainable state: encoder, L coupled layers, linear classifier."""

    encoder: np.ndarray        # c_in x c
    layers: tuple
    classifier_w: np.ndarray   # c x c_out
    classifier_b: np.ndarray   # c_out
    dropout_p: float = 0.0
    share_weights: bool = False

    def __post_init__(self):
        enc = np.array(self.encoder, dtype=float)
        cw = np.array(self.classifier_w, dtype=float)
        cb = np.array(self.classifier_b, dtype=float)
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("need at least one coupled layer")
        if enc.ndim != 2 or cw.ndim != 2 or enc.shape[1] != cw.shape[0]:
            raise ValueError("encoder output width must match classifier input width")
        if cb.shape != (cw.shape[1],):
            raise ValueError("classifier bias length must match output width")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        for a in (enc, cw, cb):
            a.setflags(write=False)
        object.__setattr__(self, "encoder", enc)
        object.__setattr__(self, "classifier_w", cw)
        object.__setattr__(self, "classifier_b", cb)
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def hidden_dim(self) -> int:
        return self.encoder.shape[1]


@dataclass
class ForwardTrace:
    """States and cached intermediates of one forward pass.

    feature_states[l] / adjacency_states[l] hold (F, A) after l coupled layers;
    the remaining fields cache what the reverse pass needs (dropout masks are
    the applied multiplicative masks, None in evaluation mode).
    """

    feature_states: list
    adjacency_states: list
    input_dropped: np.ndarray = None
    layer_dropped: list = field(default_factory=list)
    final_dropped: np.ndarray = None
    input_mask: np.ndarray = None
    layer_masks: list = field(default_factory=list)
    final_mask: np.ndarray = None
    layer_edge_pre: list = field(default_factory=list)
    layer_adj_pre: list = field(default_factory=list)
    logits: np.ndarray = None


def _dropout_mask(shape, p: float, rng) -> np.ndarray:
    return (rng.random(shape) >= p) / (1.0 - p)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def forward(g: Graph, params: NetworkParams, mode: str = "eval", rng=None,
            dropout_masks: list = None):
    """Run the network; returns (logits, trace).

    `mode` is "train" (dropout active, `rng` required) or "eval" (dropout is the
    identity). `dropout_masks` replays recorded masks instead of sampling; it
    must hold the input mask, one mask per layer, and the final mask, in order.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if g.features.shape[1] != params.encoder.shape[0]:
        raise ValueError(
            f"feature width {g.features.shape[1]} does not match encoder input {params.encoder.shape[0]}")
    use_dropout = mode == "train" and (params.dropout_p > 0.0 or dropout_masks is not None)
    if use_dropout and dropout_masks is None and rng is None:
        raise ValueError("train mode with dropout needs an rng or recorded masks")

    L = params.depth
    replay = list(dropout_masks) if dropout_masks is not None else None
    if replay is not None and len(replay) != L + 2:
        raise ValueError(f"expected {L + 2} dropout masks, got {len(replay)}")

    def next_mask(shape):
        if not use_dropout:
            return None
        if replay is not None:
            return replay.pop(0)
        return _dropout_mask(shape, params.dropout_p, rng)

    trace = ForwardTrace(feature_states=[], adjacency_states=[])

    m0 = next_mask(g.features.shape)
    f_in = g.features if m0 is None else g.features * m0
    f = f_in @ params.encoder
    a = g.adjacency
    _check_finite(f, "encoded features")
    trace.input_mask = m0
    trace.input_dropped = f_in
    trace.feature_states.append(f)
    trace.adjacency_states.append(a)

    for l, layer in enumerate(params.layers):
        ml = next_mask(f.shape)
        f_d = f if ml is None else f * ml
        fp = layer.feature
        g_node = f_d if fp.W is None else fp.W @ f_d
        edge_pre = _gradient_raw(a, g_node)
        v = _adjoint_raw(a, leaky_relu(edge_pre, fp.leaky_slope))
        if fp.W is not None:
            v = fp.W.T @ v
        if fp.K is not None:
            v = v @ symmetrized(fp.K, f_d.shape[1])
        f = f_d + fp.h * -v
        adj_pre = equivariant_linear(a, layer.adjacency.coeffs)
        a_next = a + layer.adjacency.h * leaky_relu(adj_pre, layer.adjacency.leaky_slope)
        _check_finite(f, f"features after layer {l + 1}")
        _check_finite(a_next, f"adjacency after layer {l + 1}")
        trace.layer_masks.append(ml)
        trace.layer_dropped.append(f_d)
        trace.layer_edge_pre.append(edge_pre)
        trace.layer_adj_pre.append(adj_pre)
        trace.feature_states.append(f)
        trace.adjacency_states.append(a_next)
        a = a_next

    mf = next_mask(f.shape)
    f_out = f if mf is None else f * mf
    logits = f_out @ params.classifier_w + params.classifier_b
    _check_finite(logits, "logits")
    trace.final_mask = mf
    trace.final_dropped = f_out
    trace.logits = logits
    return logits, trace


def evolve(f0: np.ndarray, a0: np.ndarray, layers) -> tuple:
    """Apply the L coupled Euler layers to an embedded state, without dropout.

    Returns the full state lists ([F0..FL], [A0..AL]).
    """
    fs, as_ = [np.asarray(f0, dtype=float)], [np.asarray(a0, dtype=float)]
    for layer in layers:
        fs.append(feature_step(fs[-1], as_[-1], layer.feature))
        as_.append(adjacency_step(as_[-1], layer.adjacency))
    return fs, as_


def weighted_distance(m1: float, m2: float, s1: tuple, s2: tuple) -> float:
    """d_{m1,m2}((F,A),(F*,A*)) = m1 ||F-F*||_F + m2 ||vec(A)-vec(A*)||_1."""
    if m1 <= 0 or m2 <= 0:
        raise ValueError("weights must be positive")
    f1, a1 = s1
    f2, a2 = s2
    return m1 * frobenius_distance(f1, f2) + m2 * l1_vec_distance(a1, a2)


def expansivity_bound(h: list, lip_estimates: list, budget: PerturbationBudget) -> float:
    """Certified output-distance bound eps1 + eps2 * (1 + sum_i lip_i * h_i)."""
    h = np.asarray(h, dtype=float)
    lip = np.asarray(lip_estimates, dtype=float)
    if h.shape != lip.shape:
        raise ValueError("step-size and Lipschitz lists must have equal length")
    if np.any(h < 0) or np.any(lip < 0):
        raise ValueError("step sizes and Lipschitz estimates must be nonnegative")
    return float(budget.eps_feat + budget.eps_adj * (1.0 + float((lip * h).sum())))


def _max_row_gap(g: np.ndarray) -> float:
    """Largest pairwise euclidean distance between rows of g."""
    sq = (g * g).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (g @ g.T)
    return float(np.sqrt(max(d2.max(), 0.0)))


def lipschitz_upper(f: np.ndarray, layer: LayerParams, max_abs_entry: float) -> float:
    """Bound on the l1->Frobenius Lipschitz constant of A -> X(F, A).

    Valid for all adjacency matrices whose entries are bounded by
    `max_abs_entry` in absolute value. Assembled by sub-multiplicativity:
    both the outer aggregation and the inner edge differences are linear in A
    with entrywise factors at most `max_abs_entry`, the activation is
    1-Lipschitz with sigma(0)=0, and each edge row of G(A)WF has euclidean
    norm at most the largest pairwise row gap of WF.
    """
    f = np.asarray(f, dtype=float)
    g = f if layer.W is None else layer.W @ f
    w2 = 1.0 if layer.W is None else float(np.linalg.norm(layer.W, 2))
    k2 = 1.0 if layer.K is None else float(np.linalg.norm(symmetrized(layer.K, layer.K.shape[0]), 2))
    return 4.0 * float(max_abs_entry) * _max_row_gap(g) * w2 * k2


def estimate_mixed_lipschitz(f: np.ndarray, layer: LayerParams, n_samples: int, rng,
                             probe_step: float = 1e-4):
    """Sampled lower bound and analytic upper bound for Lip(A -> X(F, A)).

    Samples adjacency matrices with entries uniform in [0, 1) and l1-unit
    perturbation directions; the upper bound covers the whole sampled region,
    so lower <= upper on every call.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    lower = 0.0
    max_abs = 0.0
    for _ in range(n_samples):
        a = rng.random((n, n))
        direction = rng.standard_normal((n, n))
        direction /= np.abs(direction).sum()
        moved = feature_field(f, a + probe_step * direction, layer)
        base = feature_field(f, a, layer)
        lower = max(lower, float(np.linalg.norm(moved - base)) / probe_step)
        max_abs = max(max_abs, float(np.abs(a).max()) + probe_step)
    upper = lipschitz_upper(f, layer, max_abs)
    assert lower <= upper + 1e-12, "sampled Lipschitz quotient exceeded the analytic bound"
    return lower, upper


def certificate(f0: np.ndarray, a0: np.ndarray, params: NetworkParams,
                budget: PerturbationBudget) -> dict:
    """Per-layer expansivity certificate for the coupled map on an embedded state.

    Runs the clean trajectory, bounds each layer's mixed Lipschitz constant over
    the l1 ball of radius eps_adj around the clean adjacency state (where every
    admissible perturbed state stays, by adjacency nonexpansiveness), and
    assembles the final output-distance bound.
    """
    from .dynamics import max_feature_step
    from .equivariant import max_step_adjacency

    fs, as_ = evolve(f0, a0, params.layers)
    rows = []
    lips = []
    hs = []
    for l, layer in enumerate(params.layers):
        lip = lipschitz_upper(fs[l], layer.feature,
                              float(np.abs(as_[l]).max()) + budget.eps_adj)
        try:
            h_adj_max = max_step_adjacency(layer.adjacency.coeffs)
        except ValueError:
            h_adj_max = float("inf")
        rows.append({
            "layer": l + 1,
            "h_feature": layer.feature.h,
            "h_adjacency": layer.adjacency.h,
            "h_adjacency_max": h_adj_max,
            "h_feature_safe": max_feature_step(as_[l], layer.feature, l1_radius=budget.eps_adj),
            "lipschitz_upper": lip,
        })
        lips.append(lip)
        hs.append(layer.feature.h)
    bound = expansivity_bound(hs, lips, budget)
    return {"eps_feat": budget.eps_feat, "eps_adj": budget.eps_adj,
            "layers": rows, "bound": bound}


# Checkpoint format (version 1): the magic bytes b"CSGNNCKPT", a little-endian
# uint32 version, a uint64 length-prefixed JSON header, then the raw
# little-endian float64 buffers of every array in the header's "arrays" order:
# encoder, classifier_w, classifier_b, then per layer W (if any), K (if any)
# and the eight free adjacency coefficients.

_MAGIC = b"CSGNNCKPT"
_VERSION = 1


def _params_arrays(params: NetworkParams) -> list:
    arrays = [("encoder", params.encoder),
              ("classifier_w", params.classifier_w),
              ("classifier_b", params.classifier_b)]
    for l, layer in enumerate(params.layers):
        if layer.feature.W is not None:
            arrays.append((f"layer{l}.W", layer.feature.W))
        if layer.feature.K is not None:
            arrays.append((f"layer{l}.K", layer.feature.K))
        arrays.append((f"layer{l}.k", layer.adjacency.coeffs.k))
    return arrays


def save_checkpoint(params: NetworkParams, path) -> None:
    arrays = _params_arrays(params)
    header = {
        "dropout_p": params.dropout_p,
        "share_weights": params.share_weights,
        "layers": [
            {
                "parameterization": layer.feature.parameterization.value,
                "h_feature": layer.feature.h,
                "feature_slope": layer.feature.leaky_slope,
                "h_adjacency": layer.adjacency.h,
                "adjacency_slope": layer.adjacency.leaky_slope,
                "alpha": layer.adjacency.coeffs.alpha,
                "has_W": layer.feature.W is not None,
                "has_K": layer.feature.K is not None,
            }
            for layer in params.layers
        ],
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        data = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("truncated checkpoint")
            data[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    layers = []
    for l, meta in enumerate(header["layers"]):
        layers.append(CoupledLayer(
            feature=LayerParams(
                h=meta["h_feature"],
                parameterization=Parameterization(meta["parameterization"]),
                W=data.get(f"layer{l}.W") if meta["has_W"] else None,
                K=data.get(f"layer{l}.K") if meta["has_K"] else None,
                leaky_slope=meta["feature_slope"],
            ),
            adjacency=AdjacencyStepConfig(
                coeffs=EquivariantCoeffs(k=data[f"layer{l}.k"], alpha=meta["alpha"]),
                h=meta["h_adjacency"],
                leaky_slope=meta["adjacency_slope"],
            ),
        ))
    return NetworkParams(
        encoder=data["encoder"],
        layers=tuple(layers),
        classifier_w=data["classifier_w"],
        classifier_b=data["classifier_b"],
        dropout_p=header["dropout_p"],
        share_weights=header["share_weights"],
    )
