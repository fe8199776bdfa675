"""Gradient-based training: masked cross-entropy, hand-written reverse mode,
Adam with decoupled weight decay, and the end-to-end training loop.

Gradients are propagated manually through the recorded forward trace. The only
non-smooth parameter path is the derived leading adjacency coefficient
k1 = alpha - sum |k_i|; the subgradient of |k_i| at zero is taken as 0. After
every optimizer step the per-layer step sizes are re-clamped to their
contractive bounds and alpha is projected back to the nonpositive half-line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .activations import leaky_relu, leaky_relu_prime
from .dynamics import (LayerParams, Parameterization, _adjoint_raw, _gradient_raw,
                       max_feature_step, symmetrized)
from .equivariant import (AdjacencyStepConfig, EquivariantCoeffs, coeff_gradients,
                          equivariant_linear_adjoint, _max_step)
from .graph import Graph
from .network import CoupledLayer, ForwardTrace, NetworkParams, forward

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

GROUP_EMBED = "embed"
GROUP_NODE = "node"
GROUP_ADJ = "adj"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameter surface: per-group learning rates and weight decay,
    dropout, architecture knobs, and the step-size / contractivity margin."""

    epochs: int = 200
    lr_embed: float = 1e-2
    lr_node: float = 1e-2
    lr_adj: float = 1e-2
    wd_embed: float = 5e-4
    wd_node: float = 5e-4
    wd_adj: float = 5e-4
    dropout_p: float = 0.0
    hidden_dim: int = 16
    num_layers: int = 2
    h: float = 0.5
    alpha: float = -1.0
    leaky_slope: float = 0.1
    share_weights: bool = False
    parameterization: Parameterization = Parameterization.LEARN_K
    patience: int = 50
    seed: int = 0

    def group_lr(self, group: str) -> float:
        return {GROUP_EMBED: self.lr_embed, GROUP_NODE: self.lr_node, GROUP_ADJ: self.lr_adj}[group]

    def group_wd(self, group: str) -> float:
        return {GROUP_EMBED: self.wd_embed, GROUP_NODE: self.wd_node, GROUP_ADJ: self.wd_adj}[group]


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-softmax of the true class over masked nodes."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no nodes")
    sel = logits[mask]
    lab = np.asarray(labels)[mask]
    if lab.min() < 0 or lab.max() >= logits.shape[1]:
        raise ValueError("label out of range on a masked node")
    shifted = sel - sel.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float((lse - shifted[np.arange(len(lab)), lab]).mean())


def cross_entropy_logit_grad(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d(masked CE)/d(logits): (softmax - onehot)/count on masked rows, zero elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no nodes")
    out = np.zeros_like(np.asarray(logits, dtype=float))
    sel = np.asarray(logits, dtype=float)[mask]
    lab = np.asarray(labels)[mask]
    shifted = sel - sel.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    probs[np.arange(len(lab)), lab] -= 1.0
    out[mask] = probs / len(lab)
    return out


def _sign0(x: np.ndarray) -> np.ndarray:
    # subgradient of |x| with the tie at 0 broken to 0
    return np.sign(x)


def _sym_grad(k_tilde_bar: np.ndarray) -> np.ndarray:
    # chain rule through Ktilde = (K + K^T)/2
    return 0.5 * (k_tilde_bar + k_tilde_bar.T)


def backward(trace: ForwardTrace, g: Graph, params: NetworkParams,
             logit_grad: np.ndarray) -> dict:
    """Reverse pass over a recorded trace; returns per-tensor gradients.

    Keys mirror the trainable tensors: "encoder", "classifier_w",
    "classifier_b", and per layer "layer{l}.W" or "layer{l}.K" plus
    "layer{l}.k" (the eight free adjacency coefficients).
    """
    L = params.depth
    if len(trace.feature_states) != L + 1 or len(trace.layer_dropped) != L:
        raise ValueError("trace does not match the given parameters")

    grads = {}
    grads["classifier_w"] = trace.final_dropped.T @ logit_grad
    grads["classifier_b"] = logit_grad.sum(axis=0)
    f_bar = logit_grad @ params.classifier_w.T
    if trace.final_mask is not None:
        f_bar = f_bar * trace.final_mask
    a_bar = np.zeros_like(trace.adjacency_states[-1])

    for l in range(L - 1, -1, -1):
        layer = params.layers[l]
        fp = layer.feature
        a_prev = trace.adjacency_states[l]
        f_d = trace.layer_dropped[l]
        edge_pre = trace.layer_edge_pre[l]
        adj_pre = trace.layer_adj_pre[l]

        # adjacency step A_next = A + h*sigma(M(A)): pull a_bar through sigma,
        # the coefficients, and the linear map itself
        m_bar = layer.adjacency.h * leaky_relu_prime(adj_pre, layer.adjacency.leaky_slope) * a_bar
        raw_k = coeff_gradients(a_prev, m_bar)
        grads[f"layer{l}.k"] = raw_k[1:] - raw_k[0] * _sign0(layer.adjacency.coeffs.k)
        a_bar = a_bar + equivariant_linear_adjoint(m_bar, layer.adjacency.coeffs)

        # feature step F_next = F_d + h*X(F_d, A) with
        # X = -(W^T G^T sigma(G W F_d)) Ktilde
        x_bar = fp.h * f_bar
        s = leaky_relu(edge_pre, fp.leaky_slope)
        g_node = f_d if fp.W is None else fp.W @ f_d
        ktilde = None if fp.K is None else symmetrized(fp.K, f_d.shape[1])
        v = _adjoint_raw(a_prev, s)

        if fp.K is not None:
            p = v if fp.W is None else fp.W.T @ v
            grads[f"layer{l}.K"] = _sym_grad(-p.T @ x_bar)
        p_bar = -x_bar if ktilde is None else -(x_bar @ ktilde)
        if fp.W is not None:
            w_grad = v @ p_bar.T
            v_bar = fp.W @ p_bar
        else:
            v_bar = p_bar

        s_bar = _gradient_raw(a_prev, v_bar)
        a_bar = a_bar + (s * (v_bar[:, None, :] - v_bar[None, :, :])).sum(axis=2)
        u_bar = leaky_relu_prime(edge_pre, fp.leaky_slope) * s_bar
        g_bar = _adjoint_raw(a_prev, u_bar)
        a_bar = a_bar + (u_bar * (g_node[:, None, :] - g_node[None, :, :])).sum(axis=2)

        if fp.W is not None:
            grads[f"layer{l}.W"] = w_grad + g_bar @ f_d.T
            f_d_bar = fp.W.T @ g_bar
        else:
            f_d_bar = g_bar
        f_d_bar = f_d_bar + f_bar

        mask = trace.layer_masks[l]
        f_bar = f_d_bar if mask is None else f_d_bar * mask

    grads["encoder"] = trace.input_dropped.T @ f_bar
    return grads


# --- trainable-tensor views -------------------------------------------------

def _layer_slot(params: NetworkParams, l: int) -> int:
    return 0 if params.share_weights else l


def params_to_tensors(params: NetworkParams) -> dict:
    """Flat dict of the trainable tensors (one slot when weights are shared)."""
    out = {"encoder": params.encoder, "classifier_w": params.classifier_w,
           "classifier_b": params.classifier_b}
    for l, layer in enumerate(params.layers):
        slot = _layer_slot(params, l)
        if slot != l:
            continue
        if layer.feature.parameterization == Parameterization.LEARN_W:
            out[f"layer{slot}.W"] = layer.feature.W
        else:
            out[f"layer{slot}.K"] = layer.feature.K
        out[f"layer{slot}.k"] = layer.adjacency.coeffs.k
    return out


def collapse_shared_grads(grads: dict, params: NetworkParams) -> dict:
    """Aggregate per-layer gradients onto the trainable slots of `params`."""
    out = {k: np.asarray(v, dtype=float) for k, v in grads.items() if "." not in k}
    for l in range(params.depth):
        slot = _layer_slot(params, l)
        for name in ("W", "K", "k"):
            key = f"layer{l}.{name}"
            if key not in grads:
                continue
            tgt = f"layer{slot}.{name}"
            out[tgt] = out.get(tgt, 0.0) + np.asarray(grads[key], dtype=float)
    return out


def tensor_group(key: str) -> str:
    if key in ("encoder", "classifier_w", "classifier_b"):
        return GROUP_EMBED
    if key.endswith(".k"):
        return GROUP_ADJ
    return GROUP_NODE


def rebuild_params(params: NetworkParams, tensors: dict, config: TrainConfig = None,
                   h_feature_caps: list = None, clamp_steps: bool = True) -> NetworkParams:
    """New NetworkParams with updated tensors and re-clamped step sizes.

    The adjacency step is clamped to its nonexpansive bound for the new
    coefficients; the feature step to min(configured h, per-layer cap) when
    caps are given. `clamp_steps=False` keeps all step sizes exactly as stored
    (used by finite-difference checks, where the clamp would be a kink).
    """
    layers = []
    for l, layer in enumerate(params.layers):
        slot = _layer_slot(params, l)
        fp = layer.feature
        if fp.parameterization == Parameterization.LEARN_W:
            new_W, new_K = tensors[f"layer{slot}.W"], fp.K
        else:
            new_W, new_K = None, tensors[f"layer{slot}.K"]
        k_new = np.asarray(tensors[f"layer{slot}.k"], dtype=float)
        alpha = min(layer.adjacency.coeffs.alpha, 0.0)
        coeffs = EquivariantCoeffs(k=k_new, alpha=alpha)
        h_adj = layer.adjacency.h if config is None else config.h
        if clamp_steps:
            hmax = _max_step(coeffs.k, alpha)
            if hmax is not None:
                h_adj = min(h_adj, hmax)
        h_feat = fp.h if config is None else config.h
        if h_feature_caps is not None:
            h_feat = min(h_feat, h_feature_caps[l])
        layers.append(CoupledLayer(
            feature=dataclasses.replace(fp, W=new_W, K=new_K, h=h_feat),
            adjacency=AdjacencyStepConfig(coeffs=coeffs, h=h_adj,
                                          leaky_slope=layer.adjacency.leaky_slope),
        ))
    return NetworkParams(
        encoder=tensors["encoder"],
        layers=tuple(layers),
        classifier_w=tensors["classifier_w"],
        classifier_b=tensors["classifier_b"],
        dropout_p=params.dropout_p,
        share_weights=params.share_weights,
    )


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment buffers keyed like the trainable tensors."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS

    @classmethod
    def init(cls, tensors: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in tensors.items()},
                   v={k: np.zeros_like(v) for k, v in tensors.items()})


def adam_step(tensors: dict, grads: dict, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update with decoupled per-group weight decay.

    Returns (new_tensors, state); the state is updated in place.
    """
    state.t += 1
    t = state.t
    out = {}
    for key, p in tensors.items():
        grad = np.asarray(grads[key], dtype=float)
        if grad.shape != np.shape(p):
            raise ValueError(f"gradient shape mismatch for {key}")
        lr = config.group_lr(tensor_group(key))
        wd = config.group_wd(tensor_group(key))
        state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * grad
        state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * grad * grad
        m_hat = state.m[key] / (1 - state.beta1 ** t)
        v_hat = state.v[key] / (1 - state.beta2 ** t)
        out[key] = p - lr * (m_hat / (np.sqrt(v_hat) + state.eps)) - lr * wd * p
    return out, state


# --- initialization and the training loop -------------------------------------

def _uniform_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(c_in: int, c_out: int, n: int, config: TrainConfig, rng) -> NetworkParams:
    """Seeded parameter initialization.

    Encoder and classifier draw uniform +-sqrt(6/(fan_in+fan_out)). Both
    dynamics parameterizations start near-diffusive: W at identity plus small
    noise, K at half the identity plus small uniform noise, so the early
    feature flow smooths along edges instead of fighting itself.
    """
    c = config.hidden_dim
    encoder = _uniform_init(rng, c_in, c)
    classifier_w = _uniform_init(rng, c, c_out)
    classifier_b = np.zeros(c_out)
    layers = []
    n_slots = 1 if config.share_weights else config.num_layers
    slots = []
    for _ in range(n_slots):
        if config.parameterization == Parameterization.LEARN_W:
            W, K = np.eye(n) + 1e-2 * rng.standard_normal((n, n)), None
        else:
            W, K = None, 0.5 * np.eye(c) + 0.1 * _uniform_init(rng, c, c)
        k = 1e-2 * rng.standard_normal(8)
        slots.append((W, K, k))
    for l in range(config.num_layers):
        W, K, k = slots[0 if config.share_weights else l]
        coeffs = EquivariantCoeffs(k=k, alpha=config.alpha)
        hmax = _max_step(coeffs.k, coeffs.alpha)
        h_adj = config.h if hmax is None else min(config.h, hmax)
        layers.append(CoupledLayer(
            feature=LayerParams(h=config.h, parameterization=config.parameterization,
                                W=W, K=K, leaky_slope=config.leaky_slope),
            adjacency=AdjacencyStepConfig(coeffs=coeffs, h=h_adj,
                                          leaky_slope=config.leaky_slope),
        ))
    return NetworkParams(encoder=encoder, layers=tuple(layers),
                         classifier_w=classifier_w, classifier_b=classifier_b,
                         dropout_p=config.dropout_p, share_weights=config.share_weights)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    pred = logits[mask].argmax(axis=1)
    return float((pred == np.asarray(labels)[mask]).mean())


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float


def train(g_attacked: Graph, config: TrainConfig):
    """Train on the (possibly poisoned) graph; returns (best params, history).

    The model only ever sees `g_attacked`. The checkpoint with the best
    validation accuracy is returned; training stops early after `patience`
    epochs without improvement, and a non-finite forward aborts with the last
    good checkpoint.
    """
    if not g_attacked.train_mask.any() or not g_attacked.val_mask.any():
        raise ValueError("training requires nonempty train and validation masks")
    rng = np.random.default_rng(config.seed)
    c_out = int(g_attacked.labels.max()) + 1
    params = init_params(g_attacked.feat_dim, c_out, g_attacked.n, config, rng)

    # per-layer feature step caps, fixed at initialization
    h_caps = [max_feature_step(g_attacked.adjacency, layer.feature)
              for layer in params.layers]
    params = rebuild_params(params, params_to_tensors(params), config, h_caps)

    state = AdamState.init(params_to_tensors(params))
    best = params
    # validation accuracy is coarse on small splits: ties keep the most-trained
    # checkpoint, patience counts epochs without a strict accuracy improvement
    best_val = -np.inf
    since_best = 0
    history = []
    for epoch in range(config.epochs):
        try:
            logits, trace = forward(g_attacked, params, mode="train", rng=rng)
            loss = masked_cross_entropy(logits, g_attacked.labels, g_attacked.train_mask)
            if not np.isfinite(loss):
                break
            seed_grad = cross_entropy_logit_grad(logits, g_attacked.labels, g_attacked.train_mask)
            grads = collapse_shared_grads(
                backward(trace, g_attacked, params, seed_grad), params)
            tensors, state = adam_step(params_to_tensors(params), grads, state, config)
            params = rebuild_params(params, tensors, config, h_caps)
            eval_logits, _ = forward(g_attacked, params, mode="eval")
        except FloatingPointError:
            break
        val_acc = accuracy(eval_logits, g_attacked.labels, g_attacked.val_mask)
        test_acc = accuracy(eval_logits, g_attacked.labels, g_attacked.test_mask)
        history.append(EpochRecord(epoch=epoch, train_loss=loss,
                                   val_acc=val_acc, test_acc=test_acc))
        if val_acc > best_val:
            best_val = val_acc
            best = params
            since_best = 0
        else:
            if val_acc == best_val:
                best = params
            since_best += 1
            if since_best >= config.patience:
                break
    return best, history


def history_to_csv(history: list) -> str:
    lines = ["epoch,train_loss,val_acc,test_acc"]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.train_loss:.10g},{rec.val_acc:.10g},{rec.test_acc:.10g}")
    return "\n".join(lines) + "\n"
