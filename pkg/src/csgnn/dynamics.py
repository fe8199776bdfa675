"""Node-feature dynamics driven by the graph gradient operator.

The edge-indexed gradient of node features is (G(A)F)_ijk = A_ij (F_ik - F_jk);
its adjoint aggregates edge quantities back onto nodes. One Euler layer moves
the features along

    F <- F + h * X(F, A),   X(F, A) = -W^T G(A)^T sigma(G(A) (W F)) Ktilde,

with Ktilde = (K + K^T)/2 symmetrized at every evaluation. Two parameterizations
are supported: training the node-side mixing W (with K a positive multiple of
the identity, the configuration with a Frobenius contraction guarantee) or
training the channel-mixing K with W fixed to the identity.

Writing B = I_c (x) G(A)W, the vectorized field is -(Ktilde (x) I_n) B^T sigma(B f),
the preconditioned gradient of the convex energy  E(F) = sum gamma(G(A) W F)
with gamma' = sigma. That structure yields the step-size bound used here: the
field's linearization has l2 norm at most ||Ktilde||_2 * ||G(A)W||_2^2, and for
positive definite Ktilde descent of E (and, for K = lambda*I, nonexpansiveness
in Frobenius norm) holds for h below

    h_safe = 1 / (lam_max(Ktilde)^2 / lam_min(Ktilde) * ||G(A)W||_2^2 + eps).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .activations import leaky_relu, leaky_relu_antiderivative

H_SAFE_EPS = 1e-12


class Parameterization(str, Enum):
    LEARN_W = "learn_w"  # node-side W in R^{n x n} trained, K = lambda * I fixed
    LEARN_K = "learn_k"  # W = I, channel-mixing K in R^{c x c} trained


@dataclass(frozen=True)
class LayerParams:
    """Per-layer feature-dynamics parameters. W=None / K=None mean identity."""

    h: float
    parameterization: Parameterization = Parameterization.LEARN_K
    W: np.ndarray = None
    K: np.ndarray = None
    leaky_slope: float = 0.1

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("step size must be nonnegative")
        if self.parameterization == Parameterization.LEARN_K and self.W is not None:
            raise ValueError("learn_k parameterization keeps W at the identity")
        if self.parameterization == Parameterization.LEARN_W and self.K is not None:
            k = np.asarray(self.K, dtype=float)
            if (k.ndim != 2 or k.shape[0] != k.shape[1]
                    or not np.array_equal(k, k[0, 0] * np.eye(k.shape[0])) or k[0, 0] <= 0):
                raise ValueError("learn_w parameterization requires K = lambda * I with lambda > 0")
        for name in ("W", "K"):
            v = getattr(self, name)
            if v is not None:
                arr = np.array(v, dtype=float)
                if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                    raise ValueError(f"{name} must be square")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class EdgeTensor:
    """Edge-indexed feature differences, zero wherever A_ij = 0."""

    values: np.ndarray  # shape (n, n, c)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValueError(f"edge tensor must have shape (n, n, c), got {v.shape}")
        object.__setattr__(self, "values", v)


def _gradient_raw(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    return a[:, :, None] * (f[:, None, :] - f[None, :, :])


def _adjoint_raw(a: np.ndarray, o: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ijk->ik", a, o) - np.einsum("ji,jik->ik", a, o)


def graph_gradient(a: np.ndarray, f: np.ndarray) -> EdgeTensor:
    """(G(A)F)_ijk = A_ij (F_ik - F_jk)."""
    a = np.asarray(a, dtype=float)
    f = np.asarray(f, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if f.ndim != 2 or f.shape[0] != a.shape[0]:
        raise ValueError(f"features must have {a.shape[0]} rows, got {f.shape}")
    return EdgeTensor(_gradient_raw(a, f))


def graph_gradient_adjoint(a: np.ndarray, o: EdgeTensor) -> np.ndarray:
    """(G(A)^T O)_ik = sum_j (A_ij O_ijk - A_ji O_jik)."""
    a = np.asarray(a, dtype=float)
    vals = o.values if isinstance(o, EdgeTensor) else np.asarray(o, dtype=float)
    if vals.shape[0] != a.shape[0] or vals.shape[1] != a.shape[0]:
        raise ValueError(f"edge tensor shape {vals.shape} does not match adjacency {a.shape}")
    return _adjoint_raw(a, vals)


def symmetrized(k: np.ndarray, c: int) -> np.ndarray:
    """Ktilde = (K + K^T)/2, with K=None meaning the c x c identity."""
    if k is None:
        return np.eye(c)
    return 0.5 * (k + k.T)


def feature_field(f: np.ndarray, a: np.ndarray, params: LayerParams) -> np.ndarray:
    """X(F, A) = -W^T G(A)^T sigma(G(A) W F) Ktilde."""
    w = params.W
    g = f if w is None else w @ f
    pre = _gradient_raw(a, g)
    v = _adjoint_raw(a, leaky_relu(pre, params.leaky_slope))
    if w is not None:
        v = w.T @ v
    if params.K is not None:
        v = v @ symmetrized(params.K, f.shape[1])
    return -v


def feature_step(f: np.ndarray, a: np.ndarray, params: LayerParams) -> np.ndarray:
    """One explicit Euler step F + h X(F, A)."""
    f = np.asarray(f, dtype=float)
    a = np.asarray(a, dtype=float)
    if f.shape[0] != a.shape[0]:
        raise ValueError(f"features ({f.shape}) and adjacency ({a.shape}) disagree on n")
    return f + params.h * feature_field(f, a, params)


def energy(a: np.ndarray, f: np.ndarray, w: np.ndarray = None, leaky_slope: float = 0.1) -> float:
    """Convex layer energy: entrywise antiderivative of sigma over G(A) W F, summed."""
    a = np.asarray(a, dtype=float)
    f = np.asarray(f, dtype=float)
    g = f if w is None else np.asarray(w, dtype=float) @ f
    if g.shape[0] != a.shape[0]:
        raise ValueError("shape mismatch between adjacency and (projected) features")
    return float(leaky_relu_antiderivative(_gradient_raw(a, g), leaky_slope).sum())


def gradient_operator_sq_norm(a: np.ndarray, w: np.ndarray = None) -> float:
    """Exact ||G(A) W||_2^2 via the weighted-Laplacian quadratic form.

    For a single channel, (G(A)v)_ij = A_ij (v_i - v_j), so (G(A))^T G(A) is the
    graph Laplacian with edge weights A_ij^2 + A_ji^2.
    """
    a = np.asarray(a, dtype=float)
    wts = a * a
    wts = wts + wts.T
    lap = np.diag(wts.sum(axis=1)) - wts
    if w is not None:
        lap = w.T @ lap @ w
    return float(max(np.linalg.eigvalsh(lap).max(), 0.0))


def max_feature_step(a: np.ndarray, params: LayerParams, l1_radius: float = 0.0) -> float:
    """Step bound h_safe = 1/(lam_est + eps) for the layer's linearized field.

    For positive definite Ktilde the estimate folds in the conditioning
    lam_max^2/lam_min so that h <= h_safe guarantees energy descent (and, when
    K = lambda*I, Frobenius nonexpansiveness). Indefinite Ktilde falls back to
    the plain operator-norm estimate, a stability clamp only.

    A positive `l1_radius` makes the bound hold uniformly over every adjacency
    matrix within that vectorized-l1 distance of `a` (the gradient operator is
    linear in A with ||G(dA)||_2 <= 2 ||vec(dA)||_1).
    """
    s2 = gradient_operator_sq_norm(a, params.W)
    if l1_radius > 0.0:
        w2 = 1.0 if params.W is None else float(np.linalg.norm(params.W, 2))
        s2 = (np.sqrt(s2) + 2.0 * l1_radius * w2) ** 2
    if params.K is None:
        lam_est = s2
    else:
        eigs = np.linalg.eigvalsh(symmetrized(params.K, params.K.shape[0]))
        if eigs.min() > 0:
            lam_est = eigs.max() ** 2 / eigs.min() * s2
        else:
            lam_est = np.abs(eigs).max() * s2
    return 1.0 / (lam_est + H_SAFE_EPS)


def check_feature_contraction(f: np.ndarray, df: np.ndarray, a: np.ndarray,
                              params: LayerParams, slack: float = 1e-9) -> bool:
    """Does the step shrink the Frobenius distance between F and F + dF?

    Diagnostic for the K = lambda*I configuration; never raises.
    """
    base = feature_step(f, a, params)
    moved = feature_step(f + df, a, params)
    return float(np.linalg.norm(moved - base)) <= float(np.linalg.norm(df)) + slack
