"""Pure numpy attention kernels; the fallback backend and the equivalence
reference for the compiled extension."""

from __future__ import annotations

import numpy as np


def elu_plus_one(x: np.ndarray) -> np.ndarray:
    """Strictly positive feature map: x + 1 above zero, exp(x) below."""
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0))).astype(np.float32)


def vanilla_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(q kᵀ) v, row-stabilized. q: [N,d], k/v: [M,d]."""
    s = q @ k.T
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return (s @ v).astype(np.float32, copy=False)


def linear_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Kernelized attention computed in O(N): contract φ(k)ᵀ with v first."""
    fq = elu_plus_one(q)
    fk = elu_plus_one(k)
    kv = fk.T @ v                      # [d, d]
    num = fq @ kv                      # [N, d]
    den = fq @ fk.sum(axis=0)[:, None].reshape(-1, 1)  # [N, 1]
    return (num / den).astype(np.float32, copy=False)
