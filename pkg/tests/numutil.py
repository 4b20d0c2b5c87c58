"""Shared numeric helpers for gradient and oracle checks."""

import itertools
import math

import torch


def central_difference_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar function at x (64-bit)."""
    assert x.dtype == torch.float64, "finite differences need float64"
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        fp = float(fn(x))
        flat[i] = orig - eps
        fm = float(fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(b.norm().item(), 1e-12)
    return ((a - b).norm() / denom).item()


def collapse_path(path, blank: int):
    """CTC collapse: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for s in path:
        if s != prev:
            out.append(s)
        prev = s
    return [s for s in out if s != blank]


def ctc_brute_force(logits: torch.Tensor, target, blank: int) -> float:
    """Loss by enumerating every frame path and filtering by collapse rule."""
    lp = torch.log_softmax(logits.double(), dim=1)
    T, V = lp.shape
    target = list(int(t) for t in target)
    total = None
    for path in itertools.product(range(V), repeat=T):
        if collapse_path(path, blank) != target:
            continue
        score = sum(float(lp[t, path[t]]) for t in range(T))
        total = score if total is None else _logaddexp(total, score)
    if total is None:
        return float("inf")
    return -total


def _logaddexp(a: float, b: float) -> float:
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))
