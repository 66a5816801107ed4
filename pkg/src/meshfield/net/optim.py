from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import sign_trace
from .params import ParameterSet


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ParameterSet, **kw) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), **kw)


def adam_step(params: ParameterSet, grads, state: AdamState, lr) -> None:
    """Bias-corrected Adam update, in place.

    ``lr`` may be a scalar or a per-entry array (zero freezes an entry).
    """
    g = grads.flat if isinstance(grads, ParameterSet) else np.asarray(grads)
    if g.shape != params.flat.shape:
        raise ValueError("gradient and parameter shapes differ")
    if not np.isfinite(g).all():
        raise NonFiniteGradient("non-finite gradient")
    dt = params.flat.dtype
    g = g.astype(dt, copy=False)
    b1, b2 = dt.type(state.beta1), dt.type(state.beta2)
    state.t += 1
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * g * g
    c1 = dt.type(1.0 - state.beta1 ** state.t)
    c2 = dt.type(1.0 - state.beta2 ** state.t)
    lr = np.asarray(lr, dtype=dt)
    params.flat -= lr * (state.m / c1) / (np.sqrt(state.v / c2) + dt.type(state.eps))


def gradient_check_detail(fn, params, n_probes: int = 64, step: float = 1e-3, seed: int = 0,
                          floor: float = 1e-8, indices=None, max_tries: int | None = None,
                          richardson: bool = False) -> dict:
    """Compare ``fn``'s analytic gradient with central differences.

    ``fn(flat64) -> (value, grad)`` is evaluated on float64 copies of
    ``params`` (a ParameterSet or a flat array).  Relative error per probe is
    ``|a - n| / max(|a|, |n|, floor)``.  With ``richardson`` the central
    differences at ``step`` and ``step / 2`` are combined to cancel the
    second-order truncation term, for functions whose curvature makes the
    plain estimate the dominant error.

    A probe whose two evaluations see a different sign pattern at some
    kink (leaky ReLU, absolute value) straddles a point where the function
    is not differentiable; it is not scored and another probe is drawn.
    """
    flat = params.flat if isinstance(params, ParameterSet) else np.asarray(params)
    x = flat.astype(np.float64).copy()
    _, grad = fn(x.copy())
    grad = np.asarray(grad, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    if indices is None:
        order = rng.permutation(x.size)
        want = min(n_probes, x.size)
    else:
        order = np.asarray(indices)
        want = min(n_probes, len(order))
    max_tries = max_tries or 4 * want
    worst, errors, skipped = 0.0, [], 0
    for i in order[:max_tries]:
        if len(errors) == want:
            break
        steps = (step, step / 2.0) if richardson else (step,)
        est, traces = [], []
        for h in steps:
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            with sign_trace() as tp:
                fp = fn(xp)[0]
            with sign_trace() as tm:
                fm = fn(xm)[0]
            traces += [tp, tm]
            est.append((fp - fm) / (2.0 * h))
        if any(t != traces[0] for t in traces[1:]):
            skipped += 1
            continue
        num = (4.0 * est[1] - est[0]) / 3.0 if richardson else est[0]
        a = grad[i]
        err = abs(a - num) / max(abs(a), abs(num), floor)
        errors.append(err)
        worst = max(worst, err)
    return {"max_rel_error": worst, "checked": len(errors), "skipped": skipped}


def gradient_check(fn, params, n_probes: int = 64, step: float = 1e-3, seed: int = 0,
                   floor: float = 1e-8, indices=None) -> float:
    """Max relative error over the scored probes (see ``gradient_check_detail``)."""
    out = gradient_check_detail(fn, params, n_probes, step, seed, floor, indices)
    if out["checked"] == 0:
        raise ValueError("every probe straddled a kink; use fewer samples or a smaller step")
    return out["max_rel_error"]
