"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, get_tape, no_grad

MAX_FULL = 4096
SUBSET = 64


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} max_rel={self.max_rel_error:.3e} max_abs={self.max_abs_error:.3e} "
                f"n={self.n_checked} tol={self.tol:g}")


def grad_check(f, inputs, h: float = 1e-5, tol: float = 1e-5, seed: int = 0,
               max_full: int = MAX_FULL, subset: int = SUBSET) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(*inputs)`` with central differences.

    Every coordinate is perturbed when a tensor has at most ``max_full``
    elements, otherwise a random ``subset`` of coordinates. The relative error
    of a coordinate is ``|an - fd| / max(|an|, |fd|, floor)``, where ``floor``
    is 1e-3 of the largest finite-difference magnitude seen for that tensor;
    this keeps coordinates with (near) zero gradient from dominating.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    get_tape().clear()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate():
        with no_grad():
            return float(f(*inputs).data)

    worst_rel = worst_abs = 0.0
    n_checked = 0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if flat.size <= max_full:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=subset, replace=False)
        fd = np.empty(coords.size)
        for n, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            fd[n] = (fp - fm) / (2.0 * h)
        a = an.reshape(-1)[coords]
        err = np.abs(a - fd)
        floor = max(1e-3 * float(np.max(np.abs(fd))) if fd.size else 0.0, 1e-10)
        rel = err / np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)
        worst_rel = max(worst_rel, float(rel.max(initial=0.0)))
        worst_abs = max(worst_abs, float(err.max(initial=0.0)))
        n_checked += coords.size
    for t in inputs:
        t.grad = None
    return GradCheckReport(worst_rel, worst_abs, n_checked, tol)


def directional_grad_check(f, inputs, h: float = 1e-4, tol: float = 1e-5, seed: int = 0,
                           rel_floor: float = 1e-5) -> GradCheckReport:
    """Per-tensor directional derivative check.

    For each input a random unit direction ``v`` is drawn and ``<grad, v>`` is
    compared with ``(f(x + h v) - f(x - h v)) / 2h``. Two evaluations per
    tensor keep this affordable for models with many parameters. Errors are
    measured relative to ``max(|an|, |fd|, floor)`` with ``floor`` equal to
    ``rel_floor`` times the largest directional derivative over all inputs:
    tensors whose sensitivity is that far below the rest cannot be resolved
    by differencing a double-precision loss.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    get_tape().clear()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)
    pairs = []
    for t in inputs:
        an = np.zeros_like(t.data) if t.grad is None else t.grad
        v = rng.standard_normal(t.data.shape)
        v /= np.linalg.norm(v)
        orig = t.data.copy()
        with no_grad():
            t.data = orig + h * v
            fp = float(f(*inputs).data)
            t.data = orig - h * v
            fm = float(f(*inputs).data)
        t.data = orig
        pairs.append((float(np.sum(an * v)), (fp - fm) / (2.0 * h)))
    scale = max(max(abs(a), abs(d)) for a, d in pairs)
    floor = max(rel_floor * scale, 1e-300)
    worst_rel = worst_abs = 0.0
    for a, fd in pairs:
        err = abs(a - fd)
        worst_rel = max(worst_rel, err / max(abs(a), abs(fd), floor))
        worst_abs = max(worst_abs, err)
    for t in inputs:
        t.grad = None
    return GradCheckReport(worst_rel, worst_abs, len(inputs), tol)
