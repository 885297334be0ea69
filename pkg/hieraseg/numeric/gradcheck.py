"""
`hieraseg` central finite-difference gradient checks.

Relu and max pooling are only piecewise smooth. When a +-step perturbation
flips one of their selections the central difference straddles a kink and
says nothing about the derivative, so the step is shrunk by 10 for that
entry until both sides take the same branches as the unperturbed pass.
Entries that still straddle a kink after `refinements` shrinks are listed
in `kinks` rather than compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hieraseg import settings

from .tensor import Tensor, trace_branches


@dataclass
class GradcheckReport:
    ok: bool
    checked: int
    max_rel_error: float
    max_abs_error: float
    failures: list[tuple[int, tuple, float, float]] = field(default_factory=list)
    refined: int = 0
    kinks: list[tuple[int, tuple]] = field(default_factory=list)

    def __str__(self):
        head = f"{'ok' if self.ok else 'FAILED'}: {self.checked} entries, max rel {self.max_rel_error:.3e}"
        if self.refined or self.kinks:
            head = f"{head}, {self.refined} refined, {len(self.kinks)} at kinks"
        if not self.failures:
            return head
        worst = ", ".join(
            f"input {i}{idx}: analytic {a:.6e} numeric {n:.6e}" for i, idx, a, n in self.failures[:5]
        )
        return f"{head}; {worst}"


def _evaluate(fn: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    with trace_branches() as taken:
        value = float(np.sum(fn().data))
    return value, taken


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = settings.GRADCHECK_STEP,
    rtol: float = settings.GRADCHECK_RTOL,
    atol: float = settings.GRADCHECK_ATOL,
    refinements: int = settings.GRADCHECK_REFINEMENTS,
) -> GradcheckReport:
    """
    Compare reverse-mode gradients of `sum(fn())` with respect to each of
    `inputs` against central differences. Entries whose analytic gradient is
    below `atol` in magnitude are compared absolutely at `atol`; the rest by
    relative error against `rtol`.
    """
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None
    with trace_branches() as base:
        out = fn()
    if out.size != 1:
        out = out.sum()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    failures = []
    kinks = []
    refined = 0
    max_rel = 0.0
    max_abs = 0.0
    checked = 0
    for k, tensor in enumerate(inputs):
        tensor.data = np.array(tensor.data, dtype=np.float64)
        for idx in np.ndindex(tensor.shape):
            original = tensor.data[idx]
            h = step
            for attempt in range(refinements + 1):
                tensor.data[idx] = original + h
                plus, plus_taken = _evaluate(fn)
                tensor.data[idx] = original - h
                minus, minus_taken = _evaluate(fn)
                tensor.data[idx] = original
                smooth = _same_branches(plus_taken, base) and _same_branches(minus_taken, base)
                if smooth:
                    break
                h /= 10.0
            if not smooth:
                kinks.append((k, idx))
                continue
            refined += attempt > 0
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[k][idx])
            abs_err = abs(a - numeric)
            max_abs = max(max_abs, abs_err)
            checked += 1
            if abs(a) < atol:
                bad = abs_err > atol
            else:
                rel = abs_err / max(abs(a), abs(numeric))
                max_rel = max(max_rel, rel)
                bad = rel > rtol
            if bad:
                failures.append((k, idx, a, numeric))
    for tensor in inputs:
        tensor.grad = None
    return GradcheckReport(
        ok=not failures,
        checked=checked,
        max_rel_error=max_rel,
        max_abs_error=max_abs,
        failures=failures,
        refined=refined,
        kinks=kinks,
    )
