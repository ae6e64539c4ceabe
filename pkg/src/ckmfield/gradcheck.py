"""Finite-difference verification of backpropagated gradients."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    errors: dict = field(default_factory=dict)   # leaf name -> max relative error
    checked: dict = field(default_factory=dict)  # leaf name -> number of entries probed

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def lines(self):
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            yield f"{name:<40s} n={self.checked[name]:<5d} rel_err={err:.3e} {flag}"


def relative_error(analytic, numeric, atol=0.0):
    """Max-norm relative error ``max(|a - n| - atol, 0) / max(max|a|, max|n|)``.

    Normalising by the leaf's gradient scale (rather than entrywise) keeps
    near-zero entries from dominating the report. ``atol`` is the roundoff
    floor of the difference quotient; a leaf whose gradient is identically
    zero (e.g. a bias feeding a one-channel group norm) then reports 0.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if denom == 0.0:
        return 0.0
    diff = np.maximum(np.abs(analytic - numeric) - atol, 0.0)
    return float(diff.max(initial=0.0) / denom)


def grad_check(f, leaves, step=1e-5, tolerance=1e-4, max_entries=None, seed=0, names=None):
    """Compare backprop gradients of scalar ``f()`` with central differences.

    Parameters
    ----------
    f : callable
        Zero-argument function rebuilding the graph and returning a scalar
        :class:`~ckmfield.tensor.DiffTensor`.
    leaves : sequence of DiffTensor
        Leaves to probe; their ``data`` is perturbed in place and restored.
    max_entries : int, optional
        Probe at most this many (seeded-random) entries per leaf.
    """
    names = names or [leaf.name or f"leaf{i}" for i, leaf in enumerate(leaves)]
    for leaf in leaves:
        leaf.grad = None
    out = f()
    out.backward()
    # cancellation noise of (f(x+h) - f(x-h)) / 2h
    atol = 64 * np.finfo(np.float64).eps * max(abs(float(out.data)), 1.0) / step
    analytic = [np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.copy() for leaf in leaves]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, leaf, ga in zip(names, leaves, analytic):
        if not leaf.data.flags.c_contiguous:
            leaf.data = np.ascontiguousarray(leaf.data)
        flat = leaf.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            numeric[n] = (fp - fm) / (2.0 * step)
        report.errors[name] = relative_error(ga.reshape(-1)[idx], numeric, atol)
        report.checked[name] = int(idx.size)
    return report
