"""Central finite-difference gradient checking (64-bit only)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


@dataclass
class ParamCheck:
    name: str
    checked: int
    kinks: int
    max_rel_error: float
    mean_rel_error: float


@dataclass
class GradCheckReport:
    params: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def mean_rel_error(self):
        total = sum(p.checked for p in self.params)
        if not total:
            return 0.0
        return sum(p.mean_rel_error * p.checked for p in self.params) / total

    @property
    def checked(self):
        return sum(p.checked for p in self.params)

    @property
    def kinks(self):
        return sum(p.kinks for p in self.params)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def summary(self):
        return (f"max_rel={self.max_rel_error:.3e} mean_rel={self.mean_rel_error:.3e} "
                f"checked={self.checked} kinks_excluded={self.kinks}")


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def finite_diff_check(loss_fn, params, h=1e-5, tolerance=1e-4, kink_tol=1e-3,
                      max_coords=None, seed=0, order=2, noise_factor=1e3):
    """Compare analytic gradients of ``loss_fn`` with central differences.

    ``loss_fn`` takes a dict name -> Tensor and returns a scalar Tensor.
    ``params`` maps names to float64 arrays; they are perturbed in place and
    restored. A coordinate is treated as a non-differentiable point (and
    excluded) when its one-sided slopes disagree by more than
    ``kink_tol * max(1, |slope|)``. With ``max_coords`` at most that many
    coordinates per parameter are sampled.

    ``order=2`` is the three-point central difference ``(f(x+h) - f(x-h)) / 2h``;
    ``order=4`` adds the +-2h samples for the five-point central stencil,
    whose truncation error is O(h^4). Use it where gradients are small
    relative to the curvature and the O(h^2) term dominates the comparison.
    The extra samples also sharpen kink detection: a coordinate is excluded
    when its second differences at h and 2h disagree by more than
    ``noise_factor`` times the float64 rounding level ``eps * max(1, |f|) / h``.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"finite_diff_check needs float64 parameters; {name} is {arr.dtype}")
    tensors = {name: Tensor(arr, requires_grad=True, name=name) for name, arr in params.items()}
    grads = backward(loss_fn(tensors), tensors)

    def evaluate():
        return float(loss_fn(tensors).data)

    curvature_noise = noise_factor * np.finfo(np.float64).eps / h
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name in sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        errors, kinks = [], 0
        f0 = evaluate()
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            s_plus, s_minus = (fp - f0) / h, (f0 - fm) / h
            if abs(s_plus - s_minus) > kink_tol * max(1.0, abs(s_plus), abs(s_minus)):
                flat[i] = orig
                kinks += 1
                continue
            if order == 2:
                numeric = (fp - fm) / (2 * h)
            else:
                flat[i] = orig + 2 * h
                fpp = evaluate()
                flat[i] = orig - 2 * h
                fmm = evaluate()
                # smooth f: the second difference over 2h is twice the one over h,
                # up to O(h^3); a slope jump anywhere in [x-2h, x+2h] breaks that
                c1 = (fp - 2 * f0 + fm) / h
                c2 = (fpp - 2 * f0 + fmm) / (2 * h)
                if abs(c2 - 2 * c1) > curvature_noise * max(1.0, abs(f0)):
                    flat[i] = orig
                    kinks += 1
                    continue
                numeric = (8 * (fp - fm) - (fpp - fmm)) / (12 * h)
            flat[i] = orig
            errors.append(relative_error(grads[name].reshape(-1)[i], numeric))
        errors = np.asarray(errors, dtype=np.float64)
        report.params.append(ParamCheck(
            name=name,
            checked=int(errors.size),
            kinks=kinks,
            max_rel_error=float(errors.max()) if errors.size else 0.0,
            mean_rel_error=float(errors.mean()) if errors.size else 0.0,
        ))
    return report
