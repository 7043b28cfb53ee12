"""Central finite-difference checks against tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .tensor import Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: tuple = None
    errors: list = field(default_factory=list)

    def ok(self, tol):
        return self.checked > 0 and self.max_rel_error <= tol


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor absorbs FD noise on near-zero gradients."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(f, params):
    out = f(params)
    value = float(out.data)
    if not np.isfinite(value):
        bad = Tape.from_output(out).first_nonfinite()
        raise NumericalError(f"non-finite value produced by op {bad.op if bad else '?'}")
    return out, value


def grad_check(f, params, eps=1e-6, n_coords=200, seed=0, floor=1e-6, names=None, max_attempts=None):
    """Compare tape gradients of scalar ``f(params)`` with central differences.

    Coordinates are drawn uniformly over all scalars of the selected
    parameters.  A coordinate whose +/- perturbation changes any relu mask or
    pooling argmax is skipped and redrawn, so only tie-free points count.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    for name, t in params:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks need float64 parameters")
    names = list(names) if names is not None else params.names()
    params.zero_grad()
    out, _ = _evaluate(f, params)
    base_sig = Tape.from_output(out).kink_signature()
    out.backward()
    analytic = {n: params.grad(n).copy() for n in names}

    sizes = np.array([params[n].data.size for n in names])
    cum = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, 0, 0)
    attempts = 0
    max_attempts = max_attempts or 5 * n_coords
    while report.checked < n_coords and attempts < max_attempts:
        attempts += 1
        flat = int(rng.integers(cum[-1]))
        which = int(np.searchsorted(cum, flat, side="right"))
        name = names[which]
        idx = np.unravel_index(flat - (cum[which - 1] if which else 0), params[name].shape)
        data = params[name].data
        orig = data[idx]
        data[idx] = orig + eps
        up, f_up = _evaluate(f, params)
        sig_up = Tape.from_output(up).kink_signature()
        data[idx] = orig - eps
        down, f_down = _evaluate(f, params)
        sig_down = Tape.from_output(down).kink_signature()
        data[idx] = orig
        if sig_up != base_sig or sig_down != base_sig:
            report.skipped += 1
            continue
        numeric = (f_up - f_down) / (2 * eps)
        a = float(analytic[name][idx])
        err = relative_error(a, numeric, floor)
        report.errors.append((name, tuple(int(i) for i in idx), a, numeric, err))
        report.checked += 1
        if err >= report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, tuple(int(i) for i in idx), a, numeric)
    params.zero_grad()
    return report


# -- network-level suites ----------------------------------------------------

def _pair_targets(map_size, geometry, boxes, dtype):
    from .supervision import encode_groundtruth
    return np.stack([encode_groundtruth(b, geometry, (map_size, map_size), dtype=dtype).maps
                     for b in boxes])


def head_gradient_check(cfg, fs_size=31, n_coords=200, eps=1e-5, seed=0):
    """Focal loss of the correlation/voting head on a 2-pair batch.

    Template and search features are drawn at random (search ``fs_size``
    square) and are themselves checked alongside every head parameter.
    """
    from . import ops
    from .backbone import GeometryMap
    from .network import Network
    from .supervision import focal_loss

    net = Network(cfg.replace(dtype="float64"))
    params = net.init_params(cfg.seed)
    head_names = [n for n in params.names() if not n.startswith(("backbone", "adapter"))]
    rng = np.random.default_rng(seed)
    h = cfg.template_feat
    params.add("input.F_T", rng.random((2, h, h, cfg.channels)))
    params.add("input.F_S", rng.random((2, fs_size, fs_size, cfg.channels)))

    def logits_of(p):
        kernel = net.template_kernel(p["input.F_T"], p)
        return net.head(kernel, p["input.F_S"], p)

    size = logits_of(params).shape[-2]
    # boxes in map cells: the head geometry is irrelevant to the gradient
    boxes = [(0.2 * size, 0.25 * size, 0.7 * size, 0.8 * size),
             (0.1 * size, 0.3 * size, 0.55 * size, 0.6 * size)]
    target = _pair_targets(size, GeometryMap(1.0, 0.0), boxes, np.float64)
    f = lambda p: focal_loss(ops.sigmoid(logits_of(p)), target, cfg.focal_alpha, cfg.focal_beta)
    return grad_check(f, params, eps=eps, n_coords=n_coords, seed=seed,
                      names=head_names + ["input.F_T", "input.F_S"])


def network_gradient_check(cfg, n_coords=200, eps=1e-5, seed=0):
    """Focal loss from raw images through every parameter, 2-pair batch."""
    from . import ops
    from .network import Network
    from .supervision import focal_loss

    net = Network(cfg.replace(dtype="float64"))
    params = net.init_params(cfg.seed)
    rng = np.random.default_rng(seed)
    template = rng.random((2, cfg.template_size, cfg.template_size, 3))
    search = rng.random((2, cfg.search_size, cfg.search_size, 3))
    n = cfg.search_size
    boxes = [(0.3 * n, 0.35 * n, 0.65 * n, 0.7 * n), (0.25 * n, 0.3 * n, 0.6 * n, 0.62 * n)]
    target = _pair_targets(net.map_size, net.geometry, boxes, np.float64)
    f = lambda p: focal_loss(ops.sigmoid(net.forward(template, search, p)), target,
                             cfg.focal_alpha, cfg.focal_beta)
    return grad_check(f, params, eps=eps, n_coords=n_coords, seed=seed)
