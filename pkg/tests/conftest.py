import torch


def central_diff(fn, tensors: list[torch.Tensor], which: int, flat_index: int, step: float = 1e-3) -> float:
    """Central finite difference of scalar fn w.r.t. one tensor entry."""
    target = tensors[which]
    flat = target.reshape(-1)
    old = flat[flat_index].item()
    with torch.no_grad():
        flat[flat_index] = old + step
        plus = fn(*tensors).item()
        flat[flat_index] = old - step
        minus = fn(*tensors).item()
        flat[flat_index] = old
    return (plus - minus) / (2.0 * step)


def grads_close(analytic: float, numeric: float, rel_tol: float = 1e-3, abs_floor: float = 1e-6) -> bool:
    diff = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    return diff <= abs_floor or diff <= rel_tol * scale


def check_gradients(fn, tensors: list[torch.Tensor], samples_per_tensor: int = 6, seed: int = 0):
    """Compare autograd gradients of scalar fn against central differences.

    Returns the worst (analytic, numeric) pair that failed, or None.
    """
    for t in tensors:
        t.requires_grad_(True)
        if t.grad is not None:
            t.grad = None
    value = fn(*tensors)
    value.backward()
    rng = torch.Generator().manual_seed(seed)
    for which, t in enumerate(tensors):
        n = t.numel()
        idx = torch.randperm(n, generator=rng)[: min(samples_per_tensor, n)]
        for flat_index in idx.tolist():
            analytic = t.grad.reshape(-1)[flat_index].item()
            numeric = central_diff(fn, tensors, which, flat_index)
            if not grads_close(analytic, numeric):
                return which, flat_index, analytic, numeric
    return None


def offgrid_offsets(*shape, generator=None) -> torch.Tensor:
    """Random offsets whose fractional parts stay in [0.3, 0.7].

    Bilinear interpolation is non-smooth on integer grid lines; finite
    differences are only trustworthy away from them.
    """
    base = torch.randint(-1, 2, shape, generator=generator).double()
    frac = 0.3 + 0.4 * torch.rand(*shape, generator=generator, dtype=torch.float64)
    return base + frac
