"""Central finite-difference gradient oracle shared by the autodiff tests."""

import torch


def fd_relative_error(fn, tensors, h=1e-6, max_entries=None, seed=0):
    """Compare autograd against central differences of the scalar ``fn()``.

    ``tensors`` are float64 leaves (parameters or inputs) that ``fn`` reads.
    Returns ``||g_auto - g_fd|| / max(||g_fd||, ||g_auto||)`` over all
    checked entries.  ``max_entries`` subsamples entries per tensor.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    auto = [t.grad.detach().clone().reshape(-1) for t in tensors]
    gen = torch.Generator().manual_seed(seed)
    diffs, refs, autos = [], [], []
    with torch.no_grad():
        for t, g in zip(tensors, auto):
            flat = t.view(-1)
            idx = torch.arange(flat.numel())
            if max_entries and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_entries]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                diffs.append(g[i].item() - num)
                refs.append(num)
                autos.append(g[i].item())
    d, r, a = (torch.tensor(v) for v in (diffs, refs, autos))
    scale = max(r.norm().item(), a.norm().item(), 1e-300)
    return d.norm().item() / scale


def probe(out, seed=1):
    """Fixed random linear functional turning any tensor output into a scalar."""
    g = torch.Generator().manual_seed(seed)
    return (out * torch.randn(out.shape, generator=g, dtype=out.dtype)).sum()
