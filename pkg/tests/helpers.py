import numpy as np
import torch

FD_STEP = 1e-5
FLOOR = 1e-6


def fd_check(loss_fn, tensors, samples=4, step=FD_STEP, seed=0):
    """Compare autograd against central differences on sampled entries.

    ``tensors`` maps names to float64 leaf tensors that ``loss_fn`` reads.
    Returns {name: worst relative error} where the relative error of an
    entry is |a - n| / max(|a|, |n|, FLOOR). The floor keeps gradients that
    are exactly zero (key biases, which softmax ignores) from turning
    round-off into a large ratio.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(tensors.values()), allow_unused=True)
    report = {}
    with torch.no_grad():
        for (name, t), g in zip(tensors.items(), grads):
            g = torch.zeros_like(t) if g is None else g
            flat, gflat = t.view(-1), g.reshape(-1)
            picks = rng.choice(flat.numel(), size=min(samples, flat.numel()), replace=False)
            worst = 0.0
            for idx in picks:
                orig = flat[idx].item()
                flat[idx] = orig + step
                up = loss_fn().item()
                flat[idx] = orig - step
                down = loss_fn().item()
                flat[idx] = orig
                numeric = (up - down) / (2 * step)
                analytic = gflat[idx].item()
                err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)
                worst = max(worst, err)
            report[name] = worst
    return report


def assert_grads_match(report, tol=1e-4):
    bad = {k: v for k, v in report.items() if not v < tol}
    assert not bad, f"finite-difference mismatch (rel. err >= {tol}): {bad}"
