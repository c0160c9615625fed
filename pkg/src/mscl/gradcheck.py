"""Central finite-difference checks for the autodiff engine and the losses."""

import numpy as np

from . import tensor as tn
from .contrastive import global_infonce, inter_modal_loss, lmcl, lmcl_ablation, lmcl_fra, total_loss

EPS = 1e-5
TOL = 1e-4


def numeric_grad(fn, arrays, name, eps=EPS, index=None):
    """Central difference of ``fn(**arrays)`` w.r.t. ``arrays[name]``.

    ``index`` restricts the probe to a list of flat positions (others stay 0).
    """
    x = arrays[name]
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + eps
        hi = float(fn(**arrays))
        flat[i] = old - eps
        lo = float(fn(**arrays))
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """Norm-wise ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check(build, arrays, eps=EPS, samples=None, rng=None):
    """Compare autodiff against central differences for every input array.

    ``build(**tensors)`` returns a scalar tensor. With ``samples`` set, only
    that many randomly chosen entries per input are probed.
    Returns ``{name: relative error}``.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    leaves = {k: tn.Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    root = build(**leaves)
    tn.backward(root)

    def value(**kw):
        with tn.no_grad():
            return build(**{k: tn.Tensor(v) for k, v in kw.items()}).item()

    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, x in arrays.items():
        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(x)
        if samples is None or samples >= x.size:
            idx = None
        else:
            idx = rng.choice(x.size, size=samples, replace=False)
        numeric = numeric_grad(value, arrays, name, eps, idx)
        if idx is not None:
            a = analytic.reshape(-1)[idx]
            numeric = numeric.reshape(-1)[idx]
        else:
            a = analytic
        errors[name] = relative_error(a, numeric)
    return errors


def loss_cases(seed=0, dim=8, T=4, bank=8, tau=0.07, lam=1.0, n_aug=3):
    """Random feature sets and a builder for every contrastive loss.

    Returns ``{loss name: (build, arrays)}``.
    """
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    rgb_bank, flow_bank = r(bank, dim), r(bank, dim)
    cases = {}
    cases["global_infonce"] = (
        lambda q, k: global_infonce(q, k, rgb_bank, tau),
        {"q": r(dim), "k": r(dim)},
    )
    cases["inter_modal"] = (
        lambda vq, mk, mq, vk: inter_modal_loss(vq, mk, flow_bank, mq, vk, rgb_bank, tau),
        {"vq": r(dim), "mk": r(dim), "mq": r(dim), "vk": r(dim)},
    )
    cases["lmcl"] = (lambda v, m: lmcl(v, m, tau), {"v": r(T, dim), "m": r(T, dim)})
    cases["lmcl_fra"] = (
        lambda v, m, mr: lmcl_fra(v, m, mr, tau),
        {"v": r(T, dim), "m": r(T, dim), "mr": r(T, dim)},
    )
    aug = {f"a{i}": r(T, dim) for i in range(n_aug)}
    cases["lmcl_ablation"] = (
        lambda v, m, **a: lmcl_ablation(v, m, [a[f"a{i}"] for i in range(n_aug)], tau),
        {"v": r(T, dim), "m": r(T, dim), **aug},
    )

    def full(vq, vk, mq, mk, vl, ml, mr):
        parts = {
            "l_rgb": global_infonce(vq, vk, rgb_bank, tau),
            "l_flow": global_infonce(mq, mk, flow_bank, tau),
            "l_rf": inter_modal_loss(vq, mk, flow_bank, mq, vk, rgb_bank, tau),
            "l_lmc": lmcl_fra(vl, ml, mr, tau),
        }
        return total_loss(parts, lam).graph

    cases["total"] = (
        full,
        {"vq": r(dim), "vk": r(dim), "mq": r(dim), "mk": r(dim), "vl": r(T, dim), "ml": r(T, dim), "mr": r(T, dim)},
    )
    return cases


def check_losses(seed=0, eps=EPS):
    """Worst relative error per loss over all of its inputs."""
    return {name: max(check(build, arrays, eps).values()) for name, (build, arrays) in loss_cases(seed).items()}
