"""Contrastive objectives over cosine similarity kernels.

``h(x, y) = exp(cos(x, y) / tau)``. Global losses take per-sample features
``(D,)`` or batches ``(B, D)``; frame-level losses take ``(T, D)`` or
``(B, T, D)``. Batched losses are averaged over the batch axis.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn


EPS = 1e-12


def _batched(x, ndim):
    x = tn.as_tensor(x)
    if x.ndim == ndim - 1:
        return tn.reshape(x, (1,) + x.shape)
    if x.ndim != ndim:
        raise ValueError(f"expected {ndim - 1}-d or {ndim}-d features, got shape {x.shape}")
    return x


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def sim_h(x, y, tau):
    """Similarity kernel ``exp(x.y / (|x| |y| tau))`` as a scalar tensor."""
    _check_tau(tau)
    xn = tn.l2_normalize(tn.as_tensor(x), axis=-1)
    yn = tn.l2_normalize(tn.as_tensor(y), axis=-1)
    return tn.exp(tn.mul(tn.sum_(tn.mul(xn, yn), axis=-1), 1.0 / tau))


def _bank_matrix(bank):
    vecs = bank.negatives() if hasattr(bank, "negatives") else np.asarray(bank, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] == 0:
        raise ValueError("memory bank is empty; enqueue keys before computing the loss")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("memory bank holds a zero vector")
    return tn.Tensor(vecs / norms)


def global_infonce(q, k_pos, bank, tau):
    """InfoNCE of queries against their positive keys and a bank of negatives."""
    _check_tau(tau)
    q, k_pos = _batched(q, 2), _batched(k_pos, 2)
    if q.shape != k_pos.shape:
        raise ValueError(f"query {q.shape} and key {k_pos.shape} shapes differ")
    negs = _bank_matrix(bank)
    qn = tn.l2_normalize(q, axis=-1, eps=EPS)
    kn = tn.l2_normalize(k_pos, axis=-1, eps=EPS)
    pos = tn.exp(tn.mul(tn.sum_(tn.mul(qn, kn), axis=-1), 1.0 / tau))
    neg = tn.sum_(tn.exp(tn.mul(tn.matmul(qn, tn.transpose(negs, (1, 0))), 1.0 / tau)), axis=-1)
    return tn.mean(tn.neg(tn.log(tn.div(pos, tn.add(pos, neg)))))


def inter_modal_loss(rgb_q, flow_k, flow_bank, flow_q, rgb_k, rgb_bank, tau):
    """RGB queries against flow keys plus flow queries against RGB keys."""
    return tn.add(
        global_infonce(rgb_q, flow_k, flow_bank, tau),
        global_infonce(flow_q, rgb_k, rgb_bank, tau),
    )


def _frame_sims(a, b, tau):
    """(B, T, T) kernel matrix ``h(a(i), b(j))``."""
    an = tn.l2_normalize(a, axis=-1, eps=EPS)
    bn = tn.l2_normalize(b, axis=-1, eps=EPS)
    return tn.exp(tn.mul(tn.matmul(an, tn.transpose(bn, (0, 2, 1))), 1.0 / tau))


def _local_terms(rgb_lc, flow_lc, tau):
    _check_tau(tau)
    rgb_lc, flow_lc = _batched(rgb_lc, 3), _batched(flow_lc, 3)
    if rgb_lc.shape != flow_lc.shape:
        raise ValueError(f"local feature shapes differ: {rgb_lc.shape} vs {flow_lc.shape}")
    sims = _frame_sims(rgb_lc, flow_lc, tau)
    eye = np.eye(rgb_lc.shape[1])
    pos = tn.sum_(tn.mul(sims, eye), axis=-1)  # (B, T)
    den = tn.sum_(sims, axis=-1)
    return rgb_lc, pos, den


def _outer(pos, den):
    # -sum_i log(pos_i / den_i), averaged over the batch
    return tn.mean(tn.neg(tn.sum_(tn.log(tn.div(pos, den)), axis=-1)))


def lmcl(rgb_lc, flow_lc, tau):
    """Frame-level contrast: same-timestamp flow feature is the positive."""
    _, pos, den = _local_terms(rgb_lc, flow_lc, tau)
    return _outer(pos, den)


def lmcl_fra(rgb_lc, flow_lc, rotated_lc, tau):
    """Frame-level contrast with every rotated-flow frame as an extra negative."""
    rgb_lc, pos, den = _local_terms(rgb_lc, flow_lc, tau)
    rotated_lc = _batched(rotated_lc, 3)
    if rotated_lc.shape != rgb_lc.shape:
        raise ValueError(f"rotated features {rotated_lc.shape} do not match {rgb_lc.shape}")
    extra = tn.sum_(_frame_sims(rgb_lc, rotated_lc, tau), axis=-1)
    return _outer(pos, tn.add(den, extra))


def lmcl_ablation(rgb_lc, flow_lc, augmented, tau):
    """Positive against augmented flows only, one negative per augmentation.

    ``augmented`` is a list of local feature sets, each shaped like
    ``flow_lc``; the negative for timestamp i is the i-th frame of each.
    """
    _check_tau(tau)
    if not augmented:
        raise ValueError("need at least one augmented feature set")
    rgb_lc, flow_lc = _batched(rgb_lc, 3), _batched(flow_lc, 3)
    if rgb_lc.shape != flow_lc.shape:
        raise ValueError(f"local feature shapes differ: {rgb_lc.shape} vs {flow_lc.shape}")
    rn = tn.l2_normalize(rgb_lc, axis=-1, eps=EPS)

    def same_time(other):
        other = _batched(other, 3)
        if other.shape != rgb_lc.shape:
            raise ValueError(f"augmented features {other.shape} do not match {rgb_lc.shape}")
        on = tn.l2_normalize(other, axis=-1, eps=EPS)
        return tn.exp(tn.mul(tn.sum_(tn.mul(rn, on), axis=-1), 1.0 / tau))

    pos = same_time(flow_lc)
    den = pos
    for aug in augmented:
        den = tn.add(den, same_time(aug))
    return _outer(pos, den)


@dataclass
class LossBreakdown:
    l_rgb: float
    l_flow: float
    l_rf: float
    l_lmc: float
    total: float
    lam: float
    graph: tn.Tensor = field(default=None, repr=False, compare=False)

    def row(self):
        return (self.l_rgb, self.l_flow, self.l_rf, self.l_lmc, self.total)


def total_loss(parts, lam):
    """Combine ``l_rgb + l_flow + l_rf + lam * l_lmc``.

    ``parts`` maps the four names to scalar tensors (or floats); a missing
    entry counts as zero. The returned breakdown carries the differentiable
    total in ``graph``.
    """
    terms = {}
    for key in ("l_rgb", "l_flow", "l_rf", "l_lmc"):
        v = parts.get(key)
        terms[key] = tn.as_tensor(0.0 if v is None else v)
    total = tn.add(tn.add(tn.add(terms["l_rgb"], terms["l_flow"]), terms["l_rf"]), tn.mul(terms["l_lmc"], lam))
    return LossBreakdown(
        l_rgb=terms["l_rgb"].item(),
        l_flow=terms["l_flow"].item(),
        l_rf=terms["l_rf"].item(),
        l_lmc=terms["l_lmc"].item(),
        total=total.item(),
        lam=float(lam),
        graph=total,
    )
