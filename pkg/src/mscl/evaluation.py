"""Downstream protocols on frozen RGB features: k-NN retrieval and linear probe."""

import numpy as np

from . import tensor as tn
from .synth import clip_at, valid_starts


def center_clip(video, T, stride):
    starts = valid_starts(video.num_frames, T, stride)
    return clip_at(video, starts[len(starts) // 2], T, stride)[0]


def embed_videos(encoder, videos, T=8, stride=1, batch_size=32):
    """Pooled last-stage RGB features (no projection head) of each video's centre clip."""
    if not videos:
        raise ValueError("no videos to embed")
    feats = []
    with tn.no_grad():
        for i in range(0, len(videos), batch_size):
            clips = np.stack([center_clip(v, T, stride) for v in videos[i : i + batch_size]])
            x = tn.Tensor(np.ascontiguousarray(clips.transpose(0, 4, 1, 2, 3), dtype=np.float64))
            feats.append(encoder.backbone_feature(x).data)
    return np.concatenate(feats)


def _unit(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


def nearest_neighbours(train_feats, test_feats, k):
    """Indices of the ``k`` most cosine-similar training items per test item.

    Ties are broken by training index, so the result is deterministic.
    """
    sims = _unit(np.asarray(test_feats, dtype=np.float64)) @ _unit(np.asarray(train_feats, dtype=np.float64)).T
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


def retrieval(train_feats, train_labels, test_feats, test_labels, ks=(1, 5, 10)):
    """Recall@k: share of test items with a same-class item among their k neighbours."""
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if len(train_labels) == 0 or len(test_labels) == 0:
        raise ValueError("retrieval needs non-empty train and test sets")
    if len(train_feats) != len(train_labels) or len(test_feats) != len(test_labels):
        raise ValueError("feature and label counts differ")
    kmax = max(ks)
    nn = nearest_neighbours(train_feats, test_feats, min(kmax, len(train_labels)))
    hits = train_labels[nn] == test_labels[:, None]
    return {k: float(hits[:, :k].any(axis=1).mean()) for k in ks}


def linear_probe(train_feats, train_labels, test_feats, test_labels, epochs=200, lr=0.1,
                 momentum=0.9, weight_decay=1e-4, batch_size=32, seed=0):
    """Train one linear layer with softmax cross-entropy; return test top-1.

    Features are standardised with training statistics. The encoder that
    produced them is not touched.
    """
    from .training import SGD

    train_feats = np.asarray(train_feats, dtype=np.float64)
    test_feats = np.asarray(test_feats, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if len(train_feats) != len(train_labels) or len(test_feats) != len(test_labels):
        raise ValueError("feature and label counts differ")
    classes = np.unique(train_labels)
    if not np.isin(test_labels, classes).all():
        raise ValueError("test labels contain classes absent from the training set")
    n_cls = int(classes.max()) + 1
    mu = train_feats.mean(axis=0)
    sd = train_feats.std(axis=0)
    sd[sd == 0] = 1.0
    xtr = (train_feats - mu) / sd
    xte = (test_feats - mu) / sd

    rng = np.random.default_rng(seed)
    d = xtr.shape[1]
    params = {"w": rng.normal(0.0, 0.01, size=(n_cls, d)), "b": np.zeros(n_cls)}
    opt = SGD(momentum, weight_decay)
    onehot = np.eye(n_cls)
    for _ in range(epochs):
        order = rng.permutation(len(xtr))
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            w = tn.Tensor(params["w"], requires_grad=True)
            b = tn.Tensor(params["b"], requires_grad=True)
            logits = tn.add(tn.matmul(tn.Tensor(xtr[idx]), tn.transpose(w, (1, 0))), b)
            probs = tn.softmax(logits, axis=-1)
            picked = tn.sum_(tn.mul(probs, onehot[train_labels[idx]]), axis=-1)
            loss = tn.mean(tn.neg(tn.log(picked)))
            tn.backward(loss)
            opt.step(params, {"w": w.grad, "b": b.grad}, lr)
    pred = np.argmax(xte @ params["w"].T + params["b"], axis=1)
    return float((pred == test_labels).mean())
