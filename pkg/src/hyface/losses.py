"""Training objectives.

Each loss accepts torch tensors (differentiable) or array-likes, and
returns a scalar tensor.  ``total_vc_loss`` composes the generator-side
objective; the discriminator loss and the average-F0 loss are separate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .errors import FrameMismatch, ShapeMismatch, StructureMismatch

LOG_2PI = math.log(2 * math.pi)


def _t(x, like=None):
    if torch.is_tensor(x):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.array(x, dtype=np.float64), dtype=dtype)


def _values(x):
    """Accept F0Contour-like objects as well as arrays."""
    if torch.is_tensor(x) or isinstance(x, np.ndarray):
        return x
    return getattr(x, "values", x)


@dataclass
class LossBreakdown:
    recon: float = 0.0
    kl: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    fm: float = 0.0
    ff: float = 0.0
    af: float = 0.0
    total_vc: float = 0.0
    weights: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        if not d["weights"]:
            d.pop("weights")
        return d


def recon_loss(x_mel, x_hat_mel):
    """Mean absolute difference between log-mel spectrograms."""
    a = _t(x_mel)
    b = _t(x_hat_mel, a)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mel shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean(torch.abs(a - b))


def gaussian_log_prob(x, mean, log_std):
    return -log_std - 0.5 * LOG_2PI - 0.5 * ((x - mean) * torch.exp(-log_std)) ** 2


def kl_loss(z, post_mean, post_log_std, prior_mean, prior_log_std, z_p=None, flow_log_det=0.0):
    """Single-sample estimate ``log q(z) - [log N(f(z); mu_p, sigma_p) + log|det df/dz|]``.

    ``z`` is the posterior sample, ``z_p`` its image under the flow (``z``
    itself when omitted, i.e. identity flow) and ``flow_log_det`` the flow
    log-determinant per batch item.  The result is averaged over every
    latent element (batch, dims and frames).
    """
    z = _t(z)
    post_mean, post_log_std = _t(post_mean, z), _t(post_log_std, z)
    prior_mean, prior_log_std = _t(prior_mean, z), _t(prior_log_std, z)
    z_p = z if z_p is None else _t(z_p, z)
    shapes = {tuple(a.shape) for a in (z, post_mean, post_log_std, prior_mean, prior_log_std, z_p)}
    if len(shapes) != 1:
        raise ShapeMismatch(f"latent shapes differ: {sorted(shapes)}")
    log_q = gaussian_log_prob(z, post_mean, post_log_std)
    log_p = gaussian_log_prob(z_p, prior_mean, prior_log_std)
    ld = _t(flow_log_det, z)
    per_item = z[0].numel() if z.dim() > 1 else z.numel()
    return torch.mean(log_q - log_p) - torch.sum(ld) / (per_item * (z.shape[0] if z.dim() > 1 else 1))


def kl_closed_form(post_mean, post_log_std, prior_mean, prior_log_std):
    """Exact Gaussian KL (identity flow only), averaged over elements."""
    mq, lq = _t(post_mean), _t(post_log_std)
    mp, lp = _t(prior_mean, mq), _t(prior_log_std, mq)
    kl = lp - lq + (torch.exp(2 * lq) + (mq - mp) ** 2) / (2 * torch.exp(2 * lp)) - 0.5
    return torch.mean(kl)


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    return [x]


def adv_d_loss(d_real_logits, d_fake_logits):
    """Least-squares discriminator loss, mean over sub-discriminators."""
    real, fake = _as_list(d_real_logits), _as_list(d_fake_logits)
    if len(real) != len(fake):
        raise ShapeMismatch("real and fake logits come from different discriminator configs")
    terms = []
    for r, f in zip(real, fake):
        r = _t(r)
        f = _t(f, r)
        terms.append(torch.mean((r - 1.0) ** 2) + torch.mean(f**2))
    return torch.stack(terms).mean()


def adv_g_loss(d_fake_logits):
    fake = _as_list(d_fake_logits)
    if not fake:
        raise ShapeMismatch("no logits")
    return torch.stack([torch.mean((_t(f) - 1.0) ** 2) for f in fake]).mean()


def _feature_lists(feats):
    lists = getattr(feats, "features", feats)
    if lists and not isinstance(lists[0], (list, tuple)):
        lists = [lists]
    return lists


def fm_loss(real_feats, fake_feats):
    """Sum over layers of ``mean|D_l(y) - D_l(y_hat)|``, mean over sub-discriminators.

    Real-side features are detached when they are tensors.
    """
    real, fake = _feature_lists(real_feats), _feature_lists(fake_feats)
    if len(real) != len(fake) or any(len(a) != len(b) for a, b in zip(real, fake)):
        raise StructureMismatch("feature structures differ")
    per_disc = []
    for layers_r, layers_f in zip(real, fake):
        total = 0.0
        for r, f in zip(layers_r, layers_f):
            r = _t(r)
            f = _t(f, r)
            if r.shape != f.shape:
                raise StructureMismatch(f"layer shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
            total = total + torch.mean(torch.abs(r.detach() - f))
        per_disc.append(total)
    return torch.stack([_t(p) for p in per_disc]).mean()


def ff_loss(pred, gt, voiced=None, voiced_only=False):
    """Mean squared frame-wise F0 error in Hz^2.

    By default every frame counts, unvoiced ground truth being 0 Hz.  With
    ``voiced_only`` only frames voiced in ``voiced`` (or ``gt > 0``) count.
    """
    p = _t(_values(pred))
    g = _t(_values(gt), p)
    if p.shape != g.shape:
        raise FrameMismatch(tuple(p.shape), tuple(g.shape))
    if not voiced_only:
        return torch.mean((g - p) ** 2)
    mask = (g > 0) if voiced is None else _t(voiced).bool()
    mask = mask.to(p.dtype)
    return torch.sum(mask * (g - p) ** 2) / torch.clamp(mask.sum(), min=1.0)


def af_loss(pred_avg, gt_avg):
    """Squared error (Hz^2) between predicted and reference average F0; batch mean."""
    p = _t(pred_avg)
    g = _t(gt_avg, p)
    return torch.mean((g - p) ** 2)


VC_TERMS = ("recon", "kl", "adv_g", "fm", "ff")


def total_vc_loss(parts, weights=None):
    """Weighted sum of the five generator-side terms (unit weights by default).

    ``parts`` may be a LossBreakdown or a mapping; ``adv_d`` and ``af`` are
    ignored.
    """
    get = parts.get if isinstance(parts, dict) else (lambda k: getattr(parts, k))
    weights = weights or {}
    total = 0.0
    for k in VC_TERMS:
        total = total + weights.get(k, 1.0) * get(k)
    return total
