"""Independent reference implementations shared by the unit and acceptance tests."""
import itertools
import math

import numpy as np
import torch

from hyface.losses import adv_d_loss, adv_g_loss, af_loss, ff_loss, fm_loss, kl_loss, recon_loss


def central_grad(fn, x, eps=1e-6):
    """Central finite-difference gradient of scalar ``fn`` at float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        hi, lo = x.copy(), x.copy()
        hi[i] += eps
        lo[i] -= eps
        g[i] = (fn(hi) - fn(lo)) / (2 * eps)
    return g


def grad_rel_error(loss, inputs, wrt=0):
    """Max relative error between autograd and central differences for input ``wrt``."""
    args = [torch.tensor(a, dtype=torch.float64) for a in inputs]
    args[wrt].requires_grad_(True)
    loss(*args).backward()
    auto = args[wrt].grad.numpy()

    def scalar(v):
        a = [torch.tensor(x, dtype=torch.float64) for x in inputs]
        a[wrt] = torch.tensor(v, dtype=torch.float64)
        return float(loss(*a))

    num = central_grad(scalar, inputs[wrt])
    return float(np.max(np.abs(auto - num)) / max(np.max(np.abs(num)), 1e-12))


def loss_grad_cases(seed=0):
    """``(name, loss, inputs, wrt)`` for every loss on 4-frame toys."""
    rng = np.random.default_rng(seed)

    def r(*shape, scale=1.0):
        return rng.normal(scale=scale, size=shape)

    def fm(a, b):
        return fm_loss([[a[:2], a[2:]]], [[b[:2], b[2:]]])

    z = r(1, 2, 4)
    return [
        ("recon", recon_loss, [r(3, 4), r(3, 4)], 1),
        ("kl_z", lambda z, mq, lq, mp, lp: kl_loss(z, mq, lq, mp, lp), [z, r(1, 2, 4), r(1, 2, 4, scale=0.3),
                                                                        r(1, 2, 4), r(1, 2, 4, scale=0.3)], 0),
        ("kl_prior", lambda z, mq, lq, mp, lp: kl_loss(z, mq, lq, mp, lp), [z, r(1, 2, 4), r(1, 2, 4, scale=0.3),
                                                                            r(1, 2, 4), r(1, 2, 4, scale=0.3)], 4),
        ("adv_d", adv_d_loss, [r(2, 4), r(2, 4)], 1),
        ("adv_g", adv_g_loss, [r(2, 4)], 0),
        ("fm", fm, [r(4, 4), r(4, 4)], 1),
        ("ff", ff_loss, [100 + 50 * r(4), 100 + 50 * r(4)], 0),
        ("af", af_loss, [200 + 30 * r(4), 200 + 30 * r(4)], 0),
    ]


# -- metrics, written without numpy reductions -------------------------------

def cos(a, b):
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def mean(xs):
    xs = list(xs)
    return math.fsum(xs) / len(xs)


def brute_homogeneity(per_speaker):
    return mean(mean(cos(a, b) for a, b in itertools.combinations(v, 2)) for _, v in sorted(per_speaker.items()))


def brute_diversity(per_speaker):
    keys = sorted(per_speaker)
    sims = [cos(a, b) for i, j in itertools.combinations(range(len(keys)), 2)
            for a in per_speaker[keys[i]] for b in per_speaker[keys[j]]]
    return mean(sims)


def brute_consistency(per_speaker, gt, partners=None):
    items = [(s, e) for s in sorted(per_speaker) for e in per_speaker[s]]
    partners = partners or [s for s, _ in items]
    return mean(mean(cos(e, g) for g in gt[p]) for (_, e), p in zip(items, partners))


def brute_pitch_deviation(synth_means, targets, table):
    return mean(abs(m - table[t]) for m, t in zip(synth_means, targets))


def vectors(per_speaker):
    return {k: [getattr(e, "vector", e) for e in v] for k, v in per_speaker.items()}
