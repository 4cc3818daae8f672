"""Shared test utilities: finite-difference oracles and kink-safe sampling.

Central differences are meaningless at the kinks of |.| and ReLU, so random
instances are resampled until every kink argument clears a safety margin much
larger than the step h.  The analytic code defines subgradient 0 at the kinks;
away from them the objective is smooth and FD is a valid oracle.
"""

import numpy as np

from illumov.nets import gfcn_forward, init_params

FD_STEP = 1e-5
KINK_MARGIN = 1e-3


def central_diff(fun, arr, h=FD_STEP):
    """FD gradient of the scalar ``fun()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fun()
        flat[i] = orig - h
        f_minus = fun()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


FD_NOISE = 2e-9


def fd_agreement(analytic, numeric, noise=FD_NOISE):
    """Worst relative disagreement after deducting the FD roundoff allowance.

    A central difference quotient carries absolute noise of about
    |f| * eps / (2 h) from cancellation in f(x+h) - f(x-h); for objectives of
    size ~30 and h = 1e-5 that is a few 1e-10 regardless of how small the
    true component is.  Deducting a ``noise`` allowance before forming the
    ratio lets every component be checked -- with no magnitude floor -- while
    staying immune to noise-on-noise ratios on dead-path components.
    """
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    excess = np.maximum(np.abs(analytic - numeric) - noise, 0.0)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), noise)
    return float((excess / denom).max())


def _kink_margin(images, inv, net1, net2, u1, u2, c):
    b, cache1 = gfcn_forward(net1, u1)
    b_inv, cache2 = gfcn_forward(net2, u2)
    s = images - b
    s_inv = inv - b_inv
    f = s - c
    sig = inv.std(axis=1)[:, None]
    return min(
        np.abs(s).min(), np.abs(f).min(), np.abs(c).min(),
        np.abs(s_inv).min(), np.abs(s_inv - sig).min(),
        np.abs(cache1.z1).min(), np.abs(cache1.z2).min(),
        np.abs(cache2.z1).min(), np.abs(cache2.z2).min(),
    )


def objective_instance(seed, spatial=8, channels=3, n=2, d=5,
                       margin=KINK_MARGIN):
    """Random (images, inv, net1, net2, u1, u2, c) clear of all loss kinks."""
    m = spatial * channels
    attempt = seed
    while True:
        r = np.random.default_rng(attempt)
        net1 = init_params(d, m, attempt * 7919 + 1)
        net2 = init_params(d, spatial, attempt * 7919 + 2)
        images = r.uniform(0.0, 1.0, (n, m))
        inv = r.uniform(0.0, 1.0, (n, spatial))
        u1 = r.normal(0.0, 1.0, (n, d))
        u2 = r.normal(0.0, 1.0, (n, d))
        c = r.normal(0.0, 0.3, (n, m))
        if _kink_margin(images, inv, net1, net2, u1, u2, c) > margin:
            return images, inv, net1, net2, u1, u2, c
        attempt += 10007
