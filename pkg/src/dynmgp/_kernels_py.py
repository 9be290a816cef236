"""Pure-numpy implementation of the hot pairwise-kernel computations.

The compiled twin (_kernels_cy) exposes the same two functions; `kernels`
picks whichever is available at import time.

For a block between a "left" point set (na points, per-point amplitude aL and
diagonal length-scales thL) and a "right" set, the covariance entry is

    K[a, b] = aL[a] * aR[b]
              * prod_l (thL[a,l] * thR[b,l])^{1/4} / (thL[a,l] + thR[b,l])^{1/2}
              * exp(-0.5 * sum_l (xa[a,l] - xb[b,l])^2 / (thL[a,l] + thR[b,l]))

which is the closed form of convolving two Gaussian smoothing kernels.
Determinant ratios are accumulated in log-space per dimension.
"""

import numpy as np

__all__ = ["pairwise_cov", "pairwise_cov_grads"]


def pairwise_cov(xa, xb, aL, thL, aR, thR):
    """Covariance block between two point sets with per-point parameters.

    xa : (na, d), xb : (nb, d); aL : (na,), aR : (nb,);
    thL : (na, d), thR : (nb, d), all length-scales strictly positive.
    Returns (na, nb).
    """
    na, d = xa.shape
    nb = xb.shape[0]
    logc = 0.25 * (np.sum(np.log(thL), axis=1)[:, None]
                   + np.sum(np.log(thR), axis=1)[None, :])
    quad = np.zeros((na, nb))
    for l in range(d):
        S = thL[:, l][:, None] + thR[:, l][None, :]
        D = xa[:, l][:, None] - xb[:, l][None, :]
        logc -= 0.5 * np.log(S)
        quad += D * D / S
    return aL[:, None] * aR[None, :] * np.exp(logc - 0.5 * quad)


def pairwise_cov_grads(xa, xb, aL, thL, aR, thR, K, G):
    """Accumulate d(sum G*K)/d(params) for one block.

    K is the block from pairwise_cov and G an equally-shaped weight matrix.
    Returns (daL, dthL, daR, dthR) with the shapes of aL, thL, aR, thR.
    """
    na, d = xa.shape
    W = G * K
    daL = W.sum(axis=1) / aL
    daR = W.sum(axis=0) / aR
    wrow = W.sum(axis=1)
    wcol = W.sum(axis=0)
    dthL = np.empty_like(thL)
    dthR = np.empty_like(thR)
    for l in range(d):
        S = thL[:, l][:, None] + thR[:, l][None, :]
        D = xa[:, l][:, None] - xb[:, l][None, :]
        M = (W * (0.5 * D * D / S - 0.5) / S)
        dthL[:, l] = M.sum(axis=1) + 0.25 * wrow / thL[:, l]
        dthR[:, l] = M.sum(axis=0) + 0.25 * wcol / thR[:, l]
    return daL, dthL, daR, dthR
