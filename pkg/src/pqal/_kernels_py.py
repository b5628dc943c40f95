"""Pure numpy/scipy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
``PQAL_PURE_PYTHON=1``. Every function here has an identically named
counterpart in ``_kernels_c.pyx``.
"""

import numpy as np
from scipy.spatial.distance import cdist, pdist


def rbf_cross_gram(a, b, lengthscale):
    sq = cdist(a, b, "sqeuclidean")
    return np.exp(-sq / (2.0 * lengthscale * lengthscale))


def rbf_gram(a, lengthscale):
    out = rbf_cross_gram(a, a, lengthscale)
    # cdist is symmetric up to rounding; force exact symmetry
    return np.triu(out) + np.triu(out, 1).T


def delta_cross_gram(a, b):
    return np.all(a[:, None, :] == b[None, :, :], axis=2).astype(np.float64)


def khatri_rao_columnwise(a, b):
    m, n = a.shape
    p = b.shape[0]
    return (a[:, None, :] * b[None, :, :]).reshape(m * p, n)


def face_splitting(a, b):
    n, m = a.shape
    p = b.shape[1]
    return (a[:, :, None] * b[:, None, :]).reshape(n, m * p)


def pairwise_distances(a):
    return pdist(a, "euclidean")
