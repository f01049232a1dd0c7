import numpy as np

from recf.data import SparseLabels, SparseRatings
from recf.embeddings import DescriptionMatrix
from recf.factor_model import HybridModel


def random_instance(seed, N=None, M=None, d=None, e=None, p_obs=0.6, p_desc=0.7):
    """Small random ratings/labels/descriptions with missing entries, plus a random model."""
    rng = np.random.default_rng(seed)
    N = N or int(rng.integers(3, 9))
    M = M or int(rng.integers(3, 9))
    d = d or int(rng.integers(1, 4))
    e = e or int(rng.integers(1, 5))

    def grid(values):
        mask = rng.random((N, M)) < p_obs
        mask[0, 0] = True
        u, v = np.nonzero(mask)
        return u, v, values[u, v]

    ratings = SparseRatings(N, M, *grid(rng.uniform(1, 5, (N, M))))
    labels = SparseLabels(N, M, *grid(rng.integers(0, 2, (N, M)).astype(float)))
    present = rng.random(M) < p_desc
    present[0] = True
    rows = np.where(present[:, None], rng.standard_normal((M, e)), np.nan)
    C = DescriptionMatrix(rows, present)
    model = HybridModel(rng.standard_normal((N, d)), rng.standard_normal((M, d)), rng.standard_normal((d, d)),
                        rng.standard_normal((d, d)), rng.standard_normal((d, e)))
    return ratings, labels, C, model


def fd_gradient(fun, X, h=1e-5):
    g = np.zeros_like(X)
    for idx in np.ndindex(*X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        g[idx] = (fun(Xp) - fun(Xm)) / (2 * h)
    return g


def bridge_oracle(U, V, grid, beta):
    """Per-entry design rows vec_row(U_u^T V_v), ridge solved as an augmented least-squares problem."""
    d = U.shape[1]
    rows = [np.outer(U[u], V[v]).ravel() for u, v in zip(grid.users, grid.items)]
    A = np.vstack(rows + [np.sqrt(beta) * np.eye(d * d)])
    b = np.concatenate([grid.values, np.zeros(d * d)])
    return np.linalg.lstsq(A, b, rcond=None)[0].reshape(d, d)


def projection_oracle(V, C, delta):
    Vp, Cp = V[C.present], C.rows[C.present]
    d = V.shape[1]
    A = np.vstack([Vp, np.sqrt(delta) * np.eye(d)])
    b = np.vstack([Cp, np.zeros((d, Cp.shape[1]))])
    return np.linalg.lstsq(A, b, rcond=None)[0]
