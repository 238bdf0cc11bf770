"""Independent oracles used across the test suite.

Everything here recomputes expected values from first principles (complex
rotations, dense linear solves, explicit recursions) without touching the
implementation paths being checked.
"""

import numpy as np


def fk_complex_oracle(theta, link_lengths):
    """End-effector chain via complex multiplication: z_k = z_{k-1} + L_k * prod(e^{i th})."""
    z = 0.0 + 0.0j
    rot = 1.0 + 0.0j
    points = [np.array([0.0, 0.0])]
    for th, L in zip(theta, link_lengths):
        rot *= np.exp(1j * th)
        z += L * rot
        points.append(np.array([z.real, z.imag]))
    return np.asarray(points)


def se_kernel(A, B, ell, sf2):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return sf2 * np.exp(-0.5 * d2 / ell**2)


def dense_gp(X, Y, ell, sf2, sn2, jitter=1e-10):
    """Dense-solve GP with the same standardization contract as the library.

    Returns (mean_fn, var_fn, lml) computed with np.linalg.inv/solve instead
    of Cholesky factors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    y_mean = Y.mean(axis=0)
    y_scale = np.where(Y.std(axis=0) > 0, Y.std(axis=0), 1.0)
    Z = (Y - y_mean) / y_scale
    K = se_kernel(X, X, ell, sf2) + (sn2 + jitter) * np.eye(len(X))
    K_inv = np.linalg.inv(K)
    alpha = K_inv @ Z

    def mean_fn(q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        k = se_kernel(q, X, ell, sf2)
        out = y_mean + y_scale * (k @ alpha)
        return out[0] if out.shape[0] == 1 else out

    def var_fn(q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        k = se_kernel(q, X, ell, sf2)
        v = np.maximum(sf2 - np.einsum("ij,jk,ik->i", k, K_inv, k), 0.0)
        return v[0] if v.shape[0] == 1 else v

    n, m = Z.shape
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    lml = -0.5 * float(np.sum(Z * alpha)) - 0.5 * m * logdet - 0.5 * n * m * np.log(2 * np.pi)
    return mean_fn, var_fn, lml


def central_difference_jacobian(f, x, h=1e-5):
    """Central finite differences of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return J


def pearson_or_zero(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def recursive_bayes_oracle(frames, motions, window, beta, clamp=6.0):
    """Plain-python per-cell evidence accumulation over scripted frames.

    No prediction step (the scripted cases use zero velocities); per frame,
    once a full window is buffered, each cell's log-odds gains
    beta * corr(cell window, motion window), clamped.
    """
    frames = [np.asarray(f, dtype=float) for f in frames]
    H, W = frames[0].shape
    lam = np.zeros((H, W))
    for t in range(len(frames)):
        if t + 1 < window:
            continue
        cells = frames[t + 1 - window: t + 1]
        motion = motions[t + 1 - window: t + 1]
        for i in range(H):
            for j in range(W):
                r = pearson_or_zero([f[i, j] for f in cells], motion)
                lam[i, j] = min(clamp, max(-clamp, lam[i, j] + beta * r))
    return lam


class DenseModelOracle:
    """Mirror of a forward-model set built on dense solves, for F landscapes."""

    def __init__(self, models):
        from corporea.gp import TACTILE_SQUASH_STEEPNESS

        self._steepness = TACTILE_SQUASH_STEEPNESS
        self._parts = {}
        for name in ("visual", "tactile"):
            m = getattr(models, name)
            mean_fn, _, _ = dense_gp(m.X, m.Y, m.params.lengthscale,
                                     m.params.signal_variance, m.params.noise_variance,
                                     jitter=m.jitter)
            self._parts[name] = mean_fn

    def predict(self, modality, mu):
        if modality == "proprio":
            return np.asarray(mu, dtype=float)
        out = self._parts[modality](mu)
        if modality == "tactile":
            out = 1.0 / (1.0 + np.exp(-self._steepness * (out - 0.5)))
        return out


def grid_minimize(objective, center, half_width, resolution, chunk=50000):
    """Exhaustive minimization of a scalar field over a cubic grid.

    ``objective`` maps an (N, d) batch of points to N values. Returns the
    arg-min grid point.
    """
    center = np.asarray(center, dtype=float)
    axes = [np.arange(c - half_width, c + half_width + resolution / 2, resolution)
            for c in center]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.size)
    best_val = np.inf
    best = None
    for i in range(0, len(G), chunk):
        vals = objective(G[i: i + chunk])
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best = G[i + k]
    return best, best_val
