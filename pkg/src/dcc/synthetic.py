"""Synthetic clustered data with known labels."""
import numpy as np

from .dataio import DataMatrix, normalize_features


def lift(points, n_dims=50, hidden=16, seed=1234):
    """Fixed random nonlinear map from the plane into ``n_dims`` dimensions."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(size=(hidden, points.shape[1]))
    b1 = rng.normal(size=hidden)
    w2 = rng.normal(size=(n_dims, hidden))
    return np.tanh(points @ w1.T + b1) @ w2.T


def lifted_gaussians(n_points=1000, n_clusters=4, n_dims=50, sigma=1.0, separation=10.0,
                     seed=0, lift_seed=1234, normalize=True):
    """Isotropic Gaussian clusters around lifted planar centres.

    Centres are spread on a circle in the plane, pushed through :func:`lift`,
    and rescaled so the closest pair sits ``separation * sigma`` apart. Labels
    follow the generating cluster; sizes are as equal as possible.
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_clusters) / n_clusters
    planar = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    centres = lift(planar, n_dims, seed=lift_seed)
    gaps = np.linalg.norm(centres[:, None] - centres[None], axis=2)
    closest = gaps[np.triu_indices(n_clusters, 1)].min() if n_clusters > 1 else 1.0
    centres *= separation * sigma / closest
    labels = np.arange(n_points) % n_clusters
    labels = labels[rng.permutation(n_points)]
    values = centres[labels] + sigma * rng.normal(size=(n_points, n_dims))
    m = DataMatrix(values, labels)
    return normalize_features(m) if normalize else m
