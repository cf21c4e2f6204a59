"""Independent reference computations shared by the test modules."""

import numpy as np

NORMAL_MOMENTS = np.array([0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0])


def sample_moment_vectors(n_rep: int, n: int, seed: int, chunk: int = 10_000) -> np.ndarray:
    """(mean, m2, m3, m4) of ``n_rep`` standard Normal samples of size ``n``."""
    rng = np.random.default_rng(seed)
    out = np.empty((n_rep, 4))
    for start in range(0, n_rep, chunk):
        stop = min(start + chunk, n_rep)
        x = rng.standard_normal((stop - start, n))
        m = x.mean(axis=1)
        d = x - m[:, None]
        d2 = d * d
        out[start:stop, 0] = m
        out[start:stop, 1] = d2.mean(axis=1)
        out[start:stop, 2] = (d2 * d).mean(axis=1)
        out[start:stop, 3] = (d2 * d2).mean(axis=1)
    return out


def covariance_with_standard_errors(samples: np.ndarray):
    """Empirical covariance matrix and the Monte Carlo standard error of each entry."""
    centred = samples - samples.mean(axis=0)
    products = centred[:, :, None] * centred[:, None, :]
    cov = products.mean(axis=0)
    se = products.std(axis=0, ddof=1) / np.sqrt(len(samples))
    return cov, se


def sigma_monte_carlo_report(n_rep: int = 100_000, n: int = 100, seed: int = 7):
    """Compare the analytic moment covariance with simulation; returns (analytic, cov, se)."""
    from groupdens.density_model import ClassMoments, moment_covariance

    mu = NORMAL_MOMENTS.copy()
    analytic = moment_covariance(ClassMoments(mu=mu[None, :], gamma=np.ones(1)), [n])[0]
    cov, se = covariance_with_standard_errors(sample_moment_vectors(n_rep, n, seed))
    return analytic, cov, se


def central_difference(f, x, h):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def identity_setup(I: int = 40, K: int = 10, seed: int = 0, order: int = 0):
    """Model setup in which every fine bin is its own class (no tabulation)."""
    from groupdens.dataset import GroupedDataset
    from groupdens.em_fitter import ModelSetup
    from groupdens.grid_basis import FineGrid, build_basis, build_fine_grid, build_penalty

    base = build_fine_grid((0.0, 1.0), I)
    grid = FineGrid(a0=base.a0, aJ=base.aJ, I=I, delta=base.delta, edges=base.edges,
                    midpoints=base.midpoints, class_cuts=base.edges.copy(),
                    original_cuts=base.edges.copy(), cut_index=np.arange(I + 1),
                    bin_class=np.arange(I), composition=np.eye(I))
    freqs = np.random.default_rng(seed).integers(1, 50, I)
    data = GroupedDataset(grid.class_cuts, freqs, None, order)
    return ModelSetup(data, grid, build_basis(grid, K), build_penalty(K, 2),
                      np.zeros(I, dtype=bool))
