"""Elementary observables on grid wave functions."""

import numpy as np
from scipy.ndimage import convolve1d

from models.domain import PhysicalConstants, SpatialGrid, WaveFunction


KERNEL_CUTOFF = 8.0  # Gaussian kernel truncated beyond this many sigma


def integrate(grid: SpatialGrid, f: np.ndarray) -> float:
    """Trapezoidal integral of nodal values."""
    return float(np.sum(grid.weights * f) * grid.dx)


def squared_norm(psi: WaveFunction) -> float:
    """||psi||^2 by the trapezoidal rule."""
    return integrate(psi.grid, np.abs(psi.values) ** 2)


def normalized(psi: WaveFunction) -> WaveFunction:
    norm2 = squared_norm(psi)
    if norm2 <= 0:
        raise ValueError("cannot normalize a zero wave function")
    return psi.with_values(psi.values / np.sqrt(norm2))


def current(psi: WaveFunction, consts: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """
    Probability current (hbar/m) Im(psi* dpsi/dx) at every node.

    Central differences inside, second-order one-sided differences at the
    end nodes. Positive values flow toward +x.
    """
    dpsi = np.gradient(psi.values, psi.grid.dx, edge_order=2)
    return (consts.hbar / consts.mass) * np.imag(np.conj(psi.values) * dpsi)


def gaussian_kernel(dx: float, sigma: float) -> np.ndarray:
    """
    Gaussian weights g(m dx) dx for |m dx| <= 8 sigma, renormalized to sum 1.

    For sigma much smaller than dx the kernel collapses onto the centre
    cell and convolution becomes the identity.
    """
    half_width = int(np.ceil(KERNEL_CUTOFF * sigma / dx))
    offsets = np.arange(-half_width, half_width + 1) * dx
    kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_density(x: np.ndarray, sigma: float) -> np.ndarray:
    """1D normal density (2 pi sigma^2)^(-1/2) exp(-x^2 / 2 sigma^2)."""
    return np.exp(-x ** 2 / (2.0 * sigma ** 2)) / np.sqrt(2.0 * np.pi * sigma ** 2)


def gaussian_convolve(grid: SpatialGrid, f: np.ndarray, sigma: float) -> np.ndarray:
    """
    (g * f) on the grid by direct quadrature.

    Values beyond the grid are treated as zero, so mass within 8 sigma of an
    edge leaks out.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(grid.dx, sigma)
    if kernel.size == 1:
        return np.array(f, dtype=float, copy=True)
    return convolve1d(np.asarray(f, dtype=float), kernel, mode='constant', cval=0.0)


def gaussian_packet(
    grid: SpatialGrid,
    center: float,
    width: float,
    momentum: float,
) -> WaveFunction:
    """
    psi0(x) ~ exp(-(x - x0)^2 / 4 w^2 + i k0 x), normalized on the grid.

    `momentum` is the wavenumber k0; the mean momentum is hbar k0.
    """
    if width <= 0:
        raise ValueError(f"packet width must be positive, got {width}")
    x = grid.x
    values = np.exp(-(x - center) ** 2 / (4.0 * width ** 2) + 1j * momentum * x)
    return normalized(WaveFunction(grid, values))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Half the L1 distance between two binned mass vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share the same bins")
    return 0.5 * float(np.abs(p - q).sum())


def kolmogorov_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Largest gap between the cumulative sums of two binned mass vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share the same bins")
    return float(np.max(np.abs(np.cumsum(p) - np.cumsum(q))))
