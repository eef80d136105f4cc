"""Sine/cosine spectral basis on the unit torus and the operators built on it.

Everything lives in the mean-zero subspace of L2[0, 1).  Modes come in
wavenumber pairs: for pair index mp = 1, 2, ... the odd mode 2*mp - 1 is
sqrt(2) sin(2 pi mp x) and the even mode 2*mp is sqrt(2) cos(2 pi mp x).
Both members share the Laplacian eigenvalue -(2 pi mp)^2, so the heat
semigroup, Sobolev norms and the spatial derivative all act diagonally
(or pairwise, for the derivative) on the real coefficient vector.

Coefficient storage is a flat float64 array of length m_max with the sine
member first inside each pair.  Transforms go through numpy's real FFT;
on a grid of n points the pair mp occupies the complex rfft bin mp, which
requires n >= m_max + 2 so the highest retained pair stays strictly below
the Nyquist bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Discarded means below this are silently dropped by to_spectral; larger
# means are an error, because a growing mean signals a broken nonlinear term.
MEAN_TOL = 1e-12


class ModeBasis:
    """Truncated mean-zero Fourier basis with m_max retained real modes.

    Parameters
    ----------
    m_max : int
        Number of retained modes.  Must be even and >= 2; pairs are
        (sine, cosine) members of wavenumbers mp = 1 .. m_max/2.
    n_x : int, optional
        Physical quadrature grid size.  Defaults to 2*m_max, which leaves
        headroom for dealiased products.  Must satisfy n_x >= m_max + 2.
    """

    def __init__(self, m_max: int, n_x: int | None = None):
        m_max = int(m_max)
        if m_max < 2 or m_max % 2 != 0:
            raise ValueError("m_max must be even and >= 2")
        self.m_max = m_max
        self.n_pairs = m_max // 2
        self.n_x = 2 * m_max if n_x is None else int(n_x)
        if self.n_x < m_max + 2:
            raise ValueError("n_x must be >= m_max + 2")
        # pair index mp for each mode m = 1..m_max, stored 0-based
        self.pair_index = np.repeat(np.arange(1, self.n_pairs + 1), 2)
        self.wavenumbers = 2.0 * np.pi * self.pair_index
        self.eigenvalues = -(self.wavenumbers**2)

    def eigenvalue(self, m: int) -> float:
        """Laplacian eigenvalue of mode m (1-based)."""
        if not 1 <= m <= self.m_max:
            raise ValueError(f"mode index {m} outside 1..{self.m_max}")
        return float(self.eigenvalues[m - 1])

    def basis_eval(self, m: int, x):
        """Evaluate basis function e_m at x (scalar or array)."""
        if not 1 <= m <= self.m_max:
            raise ValueError(f"mode index {m} outside 1..{self.m_max}")
        arg = self.wavenumbers[m - 1] * np.asarray(x, dtype=float)
        if m % 2 == 1:
            return np.sqrt(2.0) * np.sin(arg)
        return np.sqrt(2.0) * np.cos(arg)

    def grid(self, n: int | None = None) -> np.ndarray:
        """Equispaced quadrature points j/n on [0, 1)."""
        n = self.n_x if n is None else int(n)
        return np.arange(n) / n

    def zeros(self) -> np.ndarray:
        return np.zeros(self.m_max)

    def __repr__(self):
        return f"ModeBasis(m_max={self.m_max}, n_x={self.n_x})"


@dataclass
class SpectralField:
    """Coefficient vector against the retained basis (mean-zero by construction)."""

    coeffs: np.ndarray
    basis: ModeBasis
    # magnitude of the mean discarded by the projection that produced this field
    discarded_mean: float = field(default=0.0, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.m_max,):
            raise ValueError(
                f"coefficient array has shape {self.coeffs.shape}, "
                f"expected ({self.basis.m_max},)"
            )

    def copy(self) -> "SpectralField":
        return SpectralField(self.coeffs.copy(), self.basis)


@dataclass
class PhysicalField:
    """Point samples at the equispaced quadrature points j/n."""

    samples: np.ndarray
    basis: ModeBasis

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")


def mode_field(basis: ModeBasis, m: int, amplitude: float = 1.0) -> SpectralField:
    """Field amplitude * e_m, a convenient initial condition."""
    c = basis.zeros()
    c[m - 1] = amplitude
    return SpectralField(c, basis)


def synthesize(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Evaluate a coefficient vector on the grid j/n, j = 0..n-1.

    Raw-array fast path shared by the typed transforms and the dealiased
    nonlinear term.  Requires n >= len(coeffs) + 2.
    """
    m_max = len(coeffs)
    k = m_max // 2
    if n < m_max + 2:
        raise ValueError("grid too coarse for the retained band")
    spec = np.zeros(n // 2 + 1, dtype=complex)
    # rfft bin mp holds (n/sqrt(2)) * (cos_coeff - i sin_coeff)
    scale = n / np.sqrt(2.0)
    spec.real[1 : k + 1] = scale * coeffs[1::2]
    spec.imag[1 : k + 1] = -scale * coeffs[0::2]
    return np.fft.irfft(spec, n)


def analyze(samples: np.ndarray, m_max: int) -> tuple[np.ndarray, float]:
    """Project samples onto the first m_max modes; returns (coeffs, mean)."""
    n = len(samples)
    k = m_max // 2
    if n < m_max + 2:
        raise ValueError("grid too coarse for the retained band")
    spec = np.fft.rfft(samples)
    mean = spec[0].real / n
    scale = np.sqrt(2.0) / n
    coeffs = np.empty(m_max)
    coeffs[0::2] = -scale * spec.imag[1 : k + 1]
    coeffs[1::2] = scale * spec.real[1 : k + 1]
    return coeffs, mean


def to_physical(f: SpectralField, n: int | None = None) -> PhysicalField:
    """Synthesis on the basis grid (or an n-point refinement of it)."""
    n = f.basis.n_x if n is None else int(n)
    return PhysicalField(synthesize(f.coeffs, n), f.basis)


def to_spectral(g: PhysicalField) -> SpectralField:
    """Projection onto the retained modes.

    The sample mean is subtracted and its magnitude recorded on the result;
    a mean above MEAN_TOL raises, since fields here are mean-zero by
    construction and a drifting mean means an upstream operator is broken.
    """
    coeffs, mean = analyze(g.samples, g.basis.m_max)
    if abs(mean) > MEAN_TOL:
        raise ValueError(
            f"input violates the mean-zero invariant: |mean| = {abs(mean):.3e} "
            f"> {MEAN_TOL:.0e}"
        )
    out = SpectralField(coeffs, g.basis)
    out.discarded_mean = abs(mean)
    return out


def spectral_derivative(f: SpectralField) -> SpectralField:
    """Exact d/dx: rotates each (sin, cos) pair and scales by 2 pi mp.

    d/dx e_{2mp-1} = (2 pi mp) e_{2mp} and d/dx e_{2mp} = -(2 pi mp) e_{2mp-1}.
    """
    c = f.coeffs
    out = np.empty_like(c)
    w = f.basis.wavenumbers
    out[0::2] = -w[1::2] * c[1::2]
    out[1::2] = w[0::2] * c[0::2]
    return SpectralField(out, f.basis)


def heat_apply(f: SpectralField, nu: float, t: float) -> SpectralField:
    """Heat semigroup: multiply mode m by exp(nu * lambda_m * t), t >= 0."""
    if t < 0:
        raise ValueError("heat semigroup requires t >= 0")
    return SpectralField(np.exp(nu * f.basis.eigenvalues * t) * f.coeffs, f.basis)


def sobolev_norm(f: SpectralField, s: float) -> float:
    """Fractional Sobolev norm (sum_m |lambda_m|^s <f, e_m>^2)^(1/2); s=0 is L2."""
    if s == 0:
        return float(np.sqrt(np.dot(f.coeffs, f.coeffs)))
    weights = np.abs(f.basis.eigenvalues) ** s
    return float(np.sqrt(np.sum(weights * f.coeffs**2)))


def lp_norm(g: PhysicalField, p: float) -> float:
    """L^p quadrature norm with the equal trapezoid weights 1/n of a periodic grid.

    p = inf returns max |g|, consistent with the strengthened Poincare chain
    ||v||_Lp <= ||v||_Linf <= ||v||_H1 used by the moment bounds.
    """
    a = np.abs(g.samples)
    if np.isinf(p):
        return float(a.max())
    if p < 1:
        raise ValueError("p must be >= 1 or inf")
    if p == 1:
        return float(a.mean())
    if p == 2:
        return float(np.sqrt(np.mean(a * a)))
    return float(np.mean(a**p) ** (1.0 / p))
