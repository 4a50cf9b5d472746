"""Real-FFT utilities for periodic 1D fields.

Convention used throughout the package: the forward transform is
unnormalized and the inverse divides by N (numpy's default).  All routines
here work in float64 and accept leading batch dimensions; the transform
always acts on the last axis.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

DEFAULT_BANDS = ((1, 4), (4, 8), (8, 16), (16, 32))


@dataclass
class Spectrum:
    """rFFT coefficients of a real field (index 0 is the DC mode)."""

    coeffs: np.ndarray
    n_phys: int
    domain_len: float = 2 * np.pi

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.n_phys < 2:
            raise InvalidInputError(f"n_phys must be >= 2, got {self.n_phys}")
        if self.coeffs.shape[-1] != self.n_phys // 2 + 1:
            raise InvalidInputError(
                f"coeffs length {self.coeffs.shape[-1]} inconsistent with "
                f"n_phys={self.n_phys} (expected {self.n_phys // 2 + 1})"
            )
        if self.domain_len <= 0:
            raise InvalidInputError("domain_len must be positive")

    def replace(self, coeffs):
        return Spectrum(coeffs, self.n_phys, self.domain_len)


@dataclass
class BandSpec:
    """Half-open rFFT index ranges ``[k1, k2)`` with nonnegative weights."""

    bands: tuple = DEFAULT_BANDS
    weights: tuple = field(default=None)

    def __post_init__(self):
        self.bands = tuple((int(a), int(b)) for a, b in self.bands)
        if self.weights is None:
            self.weights = (1.0,) * len(self.bands)
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != len(self.bands):
            raise InvalidInputError("one weight per band is required")
        if any(w < 0 for w in self.weights):
            raise InvalidInputError("band weights must be nonnegative")
        for k1, k2 in self.bands:
            if not 0 <= k1 < k2:
                raise InvalidInputError(f"invalid band [{k1}, {k2})")

    def validate(self, n_phys):
        n_modes = n_phys // 2 + 1
        for k1, k2 in self.bands:
            if k2 > n_modes:
                raise InvalidInputError(
                    f"band [{k1}, {k2}) exceeds the {n_modes} rFFT modes of N={n_phys}"
                )

    def clipped(self, n_phys):
        """Bands truncated to the available modes; empty bands are dropped."""
        n_modes = n_phys // 2 + 1
        bands, weights = [], []
        for (k1, k2), w in zip(self.bands, self.weights):
            k2 = min(k2, n_modes)
            if k1 < k2:
                bands.append((k1, k2))
                weights.append(w)
        return BandSpec(tuple(bands), tuple(weights))


def rfft(u, domain_len=2 * np.pi):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0 or u.shape[-1] < 2:
        raise InvalidInputError("rfft needs a field with at least 2 points")
    return Spectrum(np.fft.rfft(u, axis=-1), u.shape[-1], domain_len)


def irfft(s: Spectrum):
    if s.coeffs.shape[-1] != s.n_phys // 2 + 1:
        raise InvalidInputError("spectrum length does not match n_phys")
    return np.fft.irfft(s.coeffs, n=s.n_phys, axis=-1)


@lru_cache(maxsize=64)
def _wavenumbers(n, domain_len):
    k = 2 * np.pi * np.arange(n // 2 + 1) / domain_len
    k.setflags(write=False)
    return k


def wavenumbers(n, domain_len):
    """Angular wavenumbers ``2*pi*j/domain_len`` for the rFFT bins of an N grid."""
    if domain_len <= 0:
        raise InvalidInputError("domain_len must be positive")
    return _wavenumbers(int(n), float(domain_len))


def dealiased_square(s: Spectrum, method="pad32"):
    """Spectrum of u**2 with the quadratic aliasing removed.

    ``pad32`` zero-pads to M = floor(3N/2) physical points, squares there and
    truncates back; ``mask23`` zeroes modes above floor(N/3) before and after
    squaring on the native grid.
    """
    n = s.n_phys
    c = s.coeffs
    if method == "pad32":
        m = (3 * n) // 2
        padded = np.zeros(c.shape[:-1] + (m // 2 + 1,), dtype=np.complex128)
        padded[..., : n // 2 + 1] = c
        if n % 2 == 0:
            # the N-grid Nyquist coefficient carries both +-N/2 components
            padded[..., n // 2] *= 0.5
        u_fine = np.fft.irfft(padded, n=m, axis=-1) * (m / n)
        sq = np.fft.rfft(u_fine * u_fine, axis=-1) * (n / m)
        return s.replace(sq[..., : n // 2 + 1])
    if method == "mask23":
        cutoff = n // 3
        masked = c.copy()
        masked[..., cutoff + 1 :] = 0.0
        u = np.fft.irfft(masked, n=n, axis=-1)
        sq = np.fft.rfft(u * u, axis=-1)
        sq[..., cutoff + 1 :] = 0.0
        return s.replace(sq)
    raise InvalidInputError(f"unknown de-aliasing method {method!r}")


def derivative_norm(u, m, domain_len=2 * np.pi):
    """Euclidean norm over grid points of the spectral m-th derivative."""
    if m < 0:
        raise InvalidInputError("derivative order must be >= 0")
    s = rfft(u, domain_len)
    k = wavenumbers(s.n_phys, domain_len)
    d = np.fft.irfft((1j * k) ** m * s.coeffs, n=s.n_phys, axis=-1)
    return np.sqrt(np.sum(d * d, axis=-1))


def band_energies(u, bands: BandSpec = None):
    """Per-band sums of squared rFFT magnitudes, shape ``(..., n_bands)``."""
    bands = BandSpec() if bands is None else bands
    u = np.asarray(u, dtype=np.float64)
    bands.validate(u.shape[-1])
    power = np.abs(np.fft.rfft(u, axis=-1)) ** 2
    return np.stack([power[..., k1:k2].sum(axis=-1) for k1, k2 in bands.bands], axis=-1)
