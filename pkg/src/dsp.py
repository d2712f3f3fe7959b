"""
Signal processing kernels for SceneMix
Radix-2 FFT and the naive DFT used to check it
"""

import numpy as np

from .errors import ConfigError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    """Smallest power of two >= n."""
    if n <= 1:
        return 1
    return 1 << (int(n) - 1).bit_length()


def _bit_reversal_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_indices = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        reversed_indices |= ((indices >> b) & 1) << (bits - 1 - b)
    return reversed_indices


def fft(x: np.ndarray) -> np.ndarray:
    """
    Iterative radix-2 decimation-in-time FFT along the last axis.

    Leading axes are transformed independently (one butterfly stage per
    level over all of them at once).
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ConfigError(f"FFT length must be a power of two, got {n}")

    lead = x.shape[:-1]
    out = x[..., _bit_reversal_indices(n)]

    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2

    return out


def rfft_power(x: np.ndarray, fft_size: int) -> np.ndarray:
    """|X[k]|^2 for k in [0, fft_size/2] after zero-padding the last axis to fft_size."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] > fft_size:
        raise ConfigError(f"frame length {x.shape[-1]} exceeds FFT size {fft_size}")
    pad = [(0, 0)] * (x.ndim - 1) + [(0, fft_size - x.shape[-1])]
    spectrum = fft(np.pad(x, pad))[..., :fft_size // 2 + 1]
    return spectrum.real ** 2 + spectrum.imag ** 2


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ basis.T
