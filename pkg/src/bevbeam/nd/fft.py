"""Discrete Fourier transform power spectra for radar preprocessing.

Power-of-two lengths use an iterative radix-2 FFT vectorized over the other
axes; any other length falls back to an O(n^2) DFT-matrix product.  Output is
never gradient-tracked (radar maps are inputs, not parameters).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    """In-order radix-2 FFT along the last axis; length must be a power of two."""
    n = x.shape[-1]
    x = x[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(*x.shape[:-1], n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(*x.shape)
        size *= 2
    return x


def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward DFT along ``axis`` in complex128."""
    x = np.asarray(x)
    if x.shape[axis] < 1:
        raise ContractError("dft: axis length must be >= 1")
    moved = np.moveaxis(x, axis, -1).astype(np.complex128)
    n = moved.shape[-1]
    if n & (n - 1) == 0 and n > 1:
        result = _fft_radix2(moved)
    elif n == 1:
        result = moved
    else:
        result = moved @ _dft_matrix(n).T
    return np.moveaxis(result, -1, axis)


def fft_power(x, axis: int = -1) -> Tensor:
    """|DFT(x)|^2 per bin along ``axis``; returns an f64 tensor."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    spectrum = dft(arr, axis=axis)
    return Tensor((spectrum.real ** 2 + spectrum.imag ** 2).astype(np.float64))
