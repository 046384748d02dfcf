"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``fft_radix2``, ``diag_gauss_logpdf``, ``zscore_matrix``)
dispatch on :data:`vvv._accel.USE_NUMBA`.  The ``*_numba`` / ``*_numpy``
variants stay importable so tests and the benchmark can compare them.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

LOG_2PI = float(np.log(2.0 * np.pi))


def next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def twiddle_table(n):
    """exp(-2*pi*i*k/n) for k < n/2, with the angle reduced exactly."""
    k = np.arange(max(n // 2, 1), dtype=np.float64)
    return np.exp(-2j * np.pi * k / n)


def _check_pow2(n):
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")


# --------------------------------------------------------------------- FFT


def fft_radix2_numpy(x):
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    Vectorized across rows: every butterfly stage is a single array op.
    """
    a = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    rows, n = a.shape
    _check_pow2(n)
    a = a[:, bit_reverse_indices(n)]
    tw = twiddle_table(n)
    m = 2
    while m <= n:
        mh = m // 2
        w = tw[:: n // m][:mh]
        blocks = a.reshape(rows, n // m, m)
        u = blocks[:, :, :mh]
        v = blocks[:, :, mh:] * w
        a = np.concatenate((u + v, u - v), axis=2).reshape(rows, n)
        m *= 2
    return a


@njit
def _fft_rows_numba(a, rev, tw):
    rows, n = a.shape
    out = np.empty_like(a)
    for r in range(rows):
        for i in range(n):
            out[r, i] = a[r, rev[i]]
        m = 2
        while m <= n:
            mh = m // 2
            stride = n // m
            for start in range(0, n, m):
                for k in range(mh):
                    i0 = start + k
                    i1 = i0 + mh
                    u = out[r, i0]
                    v = out[r, i1] * tw[k * stride]
                    out[r, i0] = u + v
                    out[r, i1] = u - v
            m *= 2
    return out


def fft_radix2_numba(x):
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.complex128)))
    n = a.shape[1]
    _check_pow2(n)
    return _fft_rows_numba(a, bit_reverse_indices(n), twiddle_table(n))


def naive_dft(x):
    """O(n^2) DFT of a 1-D sequence; the reference oracle for the FFT."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    # reduce k*j mod n before scaling so large angles stay exact
    angle = -2.0 * np.pi * ((np.outer(k, k) % n) / n)
    return np.exp(1j * angle) @ x


# ------------------------------------------------------- Gaussian log-pdf


def diag_gauss_logpdf_numpy(x, means, variances, log_weights):
    """Weighted per-component log densities, shape (frames, components)."""
    inv = 1.0 / variances
    const = -0.5 * (x.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1))
    diff = x[:, None, :] - means[None, :, :]
    maha = np.sum(diff * diff * inv[None, :, :], axis=2)
    return log_weights[None, :] + const[None, :] - 0.5 * maha


@njit
def _diag_gauss_logpdf_numba(x, means, variances, log_weights):
    t, f = x.shape
    k = means.shape[0]
    out = np.empty((t, k))
    const = np.empty(k)
    for j in range(k):
        s = 0.0
        for d in range(f):
            s += np.log(variances[j, d])
        const[j] = -0.5 * (f * LOG_2PI + s)
    for i in range(t):
        for j in range(k):
            acc = 0.0
            for d in range(f):
                diff = x[i, d] - means[j, d]
                acc += diff * diff / variances[j, d]
            out[i, j] = log_weights[j] + const[j] - 0.5 * acc
    return out


def diag_gauss_logpdf_numba(x, means, variances, log_weights):
    return _diag_gauss_logpdf_numba(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(variances, dtype=np.float64),
        np.ascontiguousarray(log_weights, dtype=np.float64),
    )


# ------------------------------------------------------- z-score matrix


def zscore_matrix_numpy(probe_means, ref_means, sigma, sigma_on_probe):
    """Mean absolute z-score between every (probe, reference) component.

    ``sigma`` has one row per probe component when ``sigma_on_probe`` is
    true, otherwise one row per reference component.
    """
    diff = np.abs(probe_means[:, None, :] - ref_means[None, :, :])
    if sigma_on_probe:
        z = diff / sigma[:, None, :]
    else:
        z = diff / sigma[None, :, :]
    return z.mean(axis=2)


@njit
def _zscore_matrix_numba(probe_means, ref_means, sigma, sigma_on_probe):
    p, f = probe_means.shape
    g = ref_means.shape[0]
    out = np.empty((p, g))
    for i in range(p):
        for j in range(g):
            acc = 0.0
            for d in range(f):
                s = sigma[i, d] if sigma_on_probe else sigma[j, d]
                acc += abs(probe_means[i, d] - ref_means[j, d]) / s
            out[i, j] = acc / f
    return out


def zscore_matrix_numba(probe_means, ref_means, sigma, sigma_on_probe):
    return _zscore_matrix_numba(
        np.ascontiguousarray(probe_means, dtype=np.float64),
        np.ascontiguousarray(ref_means, dtype=np.float64),
        np.ascontiguousarray(sigma, dtype=np.float64),
        bool(sigma_on_probe),
    )


if USE_NUMBA:
    fft_radix2 = fft_radix2_numba
    diag_gauss_logpdf = diag_gauss_logpdf_numba
    zscore_matrix = zscore_matrix_numba
else:
    fft_radix2 = fft_radix2_numpy
    diag_gauss_logpdf = diag_gauss_logpdf_numpy
    zscore_matrix = zscore_matrix_numpy
