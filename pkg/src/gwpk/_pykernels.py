"""Pure-NumPy implementations of the hot loops (fallback backend)."""

import numpy as np

BACKEND = "python"


def neighborhood_hits(qx, qy, cx, cy, delta):
    """For each query point, whether some center ``c`` has ``|q - c| < delta * <c>``.

    ``<c> = sqrt(1 + |c|^2)``.
    """
    qx = np.asarray(qx, dtype=np.float64)
    qy = np.asarray(qy, dtype=np.float64)
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    out = np.zeros(qx.shape[0], dtype=bool)
    if cx.size == 0:
        return out
    radius = delta * np.sqrt(1.0 + cx ** 2 + cy ** 2)
    for start in range(0, cx.size, 256):
        sl = slice(start, start + 256)
        d2 = (qx[None, :] - cx[sl, None]) ** 2 + (qy[None, :] - cy[sl, None]) ** 2
        out |= np.any(d2 < radius[sl, None] ** 2, axis=0)
    return out


def coo_matvec(rows, cols, vals, x, n_rows):
    """``y = A x`` for a COO triplet matrix, accumulated in triplet order."""
    y = np.zeros(n_rows, dtype=np.complex128)
    np.add.at(y, rows, vals * x[cols])
    return y


def weyl_gather(table, scale):
    """Kernel ``K[i, j] = table[i + j, (i - j) mod n] * scale`` from the midpoint table."""
    n = table.shape[1]
    i = np.arange(n)
    return table[i[:, None] + i[None, :], (i[:, None] - i[None, :]) % n] * scale


def fio_sum(phase, sigma, fhat, deta):
    """``out[x] = (2 pi)^-1 sum_eta exp(i phase[x, eta]) sigma[x, eta] fhat[eta] deta``."""
    out = np.empty(phase.shape[0], dtype=np.complex128)
    for start in range(0, phase.shape[0], 128):
        sl = slice(start, start + 128)
        out[sl] = (np.exp(1j * phase[sl]) * sigma[sl]) @ fhat
    return out * deta / (2.0 * np.pi)
