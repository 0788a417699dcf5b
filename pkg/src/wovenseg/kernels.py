"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every public kernel here is bound at import time to either ``*_numba`` or
``*_numpy``; both variants are always importable (the numba ones are plain
Python when numba is unavailable) so tests and the benchmark can compare them.
"""
import numpy as np

from ._accel import BACKEND, HAVE_NUMBA, njit

__all__ = [
    "BACKEND",
    "joint_histogram",
    "face_contact_codes",
    "separable_convolve",
    "decode_contact_codes",
]


# --- joint label histogram -------------------------------------------------

def joint_histogram_numpy(ia, ib, na, nb):
    """Count co-occurrences of compact indices ``ia`` (< na) and ``ib`` (< nb)."""
    flat = ia.astype(np.int64) * nb + ib.astype(np.int64)
    return np.bincount(flat, minlength=na * nb).reshape(na, nb)


@njit(cache=True)
def joint_histogram_numba(ia, ib, na, nb):
    out = np.zeros((na, nb), dtype=np.int64)
    for k in range(ia.shape[0]):
        out[ia[k], ib[k]] += 1
    return out


# --- 6-connected face contacts ----------------------------------------------
# A contact code packs (low label, high label, axis) into one int64:
#   code = (low * 65536 + high) * 3 + axis,  axis 0 = z, 1 = y, 2 = x.

def face_contact_codes_numpy(volume):
    vol = np.asarray(volume)
    codes = []
    for axis in range(3):
        n = vol.shape[axis]
        if n < 2:
            continue
        a = np.take(vol, np.arange(n - 1), axis=axis)
        b = np.take(vol, np.arange(1, n), axis=axis)
        hit = (a != b) & (a > 0) & (b > 0)
        av = a[hit].astype(np.int64)
        bv = b[hit].astype(np.int64)
        lo = np.minimum(av, bv)
        hi = np.maximum(av, bv)
        codes.append((lo * 65536 + hi) * 3 + axis)
    if not codes:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(codes)


@njit(cache=True)
def _count_faces(vol):
    nz, ny, nx = vol.shape
    n = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                v = vol[z, y, x]
                if v == 0:
                    continue
                if z + 1 < nz:
                    w = vol[z + 1, y, x]
                    if w != 0 and w != v:
                        n += 1
                if y + 1 < ny:
                    w = vol[z, y + 1, x]
                    if w != 0 and w != v:
                        n += 1
                if x + 1 < nx:
                    w = vol[z, y, x + 1]
                    if w != 0 and w != v:
                        n += 1
    return n


@njit(cache=True)
def _pack(v, w, axis):
    lo = min(v, w)
    hi = max(v, w)
    return (np.int64(lo) * 65536 + np.int64(hi)) * 3 + axis


@njit(cache=True)
def _fill_faces(vol, out):
    nz, ny, nx = vol.shape
    k = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                v = vol[z, y, x]
                if v == 0:
                    continue
                if z + 1 < nz:
                    w = vol[z + 1, y, x]
                    if w != 0 and w != v:
                        out[k] = _pack(v, w, 0)
                        k += 1
                if y + 1 < ny:
                    w = vol[z, y + 1, x]
                    if w != 0 and w != v:
                        out[k] = _pack(v, w, 1)
                        k += 1
                if x + 1 < nx:
                    w = vol[z, y, x + 1]
                    if w != 0 and w != v:
                        out[k] = _pack(v, w, 2)
                        k += 1
    return out


def face_contact_codes_numba(volume):
    vol = np.ascontiguousarray(volume)
    n = _count_faces(vol)
    return _fill_faces(vol, np.empty(n, dtype=np.int64))


def decode_contact_codes(codes):
    """Aggregate packed codes into ``(low, high, axis, count)`` arrays."""
    uniq, counts = np.unique(codes, return_counts=True)
    axis = uniq % 3
    pair = uniq // 3
    return pair // 65536, pair % 65536, axis, counts


# --- separable convolution with edge replication ----------------------------

def separable_convolve_numpy(image, weights):
    img = np.asarray(image, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    r = (w.shape[0] - 1) // 2
    h, wd = img.shape
    padded = np.pad(img, ((0, 0), (r, r)), mode="edge")
    tmp = np.zeros_like(img)
    for k in range(w.shape[0]):
        tmp += w[k] * padded[:, k:k + wd]
    padded = np.pad(tmp, ((r, r), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k in range(w.shape[0]):
        out += w[k] * padded[k:k + h, :]
    return out


@njit(cache=True)
def separable_convolve_numba(image, weights):
    h, wd = image.shape
    n = weights.shape[0]
    r = (n - 1) // 2
    tmp = np.empty((h, wd), dtype=np.float64)
    for y in range(h):
        for x in range(wd):
            acc = 0.0
            for k in range(n):
                xx = min(max(x + k - r, 0), wd - 1)
                acc += weights[k] * image[y, xx]
            tmp[y, x] = acc
    out = np.empty((h, wd), dtype=np.float64)
    for y in range(h):
        for x in range(wd):
            acc = 0.0
            for k in range(n):
                yy = min(max(y + k - r, 0), h - 1)
                acc += weights[k] * tmp[yy, x]
            out[y, x] = acc
    return out


if HAVE_NUMBA:
    joint_histogram = joint_histogram_numba
    face_contact_codes = face_contact_codes_numba

    def separable_convolve(image, weights):
        return separable_convolve_numba(
            np.ascontiguousarray(image, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
        )
else:
    joint_histogram = joint_histogram_numpy
    face_contact_codes = face_contact_codes_numpy
    separable_convolve = separable_convolve_numpy


def _compact(labels):
    """Sorted distinct labels and each pixel's index into them."""
    flat = np.asarray(labels).ravel()
    if flat.dtype.kind == "u" and flat.dtype.itemsize <= 2:
        counts = np.bincount(flat, minlength=1)
        ids = np.flatnonzero(counts)
        lut = np.zeros(counts.size, dtype=np.int64)
        lut[ids] = np.arange(ids.size)
        return ids, lut[flat]
    ids, inv = np.unique(flat, return_inverse=True)
    return ids, inv.astype(np.int64).ravel()


def overlap_table(a, b):
    """Pixel overlap counts between the instances of two label grids.

    Returns ``(ids_a, ids_b, inter, area_a, area_b)`` where ``inter[i, j]`` is
    the number of pixels labelled ``ids_a[i]`` in ``a`` and ``ids_b[j]`` in
    ``b``. Background (0) is excluded from the ids but not from the areas'
    denominators, i.e. areas are full instance pixel counts.
    """
    ua, ia = _compact(a)
    ub, ib = _compact(b)
    table = joint_histogram(ia, ib, ua.size, ub.size)
    area_a = table.sum(axis=1)
    area_b = table.sum(axis=0)
    ka = ua != 0
    kb = ub != 0
    return (
        ua[ka].astype(np.int64),
        ub[kb].astype(np.int64),
        table[np.ix_(ka, kb)],
        area_a[ka],
        area_b[kb],
    )
