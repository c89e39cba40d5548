"""Dense numeric substrate: valid correlation, symmetric solves, SGD stepping,
finite-difference gradients, Gaussian label maps and image warps.

Arrays are plain numpy ndarrays, float64 throughout the test path.  The 2-D
"convolution" used everywhere in this package is the correlation convention
(no kernel flipping); that choice is pinned by the oracle tests and shared by
every consumer of :func:`conv2d_valid`.
"""

import numpy as np

from .errors import DimensionError, NumericError, SingularityError


def conv2d_valid(x, kernel):
    """Valid-mode correlation of an H x W x C map with a kh x kw x C kernel.

    out[r, c] = sum_{p,q,ch} x[r+p, c+q, ch] * kernel[p, q, ch]

    Returns an (H-kh+1) x (W-kw+1) response map.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if kernel.ndim == 2:
        kernel = kernel[:, :, None]
    if x.ndim != 3 or kernel.ndim != 3:
        raise DimensionError(f"expected 3-d input/kernel, got {x.shape} and {kernel.shape}")
    kh, kw, kc = kernel.shape
    h, w, c = x.shape
    if kc != c:
        raise DimensionError(f"channel mismatch: input has {c}, kernel has {kc}")
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kernel.shape[:2]} larger than input {x.shape[:2]}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    # windows: (H-kh+1, W-kw+1, C, kh, kw)
    return np.einsum("rcipq,pqi->rc", windows, kernel, optimize=True)


def solve_symmetric(a, b):
    """Solve A x = b for symmetric positive definite A via Cholesky.

    Raises SingularityError naming the failing pivot (1-based) when A is not
    positive definite.
    """
    from scipy.linalg.lapack import dpotrf, dpotrs

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs length {b.shape[0]} does not match matrix order {a.shape[0]}")
    c, info = dpotrf(a, lower=1)
    if info > 0:
        raise SingularityError(info)
    if info < 0:
        raise DimensionError(f"illegal value in argument {-info} of the Cholesky factorization")
    x, info = dpotrs(c, b, lower=1)
    if info != 0:
        raise SingularityError(abs(info))
    return x


def sgd_step(params, grads, lr):
    """One plain gradient step: params - lr * grads."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise DimensionError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    return params - lr * grads


def finite_diff_gradient(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function at x, per coordinate."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def gaussian_map(center, sigma, height, width):
    """H x W map exp(-((r-cr)^2 + (c-cc)^2) / (2 sigma^2)); peak 1 at center."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    cr, cc = center
    rows = np.arange(height, dtype=np.float64)[:, None] - cr
    cols = np.arange(width, dtype=np.float64)[None, :] - cc
    return np.exp(-(rows**2 + cols**2) / (2.0 * sigma**2))


def bilinear_sample(img, rows, cols, fill=None):
    """Sample img (H x W or H x W x C) at real-valued (rows, cols).

    Coordinates are clamped to the support when fill is None; otherwise
    samples falling outside [0, H-1] x [0, W-1] return fill.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if fill is not None:
        outside = (rows < 0) | (rows > h - 1) | (cols < 0) | (cols > w - 1)
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    out = (
        img[r0, c0] * (1 - fr) * (1 - fc)
        + img[r0, c1] * (1 - fr) * fc
        + img[r1, c0] * fr * (1 - fc)
        + img[r1, c1] * fr * fc
    )
    if fill is not None:
        out[outside] = fill
    return out[..., 0] if squeeze else out


def resize_bilinear(img, out_h, out_w):
    """Corner-aligned bilinear resize; same-size calls return the input copy."""
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise DimensionError("cannot resize an empty image")
    if out_h < 1 or out_w < 1:
        raise DimensionError("output extents must be >= 1")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    if out_h == h and out_w == w:
        out = img.copy()
        return out[:, :, 0] if squeeze else out
    rows = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.array([(h - 1) / 2.0])
    cols = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.array([(w - 1) / 2.0])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = bilinear_sample(img, rr, cc)
    return out[:, :, 0] if squeeze else out


def rotate_image(img, degrees):
    """Rotate about the image center with bilinear sampling; outside fill is 0.

    Exact multiples of 90 degrees use exact cosines, so square inputs come
    back as pure grid permutations.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    k = round(degrees / 90.0)
    if abs(degrees - 90.0 * k) < 1e-12:
        cos_t = (1.0, 0.0, -1.0, 0.0)[k % 4]
        sin_t = (0.0, 1.0, 0.0, -1.0)[k % 4]
    else:
        theta = np.deg2rad(degrees)
        cos_t = np.cos(theta)
        sin_t = np.sin(theta)
    cr = (h - 1) / 2.0
    cc = (w - 1) / 2.0
    rr, cc_out = np.meshgrid(np.arange(h, dtype=np.float64) - cr,
                             np.arange(w, dtype=np.float64) - cc, indexing="ij")
    # inverse map: source = R(-theta) . (dst - center) + center
    src_r = cos_t * rr + sin_t * cc_out + cr
    src_c = -sin_t * rr + cos_t * cc_out + cc
    out = bilinear_sample(img, src_r, src_c, fill=0.0)
    return out[:, :, 0] if squeeze else out
