"""Kernel ridge regression with a learnable cross-patch similarity kernel.

Samples are dense sliding windows over a feature map.  Each sample is split
into an M-cell grid of patches; the kernel between two samples is a weighted
sum of inner products over all patch pairs, with one learnable weight per
pair.  The regression response can be evaluated two ways:

* the quadratic form r = K alpha with the explicit N x N kernel matrix, and
* a three-step "network" form (weighted sample sum -> patch filter bank ->
  per-pair correlation maps -> weighted map sum) that never materializes K
  and costs O(d N) per evaluation.

Both paths must agree to near machine precision; the equivalence is pinned
by the test suite.  Training runs plain gradient descent on the dual
coefficients alpha and the pair weights beta; the closed-form alpha solve
exists as the oracle for tests and for the frame-1 warm start.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, GeometryError, NumericError
from .numerics import sgd_step, solve_symmetric


@dataclass
class KrrGeometry:
    """Sampling geometry tying a feature map to its dense sample set.

    H, W, C: feature map extents.  h, w: target extent on the feature map.
    M: patch count, laid out as a sqrt(M) x sqrt(M) grid over the target.
    """

    H: int
    W: int
    C: int
    h: int
    w: int
    M: int

    def __post_init__(self):
        g = int(round(self.M**0.5))
        if g * g != self.M:
            raise GeometryError(f"M={self.M} is not a perfect square")
        self.grid = g
        if self.h % g or self.w % g:
            raise GeometryError(f"target {self.h}x{self.w} not divisible by grid {g}")
        if self.h > self.H or self.w > self.W:
            raise GeometryError("target extent must fit inside the feature map")
        self.ph = self.h // g
        self.pw = self.w // g
        self.out_h = self.H - self.h + 1
        self.out_w = self.W - self.w + 1
        self.N = self.out_h * self.out_w
        self.d = self.h * self.w * self.C
        self.patch_dim = self.d // self.M
        self._patch_rows = None

    @property
    def patch_rows(self):
        """(M, d/M) row indices of each patch inside a vectorized sample."""
        if self._patch_rows is None:
            rows = np.empty((self.M, self.patch_dim), dtype=np.intp)
            for m in range(self.M):
                pr, pc = divmod(m, self.grid)
                p = np.arange(self.ph)[:, None, None] + pr * self.ph
                q = np.arange(self.pw)[None, :, None] + pc * self.pw
                ch = np.arange(self.C)[None, None, :]
                rows[m] = ((p * self.w + q) * self.C + ch).reshape(-1)
            self._patch_rows = rows
        return self._patch_rows

    def check_map(self, x):
        if x.shape != (self.H, self.W, self.C):
            raise GeometryError(f"feature map {x.shape} does not match geometry "
                                f"({self.H}, {self.W}, {self.C})")


@dataclass
class KrrModel:
    """Regressor state: dual coefficients, pair weights, sample matrix, and
    the exponentially averaged copies used at detection time."""

    alpha: np.ndarray
    beta: np.ndarray
    D: np.ndarray
    alpha_ema: np.ndarray = None
    beta_ema: np.ndarray = None
    D_ema: np.ndarray = None
    lambda1: float = 0.001
    lambda2: float = 0.001
    eta: float = 0.2

    def __post_init__(self):
        if self.alpha_ema is None:
            self.alpha_ema = self.alpha.copy()
        if self.beta_ema is None:
            self.beta_ema = self.beta.copy()
        if self.D_ema is None:
            self.D_ema = self.D.copy()


@dataclass
class ForwardTrace:
    """Intermediates of the three-step network evaluation."""

    v: np.ndarray  # (M, ph, pw, C) filter kernels, v[n] = reshape(f_n @ alpha)
    b: np.ndarray  # (M, M, out_h, out_w) per-pair correlation maps
    r: np.ndarray  # (out_h, out_w) response map

    @property
    def r_flat(self):
        return self.r.reshape(-1)


def extract_dense_samples(x, geo):
    """All h x w x C sliding windows of x, vectorized into a d x N matrix.

    Column i holds the window whose top-left corner is at position i, with
    window positions ordered row-major over the (H-h+1) x (W-w+1) grid.
    """
    x = np.asarray(x, dtype=np.float64)
    geo.check_map(x)
    win = np.lib.stride_tricks.sliding_window_view(x, (geo.h, geo.w), axis=(0, 1))
    # win: (out_h, out_w, C, h, w) -> columns ordered (p, q, ch) row-major
    cols = win.transpose(0, 1, 3, 4, 2).reshape(geo.N, geo.d)
    return np.ascontiguousarray(cols.T)


def cross_patch_kernel(xi, xj, beta, geo):
    """Kernel value sum_{m,n} beta[m,n] <xi_patch_m, xj_patch_n>."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    xj = np.asarray(xj, dtype=np.float64).reshape(-1)
    if xi.shape != xj.shape or xi.size != geo.d:
        raise DimensionError(f"samples must both have length {geo.d}")
    rows = geo.patch_rows
    pi = xi[rows]  # (M, d/M)
    pj = xj[rows]
    b = np.asarray(beta, dtype=np.float64).reshape(geo.M, geo.M)
    return float(np.einsum("mn,mp,np->", b, pi, pj))


def kernel_matrix(D, beta, geo):
    """N x N kernel matrix K[i, j] = cross_patch_kernel(sample i, sample j)."""
    D = np.asarray(D, dtype=np.float64)
    if D.shape != (geo.d, geo.N):
        raise DimensionError(f"D must be {geo.d} x {geo.N}, got {D.shape}")
    b = np.asarray(beta, dtype=np.float64).reshape(geo.M, geo.M)
    Dp = D[geo.patch_rows]  # (M, d/M, N)
    mixed = np.einsum("mn,mpi->npi", b, Dp)
    return np.einsum("npi,npj->ij", mixed, Dp, optimize=True)


def objective_J(alpha, beta, D, y, lambda1, lambda2, geo):
    """Ridge objective ||y - K a||^2 + l1 a' K a + l2 ||beta||^2."""
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if alpha.size != geo.N or y.size != geo.N:
        raise DimensionError(f"alpha and y must have length {geo.N}")
    K = kernel_matrix(D, beta, geo)
    resid = y - K @ alpha
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    return float(resid @ resid + lambda1 * (alpha @ K @ alpha) + lambda2 * (beta @ beta))


def closed_form_alpha(K, y, lambda1):
    """Solve (K + lambda1 I) alpha = y; requires a symmetric kernel matrix."""
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    asym = np.abs(K - K.T).max()
    if asym > 1e-9 * (1.0 + np.abs(K).max()):
        raise ContractError(f"kernel matrix is asymmetric (max deviation {asym:.3e})")
    return solve_symmetric(K + lambda1 * np.eye(K.shape[0]), y)


def _patch_crop(x, m, geo):
    """Sub-map of x whose sliding windows are exactly the m-th patches of the
    dense samples: offset by the patch's grid cell, extended by the stride
    range of the window grid."""
    pr, pc = divmod(m, geo.grid)
    r0 = pr * geo.ph
    c0 = pc * geo.pw
    return x[r0:r0 + geo.out_h - 1 + geo.ph, c0:c0 + geo.out_w - 1 + geo.pw, :]


def krr_forward(x, D, alpha, beta, geo):
    """Three-step network evaluation of the regression response on map x.

    A: z = D @ alpha, reshaped to h x w x C and split into M patch kernels.
    B: correlate the patch-m crop of x with every kernel v_n (valid mode).
    C: r = sum_{m,n} beta[m,n] * b[m,n].

    r read at window position i equals sum_j alpha[j] * k(x_i, D[:, j]).
    """
    x = np.asarray(x, dtype=np.float64)
    geo.check_map(x)
    D = np.asarray(D, dtype=np.float64)
    if D.shape != (geo.d, geo.N):
        raise DimensionError(f"D must be {geo.d} x {geo.N}, got {D.shape}")
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    b_mat = np.asarray(beta, dtype=np.float64).reshape(geo.M, geo.M)

    z = (D @ alpha).reshape(geo.h, geo.w, geo.C)
    v = np.empty((geo.M, geo.ph, geo.pw, geo.C))
    for n in range(geo.M):
        pr, pc = divmod(n, geo.grid)
        v[n] = z[pr * geo.ph:(pr + 1) * geo.ph, pc * geo.pw:(pc + 1) * geo.pw, :]

    b = np.empty((geo.M, geo.M, geo.out_h, geo.out_w))
    for m in range(geo.M):
        crop = _patch_crop(x, m, geo)
        win = np.lib.stride_tricks.sliding_window_view(crop, (geo.ph, geo.pw), axis=(0, 1))
        # same valid correlation as conv2d_valid, batched over the M kernels
        b[m] = np.einsum("rcipq,npqi->nrc", win, v, optimize=True)

    r = np.einsum("mn,mnrc->rc", b_mat, b)
    return ForwardTrace(v=v, b=b, r=r)


def krr_gradients(x, D, alpha, beta, y, lambda1, lambda2, geo):
    """Analytic gradients of the ridge objective at (alpha, beta).

    The data term is evaluated on the dense samples of x against the stored
    matrix D; with D = extract_dense_samples(x) this is exactly the gradient
    of objective_J.  Both regularizers differentiate through alpha and beta
    (note a' K a = sum_{m,n} beta[m,n] <v_m, v_n>).
    """
    S = extract_dense_samples(x, geo)
    D = np.asarray(D, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    B = np.asarray(beta, dtype=np.float64).reshape(geo.M, geo.M)

    rows = geo.patch_rows
    Sp = S[rows]  # (M, d/M, N) patch slices of the samples of x
    Dp = D[rows]  # (M, d/M, N) patch slices of the stored samples

    V = np.einsum("mpn,n->mp", Dp, alpha)      # v_n = f_n @ alpha
    r = np.einsum("mpn,mp->n", Sp, B @ V)      # response on x's samples
    e = y - r
    U = np.einsum("mpn,n->mp", Sp, e)          # u_m = f_m(x) @ residual

    # data term: -2 C' e with C the cross kernel between x's samples and D
    grad_alpha = -2.0 * np.einsum("mpn,mp->n", Dp, B.T @ U)
    # ridge term: lambda1 (K + K') alpha with K over D
    Ka = np.einsum("mpn,mp->n", Dp, B @ V)
    Kta = np.einsum("mpn,mp->n", Dp, B.T @ V)
    grad_alpha += lambda1 * (Ka + Kta)

    grad_beta = -2.0 * U @ V.T + lambda1 * V @ V.T + 2.0 * lambda2 * B
    return grad_alpha, grad_beta.reshape(-1)


def krr_train_step(model, x, y, lr_alpha, lr_beta, geo):
    """One full-batch gradient step on (alpha, beta) for the samples of x.

    The caller owns model.D (normally the dense samples of x, refreshed once
    per frame); the step itself only moves the coefficients.
    """
    if lr_alpha < 0 or lr_beta < 0:
        raise ValueError("learning rates must be >= 0")
    ga, gb = krr_gradients(x, model.D, model.alpha, model.beta, y,
                           model.lambda1, model.lambda2, geo)
    if not (np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))):
        raise NumericError("non-finite gradient in regression training step")
    model.alpha = sgd_step(model.alpha, ga, lr_alpha)
    model.beta = sgd_step(model.beta, gb, lr_beta)
    return model


def ema_update(model):
    """Blend the averaged detection state toward the current state."""
    eta = model.eta
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    model.D_ema = (1.0 - eta) * model.D_ema + eta * model.D
    model.alpha_ema = (1.0 - eta) * model.alpha_ema + eta * model.alpha
    model.beta_ema = (1.0 - eta) * model.beta_ema + eta * model.beta
    return model


def identity_beta(M):
    """Pair weights that reduce the cross-patch kernel to the linear kernel."""
    return np.eye(M).reshape(-1)
