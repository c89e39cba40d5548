"""Built-in oracle suites: quick seeded property checks runnable without the
test harness, exposed through the `selftest` CLI subcommand."""

import numpy as np

from . import kernel_regression as kr
from . import masked_cnn as mc
from .boxes import BoundingBox, iou
from .benchmark import evaluate_ope
from .numerics import conv2d_valid, finite_diff_gradient, solve_symmetric


def _conv_loop_oracle(x, k):
    oh, ow = x.shape[0] - k.shape[0] + 1, x.shape[1] - k.shape[1] + 1
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            for p in range(k.shape[0]):
                for q in range(k.shape[1]):
                    for ch in range(k.shape[2]):
                        out[r, c] += x[r + p, c + q, ch] * k[p, q, ch]
    return out


def check_convolution():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 6, 2))
    k = rng.normal(size=(3, 2, 2))
    dev = np.abs(conv2d_valid(x, k) - _conv_loop_oracle(x, k)).max()
    a, b = rng.normal(size=(2, 5, 6, 2))
    lin = np.abs(conv2d_valid(2 * a - 3 * b, k)
                 - (2 * conv2d_valid(a, k) - 3 * conv2d_valid(b, k))).max()
    return dev < 1e-12 and lin < 1e-10, f"loop dev {dev:.2e}, linearity {lin:.2e}"


def check_solver():
    rng = np.random.default_rng(12)
    worst = 0.0
    for n in (3, 16, 64):
        a = rng.normal(size=(n, n))
        a = a @ a.T + n * np.eye(n)
        b = rng.normal(size=n)
        x = solve_symmetric(a, b)
        worst = max(worst, np.abs(a @ x - b).max() / (1 + np.abs(b).max()))
    return worst < 1e-9, f"worst residual {worst:.2e}"


def check_network_equivalence():
    rng = np.random.default_rng(13)
    geo = kr.KrrGeometry(H=10, W=10, C=2, h=4, w=4, M=4)
    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=(10, 10, 2))
        d = rng.normal(size=(geo.d, geo.N))
        alpha = rng.normal(size=geo.N)
        beta = rng.normal(size=geo.M**2)
        r = kr.krr_forward(x, d, alpha, beta, geo).r_flat
        s = kr.extract_dense_samples(x, geo)
        brute = np.array([
            sum(alpha[j] * kr.cross_patch_kernel(s[:, i], d[:, j], beta, geo)
                for j in range(geo.N))
            for i in range(geo.N)
        ])
        worst = max(worst, np.abs(r - brute).max() / np.abs(brute).max())
    return worst < 1e-9, f"worst relative deviation {worst:.2e}"


def check_regression_gradients():
    rng = np.random.default_rng(14)
    geo = kr.KrrGeometry(H=8, W=8, C=2, h=4, w=4, M=4)
    x = rng.normal(size=(8, 8, 2))
    d = kr.extract_dense_samples(x, geo)
    alpha = rng.normal(size=geo.N) * 0.1
    beta = rng.normal(size=geo.M**2) * 0.5
    y = rng.normal(size=geo.N)
    ga, gb = kr.krr_gradients(x, d, alpha, beta, y, 0.01, 0.05, geo)
    fa = finite_diff_gradient(lambda a: kr.objective_J(a, beta, d, y, 0.01, 0.05, geo),
                              alpha.copy())
    fb = finite_diff_gradient(lambda b: kr.objective_J(alpha, b, d, y, 0.01, 0.05, geo),
                              beta.copy())
    ra = np.abs(ga - fa).max() / np.abs(fa).max()
    rb = np.abs(gb - fb).max() / np.abs(fb).max()
    return ra < 1e-4 and rb < 1e-4, f"alpha rel {ra:.2e}, beta rel {rb:.2e}"


def check_dt_pooling():
    rng = np.random.default_rng(15)
    worst = 0.0
    for _ in range(10):
        f = rng.normal(size=(9, 9))
        p = mc.DtPoolParams(varpi_x=abs(rng.normal()) * 0.4,
                            varpi_y=abs(rng.normal()) * 0.4,
                            theta_x=rng.normal() * 0.2,
                            theta_y=rng.normal() * 0.2, bound=4)
        got = mc.dt_pool(f, p)
        oracle = np.full_like(f, -np.inf)
        for dy in range(-4, 5):
            for dx in range(-4, 5):
                pen = (p.varpi_x * dx * dx + p.theta_x * dx
                       + p.varpi_y * dy * dy + p.theta_y * dy)
                for sr in range(9):
                    tr = sr - dy
                    if not 0 <= tr < 9:
                        continue
                    for sc in range(9):
                        tc = sc - dx
                        if 0 <= tc < 9:
                            oracle[sr, sc] = max(oracle[sr, sc], f[tr, tc] - pen)
        worst = max(worst, np.abs(got - oracle).max())
    flat = mc.dt_pool(f, mc.DtPoolParams(0, 0, 0, 0, bound=16))
    const_ok = np.allclose(flat, f.max())
    return worst < 1e-12 and const_ok, f"worst oracle dev {worst:.2e}, flat {const_ok}"


def check_mask_invariance():
    rng = np.random.default_rng(16)
    model = mc.build_cnn(in_channels=3, out_channels=8, group_size=4, seed=3,
                         input_size=12)
    x = rng.normal(size=(12, 12, 3))
    before = mc.cnn_forward(model, x)
    model.conv1.filters = model.conv1.filters + rng.normal(
        size=model.conv1.filters.shape) * (1 - model.conv1.masks[:, :, :, None])
    model.conv2.filters = model.conv2.filters + rng.normal(
        size=model.conv2.filters.shape) * (1 - model.conv2.masks[:, :, :, None])
    after = mc.cnn_forward(model, x)
    same = np.array_equal(before, after)
    return same, "output bitwise unchanged" if same else "output changed"


def check_metrics():
    rng = np.random.default_rng(17)
    gt = [BoundingBox(10 + i, 20, 30, 40) for i in range(20)]
    jitter = [BoundingBox(b.x + rng.normal() * 5, b.y + rng.normal() * 5, b.w, b.h)
              for b in gt]
    m = evaluate_ope(jitter, gt)
    prec = np.array(m["precision_curve"])
    succ = np.array(m["success_curve"])
    mono = np.all(np.diff(prec) >= 0) and np.all(np.diff(succ) <= 0)
    perfect = evaluate_ope(gt, gt)
    exact = perfect["precision_20"] == 1.0 and abs(perfect["auc"] - 20 / 21) < 1e-12
    box_ok = abs(iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) - 1 / 3) < 1e-12
    return mono and exact and box_ok, f"monotone {mono}, perfect-case {exact}"


SUITES = [
    ("convolution-oracle", check_convolution),
    ("symmetric-solve", check_solver),
    ("network-kernel-equivalence", check_network_equivalence),
    ("regression-gradients", check_regression_gradients),
    ("distance-transform", check_dt_pooling),
    ("mask-invariance", check_mask_invariance),
    ("evaluation-metrics", check_metrics),
]


def run_selftest(out=print):
    """Run every suite, print one pass/fail line each, return overall success."""
    all_ok = True
    for name, fn in SUITES:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed suite is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
