import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def oracle_conv(x, w, stride, rate, padding, depthwise=False):
    """Direct nested-loop summation of y[i] = sum_k x[i + r*k] * w[k],
    evaluated at output-stride positions with symmetric SAME padding.
    Deliberately independent of the library's gather/GEMM implementation."""
    n, c, h, win = x.shape
    co, ci, kh, kw = w.shape
    ph = ((kh - 1) * rate) // 2 if padding == "SAME" else 0
    pw = ((kw - 1) * rate) // 2 if padding == "SAME" else 0
    effh = (kh - 1) * rate + 1
    effw = (kw - 1) * rate + 1
    oh = (h + 2 * ph - effh) // stride + 1
    ow = (win + 2 * pw - effw) // stride + 1
    out_ch = c if depthwise else co
    y = np.zeros((n, out_ch, oh, ow))
    for b in range(n):
        for o in range(out_ch):
            in_channels = [o] if depthwise else range(c)
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for cc in in_channels:
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride + u * rate - ph
                                xx = j * stride + v * rate - pw
                                if 0 <= yy < h and 0 <= xx < win:
                                    wv = w[o, 0, u, v] if depthwise else w[o, cc, u, v]
                                    acc += x[b, cc, yy, xx] * wv
                    y[b, o, i, j] = acc
    return y


def central_diff(f, x, h=1e-6):
    """Central finite differences of scalar f() w.r.t. every element of x,
    perturbing x in place."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic, reference):
    denom = max(np.abs(reference).max(), np.abs(analytic).max(), 1e-8)
    return np.abs(analytic - reference).max() / denom
