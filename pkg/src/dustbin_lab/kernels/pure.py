"""Pure numpy convolution kernels (im2col forward, scatter-add backward)."""

from __future__ import annotations

import numpy as np

BACKEND = "pure"


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    # Asymmetric same-padding puts the extra row/column at the bottom/right.
    return np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))


def _col_indices(c, hp, wp, kh, kw, stride, ho, wo):
    """Flat indices into a padded C x Hp x Wp volume, one column per output pixel."""
    ci = np.repeat(np.arange(c), kh * kw)
    ki = np.tile(np.repeat(np.arange(kh), kw), c)
    kj = np.tile(np.arange(kw), c * kh)
    oi = stride * np.repeat(np.arange(ho), wo)
    oj = stride * np.tile(np.arange(wo), ho)
    rows = ki[:, None] + oi[None, :]
    cols = kj[:, None] + oj[None, :]
    return (ci[:, None] * hp + rows) * wp + cols  # (C*kh*kw, ho*wo)


def conv2d_forward(x, kernels, stride, ph, pw):
    """N,C,H,W cross-correlated with F,C,kh,kw -> N,F,Ho,Wo."""
    n, c, h, w = x.shape
    f, _, kh, kw = kernels.shape
    hp, wp = h + ph, w + pw
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = _pad(x, ph, pw).reshape(n, c * hp * wp)
    idx = _col_indices(c, hp, wp, kh, kw, stride, ho, wo)
    cols = xp[:, idx]  # (N, C*kh*kw, ho*wo)
    wmat = kernels.reshape(f, c * kh * kw)
    out = np.einsum("fk,nkl->nfl", wmat, cols, optimize=True)
    return np.ascontiguousarray(out.reshape(n, f, ho, wo))


def conv2d_backward_input(gout, kernels, in_hw, stride, ph, pw):
    """Gradient wrt the input volume; exact reverse of the im2col gather."""
    n, f, ho, wo = gout.shape
    _, c, kh, kw = kernels.shape
    h, w = in_hw
    hp, wp = h + ph, w + pw
    wmat = kernels.reshape(f, c * kh * kw)
    gcols = np.einsum("fk,nfl->nkl", wmat, gout.reshape(n, f, ho * wo), optimize=True)
    idx = _col_indices(c, hp, wp, kh, kw, stride, ho, wo)
    gpad = np.zeros((n, c * hp * wp))
    np.add.at(gpad, (slice(None), idx), gcols)
    gpad = gpad.reshape(n, c, hp, wp)
    top, left = ph // 2, pw // 2
    return np.ascontiguousarray(gpad[:, :, top : top + h, left : left + w])


def conv2d_backward_kernels(gout, x, kern_shape, stride, ph, pw):
    """Gradient wrt the kernel bank, summed over the batch."""
    n, c, h, w = x.shape
    f, _, kh, kw = kern_shape
    _, _, ho, wo = gout.shape
    hp, wp = h + ph, w + pw
    xp = _pad(x, ph, pw).reshape(n, c * hp * wp)
    idx = _col_indices(c, hp, wp, kh, kw, stride, ho, wo)
    cols = xp[:, idx]
    gw = np.einsum("nfl,nkl->fk", gout.reshape(n, f, ho * wo), cols, optimize=True)
    return np.ascontiguousarray(gw.reshape(kern_shape))
