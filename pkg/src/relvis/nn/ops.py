"""Low-level array kernels shared by forward, backward and relevance passes.

All tensors are rank-4 (batch, channels, height, width), row-major. The
kernels are dtype-generic: float32 in the normal inference path, float64
when a caller needs extra headroom (finite differences, relevance sums).
Reductions happen in fixed order so repeated calls are bit-identical.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent for explicit zero padding: floor((H + 2p - k)/s) + 1."""
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"kernel {kernel} with stride {stride}, padding {padding} "
            f"does not fit input extent {size}"
        )
    return out


def im2col(x, kernel, stride, padding):
    """Unfold x into patch columns.

    Returns (cols, oh, ow) where cols has shape (B, OH, OW, C*kh*kw) and
    row (b, i, j) holds the receptive field of output position (i, j).
    """
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    b, c, oh, ow = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b, oh, ow, c * kh * kw), oh, ow


def col2im(cols, x_shape, kernel, stride, padding):
    """Adjoint of im2col: scatter-add patch columns back onto the input grid.

    cols: (B, OH, OW, C*kh*kw). Accumulation iterates kernel positions in
    row-major order, overlapping windows sum deterministically.
    """
    b, c, h, w = x_shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    _, oh, ow, _ = cols.shape
    cols = cols.reshape(b, oh, ow, c, kh, kw)
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return xp[:, :, ph : ph + h, pw : pw + w]


def conv2d_forward(x, w, b, stride, padding):
    """x: (B,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout,) or None."""
    cout = w.shape[0]
    cols, oh, ow = im2col(x, w.shape[2:], stride, padding)
    out = cols.reshape(-1, cols.shape[-1]) @ w.reshape(cout, -1).T
    if b is not None:
        out += b
    return np.ascontiguousarray(
        out.reshape(x.shape[0], oh, ow, cout).transpose(0, 3, 1, 2)
    )


def conv2d_input_grad(g, w, x_shape, stride, padding):
    """Gradient of conv2d w.r.t. its input. g: (B,Cout,OH,OW)."""
    b, cout, oh, ow = g.shape
    gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
    cols = (gm @ w.reshape(cout, -1)).reshape(b, oh, ow, -1)
    return col2im(cols, x_shape, w.shape[2:], stride, padding)


def conv2d_param_grad(g, x, w_shape, stride, padding):
    """Gradients of conv2d w.r.t. weights and bias."""
    cout = w_shape[0]
    cols, _, _ = im2col(x, w_shape[2:], stride, padding)
    gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
    gw = (gm.T @ cols.reshape(-1, cols.shape[-1])).reshape(w_shape)
    gb = gm.sum(axis=0)
    return gw, gb


def maxpool_forward(x, kernel, stride):
    """Returns (out, argmax) with argmax holding flat in-window indices.

    Ties resolve to the first maximum in row-major window order.
    """
    kh, kw = kernel
    sh, sw = stride
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(*win.shape[:4], kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int32)


def maxpool_scatter(values, argmax, x_shape, kernel, stride):
    """Scatter per-window values onto the winning input positions.

    Used for both the gradient and winner-take-all relevance routing.
    """
    b, c, h, w = x_shape
    kh, kw = kernel
    sh, sw = stride
    _, _, oh, ow = values.shape
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    rows = oy[None, None] * sh + argmax // kw
    clms = ox[None, None] * sw + argmax % kw
    bidx = np.arange(b)[:, None, None, None]
    cidx = np.arange(c)[None, :, None, None]
    flat_idx = (
        bidx * (c * h * w) + cidx * (h * w) + rows * w + clms
    ).ravel()
    out = np.zeros(b * c * h * w, dtype=values.dtype)
    np.add.at(out, flat_idx, values.ravel())
    return out.reshape(x_shape)


def avgpool_forward(x, kernel, stride):
    kh, kw = kernel
    sh, sw = stride
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return np.ascontiguousarray(win.mean(axis=(-2, -1)))


def avgpool_input_grad(g, x_shape, kernel, stride):
    """Spread each output gradient uniformly over its window (g/n per cell)."""
    b, c, h, w = x_shape
    kh, kw = kernel
    _, _, oh, ow = g.shape
    cell = (g / (kh * kw))[:, :, :, :, None, None]
    cols = np.broadcast_to(cell, (b, c, oh, ow, kh, kw))
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5))
    return col2im(cols.reshape(b, oh, ow, -1), x_shape, kernel, stride, (0, 0))


def softmax(x, axis=1):
    """Max-shifted softmax along `axis`."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def upsample_nearest(grid, out_h, out_w):
    """Blocky upsample of a 2-D grid: output pixel (y,x) takes cell
    (y*gh//H, x*gw//W)."""
    gh, gw = grid.shape
    rows = (np.arange(out_h) * gh) // out_h
    cols = (np.arange(out_w) * gw) // out_w
    return grid[np.ix_(rows, cols)]


def upsample_bilinear(grid, out_h, out_w):
    """Bilinear upsample with half-pixel centers (align_corners=False)."""
    gh, gw = grid.shape
    if gh == 1 and gw == 1:
        return np.full((out_h, out_w), grid[0, 0], dtype=grid.dtype)
    ys = (np.arange(out_h) + 0.5) * (gh / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (gw / out_w) - 0.5
    ys = np.clip(ys, 0, gh - 1)
    xs = np.clip(xs, 0, gw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy
