"""Pure numpy im2col / col2im, used when the compiled extension is absent."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3d(xp, kt, kh, kw, st, sh, sw, To, Ho, Wo):
    N, C = xp.shape[:2]
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    win = win[:, :, : (To - 1) * st + 1 : st, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]
    # (N, C, To, Ho, Wo, kt, kh, kw) -> (N, C, kt, kh, kw, To, Ho, Wo)
    win = win.transpose(0, 1, 5, 6, 7, 2, 3, 4)
    return np.ascontiguousarray(win).reshape(N, C * kt * kh * kw, To * Ho * Wo)


def col2im3d(cols, padded_shape, kt, kh, kw, st, sh, sw, To, Ho, Wo):
    N, C = padded_shape[:2]
    out = np.zeros(padded_shape, dtype=np.float64)
    c6 = cols.reshape(N, C, kt, kh, kw, To, Ho, Wo)
    for a in range(kt):
        for b in range(kh):
            for d in range(kw):
                out[
                    :,
                    :,
                    a : a + (To - 1) * st + 1 : st,
                    b : b + (Ho - 1) * sh + 1 : sh,
                    d : d + (Wo - 1) * sw + 1 : sw,
                ] += c6[:, :, a, b, d]
    return out
