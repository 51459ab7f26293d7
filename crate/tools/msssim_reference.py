#!/usr/bin/env python3
"""Golden values for the MS-SSIM cross-check.

Generates the same 20 deterministic 64x64 image pairs as the Rust test in
tests/msssim_golden.rs (keep the two generators in sync!) and prints
tf.image.ssim_multiscale for each pair, using the same truncated and
renormalized 3-scale weights the library applies at 64x64.

Usage: python3 tools/msssim_reference.py
"""

import math

import numpy as np
import tensorflow as tf

W = H = 64
PAIRS = 20
WEIGHTS5 = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]


class Lcg:
    """Must match the Rust Lcg in tests/msssim_golden.rs bit-for-bit."""

    MASK = (1 << 64) - 1

    def __init__(self, k):
        self.state = (0x243F6A8885A308D3 ^ (k * 0x9E3779B97F4A7C15)) & self.MASK

    def next(self):
        self.state = (self.state * 6364136223846793005 + 1442695040888963407) & self.MASK
        return (self.state >> 11) / float(1 << 53)


def base_image(k):
    fu = 0.11 + 0.013 * k
    fv = 0.07 + 0.009 * k
    gu = 0.05 + 0.011 * k
    gv = 0.17 - 0.004 * k
    img = np.zeros((H, W, 3))
    for v in range(H):
        for u in range(W):
            for c in range(3):
                x = 0.5 + 0.25 * math.sin(fu * u + fv * v + 1.7 * c) \
                        + 0.25 * math.cos(gu * u - gv * v + 0.9 * c)
                img[v, u, c] = min(max(x, 0.0), 1.0)
    return img


def box3(img):
    out = np.zeros_like(img)
    for v in range(H):
        for u in range(W):
            acc = np.zeros(3)
            for dv in (-1, 0, 1):
                for du in (-1, 0, 1):
                    acc += img[min(max(v + dv, 0), H - 1), min(max(u + du, 0), W - 1)]
            out[v, u] = acc / 9.0
    return out


def distorted(k, base):
    rng = Lcg(k)
    mode = k % 4
    if mode == 0:
        amp = 0.01 + 0.01 * k
        out = np.zeros_like(base)
        for v in range(H):
            for u in range(W):
                for c in range(3):
                    out[v, u, c] = base[v, u, c] + amp * (rng.next() - 0.5)
    elif mode == 1:
        g = 1.0 - 0.02 * k
        out = 0.5 + (base - 0.5) * g + 0.01 * k
    elif mode == 2:
        blurred = box3(base)
        amp = 0.005 * k
        out = np.zeros_like(base)
        for v in range(H):
            for u in range(W):
                for c in range(3):
                    out[v, u, c] = blurred[v, u, c] + amp * (rng.next() - 0.5)
    else:
        shifted = np.concatenate([base[:, 1:], base[:, -1:]], axis=1)
        out = 0.85 * base + 0.15 * shifted
    return np.clip(out, 0.0, 1.0)


def main():
    w3 = np.array(WEIGHTS5[:3])
    w3 = w3 / w3.sum()
    for k in range(PAIRS):
        a = base_image(k)
        b = distorted(k, a)
        val = tf.image.ssim_multiscale(
            tf.constant(a[None], tf.float64),
            tf.constant(b[None], tf.float64),
            max_val=1.0,
            power_factors=w3.tolist(),
        ).numpy()[0]
        print(f"{val:.12f},")


if __name__ == "__main__":
    main()
