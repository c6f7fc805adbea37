"""Reference SSIM values for the acceptance corpus.

Pixels come from integer formulas mirrored in tests/acceptance.cpp; scores
are scikit-image's structural_similarity on BT.601 luma with the Gaussian
11x11 window (sigma 1.5), population covariance and data_range 255.
Run: python3 tests/reference/ssim_corpus.py
"""

import numpy as np
from skimage.metrics import structural_similarity

M32 = 0xFFFFFFFF


def mix(x, y, k):
    h = ((x * 73856093) ^ (y * 19349663) ^ (k * 83492791)) & M32
    h ^= h >> 13
    h = (h * 0x5BD1E995) & M32
    h ^= h >> 15
    return h


def base(k, w, h):
    img = np.zeros((h, w, 3), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            for c in range(3):
                img[y, x, c] = (x * (3 + k) + y * (2 + k) + c * 50 + (x * y * (k + 1)) // 17) % 256
    return img


def distort(a, k):
    h, w, _ = a.shape
    b = np.zeros_like(a)
    for y in range(h):
        for x in range(w):
            for c in range(3):
                v = a[y, x, c]
                kind = k % 5
                if kind == 0:
                    v = v + mix(x, y, k * 3 + c) % 61 - 30
                elif kind == 1:
                    v = a[y, min(w - 1, x + 1 + k % 3), c]
                elif kind == 2:
                    v = v * 4 // 5 + 20
                elif kind == 3:
                    if (x // 8 + y // 8) % 2:
                        v = 255 - v
                else:
                    s = 0
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            s += a[min(h - 1, max(0, y + dy)), min(w - 1, max(0, x + dx)), c]
                    v = s // 9
                b[y, x, c] = min(255, max(0, v))
    return b


def luma(img):
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


for k in range(10):
    w, h = 64 + 4 * k, 48 + 3 * k
    a = base(k, w, h)
    b = distort(a, k)
    s = structural_similarity(luma(a), luma(b), gaussian_weights=True, sigma=1.5,
                              use_sample_covariance=False, data_range=255)
    print(f"{float(s)!r},")
