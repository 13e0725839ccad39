#!/usr/bin/env python3
"""Walk through the pixel critics on two synthetic charts.

Builds a small bar chart, perturbs a copy of it, and scores the pair with
every pixel metric: MSE, SSIM, PSNR, and histogram EMD. Also shows alignment
(candidates are resized to the original's dimensions before scoring).
"""

import numpy as np

from recode import critics
from recode.images import RasterImage, resize_bilinear


def make_chart(bar_heights, size=(96, 64)):
    w, h = size
    arr = np.full((h, w, 3), 255, dtype=np.uint8)
    colors = [(200, 60, 40), (60, 160, 60), (40, 120, 200), (200, 200, 40)]
    bar_w = w // (2 * len(bar_heights))
    for i, (height, color) in enumerate(zip(bar_heights, colors)):
        x0 = (2 * i + 1) * bar_w
        arr[h - 6 - height : h - 6, x0 : x0 + bar_w] = color
    arr[h - 6 : h - 4, 4 : w - 4] = (20, 20, 20)  # baseline
    return RasterImage.from_array(arr)


# 1. An "original" chart and a slightly-off reconstruction (one bar misread).

original = make_chart([30, 44, 18, 38])
close = make_chart([30, 44, 22, 38])
wrong = make_chart([10, 14, 48, 8])

print("metric table (lower-better metrics first):\n")
print(f"{'metric':>8} | {'close candidate':>16} | {'wrong candidate':>16}")
print("-" * 48)
for name, fn in [("mse", critics.mse), ("emd", critics.emd)]:
    print(f"{name:>8} | {fn(original, close):16.3f} | {fn(original, wrong):16.3f}")
for name, fn in [("ssim", critics.ssim), ("psnr", critics.psnr)]:
    print(f"{name:>8} | {fn(original, close):16.3f} | {fn(original, wrong):16.3f}")

# 2. Every kind normalizes so that smaller always means more faithful; that is
#    what selection ranks on.

print("\nnormalized scores (smaller = more faithful):")
for kind in critics.PIXEL_KINDS:
    fn = {"mse": critics.mse, "ssim": critics.ssim, "psnr": critics.psnr, "emd": critics.emd}[kind]
    close_score = critics.make_score(kind, fn(original, close))
    wrong_score = critics.make_score(kind, fn(original, wrong))
    better = "close" if close_score.normalized < wrong_score.normalized else "wrong"
    print(f"  {kind:>5}: close={close_score.normalized:10.3f}  wrong={wrong_score.normalized:10.3f}  -> {better} wins")

# 3. Candidates rendered at a different resolution are aligned (bilinear,
#    corner-aligned) to the original's dimensions before any pixel metric.

oversized = resize_bilinear(close, 192, 128)
_, aligned = critics.align(original, oversized)
print(f"\noversized candidate {oversized.width}x{oversized.height} "
      f"aligned back to {aligned.width}x{aligned.height}; "
      f"mse after alignment = {critics.mse(original, aligned):.3f}")
