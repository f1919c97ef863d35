"""Full-reference (PSNR, SSIM) and no-reference (UIQM, UCIQE) image quality.

Inputs are channel-last RGB rasters in [0, 1]. UIQM statistics are taken on
the 0-255 scale of the original metric definition.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_ALPHA = (0.1, 0.1)
UIQM_BLOCK = 8

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)


def _rgb(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 raster, got shape {a.shape}")
    return a


def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) with peak 1.0; identical images give the 100 dB cap."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def luminance(a) -> np.ndarray:
    return _rgb(a) @ LUMA


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the luminance."""
    a, b = _pair(a, b)
    ya = luminance(a) if a.ndim == 3 else a
    yb = luminance(b) if b.ndim == 3 else b
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"image {ya.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    r = SSIM_WINDOW // 2

    def filt(x):
        x = ndimage.correlate1d(x, g, axis=0, mode="reflect")
        x = ndimage.correlate1d(x, g, axis=1, mode="reflect")
        return x[r:-r, r:-r]

    mu_a, mu_b = filt(ya), filt(yb)
    var_a = filt(ya * ya) - mu_a**2
    var_b = filt(yb * yb) - mu_b**2
    cov = filt(ya * yb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


# -- UIQM ------------------------------------------------------------------------

def trimmed_mean(x, alpha_l=UICM_ALPHA[0], alpha_r=UICM_ALPHA[1]) -> float:
    """Asymmetric alpha-trimmed mean: drop ceil(aL*K) lowest and floor(aR*K) highest."""
    x = np.sort(np.ravel(x))
    k = x.size
    lo, hi = math.ceil(alpha_l * k), math.floor(alpha_r * k)
    kept = x[lo:k - hi]
    return float(kept.mean()) if kept.size else 0.0


def uicm(a) -> float:
    px = _rgb(a) * 255.0
    rg = px[..., 0] - px[..., 1]
    yb = 0.5 * (px[..., 0] + px[..., 1]) - px[..., 2]
    mu_rg, mu_yb = trimmed_mean(rg), trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    return -0.0268 * math.hypot(mu_rg, mu_yb) + 0.1586 * math.sqrt(var_rg + var_yb)


def _blocks(x, block):
    h, w = x.shape
    k2, k1 = h // block, w // block
    x = x[: k2 * block, : k1 * block]
    return x.reshape(k2, block, k1, block).swapaxes(1, 2).reshape(k2 * k1, block * block)


def eme(x, block=UIQM_BLOCK) -> float:
    """2/(k1 k2) * sum of log(max/min) over blocks; degenerate blocks contribute 0."""
    b = _blocks(x, block)
    if b.shape[0] == 0:
        return 0.0
    mx, mn = b.max(axis=1), b.min(axis=1)
    ok = (mx > mn) & (mn > 0)
    vals = np.zeros_like(mx)
    vals[ok] = np.log(mx[ok] / mn[ok])
    return float(2.0 / b.shape[0] * vals.sum())


def sobel_magnitude(x) -> np.ndarray:
    gx = ndimage.sobel(x, axis=1, mode="reflect")
    gy = ndimage.sobel(x, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def uism(a, block=UIQM_BLOCK) -> float:
    px = _rgb(a) * 255.0
    return float(sum(
        LUMA[c] * eme(sobel_magnitude(px[..., c]) * px[..., c], block) for c in range(3)
    ))


def uiconm(a, block=UIQM_BLOCK) -> float:
    """Block log-AMEE of the intensity: -(1/n) sum r log r, r = (max-min)/(max+min)."""
    b = _blocks(luminance(a) * 255.0, block)
    if b.shape[0] == 0:
        return 0.0
    mx, mn = b.max(axis=1), b.min(axis=1)
    ok = mx > mn
    r = np.zeros_like(mx)
    r[ok] = (mx[ok] - mn[ok]) / (mx[ok] + mn[ok])
    vals = np.zeros_like(mx)
    vals[ok] = r[ok] * np.log(r[ok])
    return float(-vals.sum() / b.shape[0])


def combine_uiqm(uicm_v, uism_v, uiconm_v) -> float:
    c1, c2, c3 = UIQM_COEFFS
    return c1 * uicm_v + c2 * uism_v + c3 * uiconm_v


def uiqm(a) -> float:
    return combine_uiqm(uicm(a), uism(a), uiconm(a))


# -- UCIQE -----------------------------------------------------------------------

_RGB_TO_XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
# white point taken from the same matrix so that neutral grays have a = b = 0
_WHITE = _RGB_TO_XYZ.sum(axis=1)


def rgb_to_lab(a) -> np.ndarray:
    """sRGB in [0, 1] -> CIELab with L in [0, 100]."""
    px = _rgb(a)
    lin = np.where(px <= 0.04045, px / 12.92, ((px + 0.055) / 1.055) ** 2.4)
    xyz = (lin @ _RGB_TO_XYZ.T) / _WHITE
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    L = 116 * f[..., 1] - 16
    A = 500 * (f[..., 0] - f[..., 1])
    B = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, A, B], axis=-1)


def uciqe_components(a):
    """(chroma std, luminance contrast, mean saturation) on L/100 and chroma/100."""
    lab = rgb_to_lab(a)
    lum = lab[..., 0].ravel() / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]).ravel() / 100.0
    sigma_c = float(np.std(chroma))
    s = np.sort(lum)
    n = max(1, int(round(0.01 * s.size)))
    contrast = float(s[-n:].mean() - s[:n].mean())
    sat = np.zeros_like(chroma)
    ok = lum > 0
    sat[ok] = chroma[ok] / lum[ok]
    return sigma_c, contrast, float(sat.mean())


def combine_uciqe(sigma_c, contrast, saturation) -> float:
    c1, c2, c3 = UCIQE_COEFFS
    return c1 * sigma_c + c2 * contrast + c3 * saturation


def uciqe(a) -> float:
    return combine_uciqe(*uciqe_components(a))


# -- reports ---------------------------------------------------------------------

METRIC_COLUMNS = ("psnr", "ssim", "uiqm", "uciqe")


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    K: int | None = None

    @property
    def columns(self):
        cols = ["name", *METRIC_COLUMNS]
        if self.K is not None:
            cols += [f"w_{k}" for k in range(self.K + 1)]
        return cols

    def means(self) -> dict:
        return {c: float(np.mean([r[c] for r in self.rows])) for c in self.columns[1:]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.columns)
            for r in self.rows:
                wr.writerow([r["name"]] + [repr(float(r[c])) for c in self.columns[1:]])
            m = self.means()
            wr.writerow(["__mean__"] + [repr(m[c]) for c in self.columns[1:]])

    def to_json(self, path) -> None:
        payload = {"columns": self.columns, "rows": self.rows, "means": self.means()}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    def pretty(self) -> str:
        cols = self.columns
        lines = ["  ".join(f"{c:>12}" for c in cols)]
        for r in self.rows:
            lines.append("  ".join([f"{r['name']:>12}"] + [f"{r[c]:12.4f}" for c in cols[1:]]))
        m = self.means()
        lines.append("  ".join([f"{'mean':>12}"] + [f"{m[c]:12.4f}" for c in cols[1:]]))
        return "\n".join(lines)


def evaluate_images(outputs, targets, names, weights=None) -> MetricReport:
    """Score each output against its target; optional per-image routing weights."""
    if not (len(outputs) == len(targets) == len(names)):
        raise ValueError("outputs, targets and names differ in length")
    K = None if weights is None else np.asarray(weights).shape[1] - 1
    rep = MetricReport(K=K)
    for i, (o, t, n) in enumerate(zip(outputs, targets, names)):
        row = {"name": n, "psnr": psnr(o, t), "ssim": ssim(o, t), "uiqm": uiqm(o), "uciqe": uciqe(o)}
        if weights is not None:
            for k in range(K + 1):
                row[f"w_{k}"] = float(weights[i][k])
        rep.rows.append(row)
    return rep
