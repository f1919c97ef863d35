import csv
import json
import math

import numpy as np
import pytest

from styleroute.metrics import (
    combine_uciqe, combine_uiqm, evaluate_images, psnr, rgb_to_lab, ssim, trimmed_mean, uciqe,
    uciqe_components, uicm, uiconm, uiqm, uism,
)


def colorful(seed=3, h=32, w=40):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = np.stack([0.2 + 0.6 * xx, 0.5 + 0.3 * np.sin(6 * yy), 0.3 + 0.5 * yy * xx], axis=-1)
    return np.clip(base + r.normal(0, 0.05, base.shape), 0.01, 1.0)


# -- independent loop oracles ------------------------------------------------------

def oracle_ssim(a, b):
    ya, yb = a @ [0.299, 0.587, 0.114], b @ [0.299, 0.587, 0.114]
    g1 = [math.exp(-((i - 5) ** 2) / (2 * 1.5**2)) for i in range(11)]
    s = sum(g1)
    win = [[g1[i] * g1[j] / s / s for j in range(11)] for i in range(11)]
    h, w = ya.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa = ya[i:i + 11, j:j + 11]
            pb = yb[i:i + 11, j:j + 11]
            ma = sum(win[u][v] * pa[u, v] for u in range(11) for v in range(11))
            mb = sum(win[u][v] * pb[u, v] for u in range(11) for v in range(11))
            va = sum(win[u][v] * (pa[u, v] - ma) ** 2 for u in range(11) for v in range(11))
            vb = sum(win[u][v] * (pb[u, v] - mb) ** 2 for u in range(11) for v in range(11))
            cv = sum(win[u][v] * (pa[u, v] - ma) * (pb[u, v] - mb) for u in range(11) for v in range(11))
            c1, c2 = 1e-4, 9e-4
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def _sym(x, i, j):
    # half-sample symmetric boundary: the edge sample is repeated
    h, w = x.shape
    i = -i - 1 if i < 0 else (2 * h - i - 1 if i >= h else i)
    j = -j - 1 if j < 0 else (2 * w - j - 1 if j >= w else j)
    return x[i, j]


def _sobel_mag(x):
    h, w = x.shape
    out = np.zeros((h, w))
    sm, df = (1, 2, 1), (-1, 0, 1)
    for i in range(h):
        for j in range(w):
            gx = sum(sm[u] * df[v] * _sym(x, i + u - 1, j + v - 1) for u in range(3) for v in range(3))
            gy = sum(df[u] * sm[v] * _sym(x, i + u - 1, j + v - 1) for u in range(3) for v in range(3))
            out[i, j] = math.sqrt(gx * gx + gy * gy)
    return out


def _block_list(x, k=8):
    return [x[i:i + k, j:j + k].ravel().tolist()
            for i in range(0, x.shape[0] - k + 1, k) for j in range(0, x.shape[1] - k + 1, k)]


def _trim(vals, a=0.1):
    v = sorted(vals)
    lo, hi = math.ceil(a * len(v)), math.floor(a * len(v))
    kept = v[lo:len(v) - hi]
    return sum(kept) / len(kept)


def oracle_uiqm(img):
    px = img * 255.0
    h, w, _ = px.shape
    rg = [px[i, j, 0] - px[i, j, 1] for i in range(h) for j in range(w)]
    yb = [(px[i, j, 0] + px[i, j, 1]) / 2 - px[i, j, 2] for i in range(h) for j in range(w)]
    mrg, myb = _trim(rg), _trim(yb)
    srg = sum((v - mrg) ** 2 for v in rg) / len(rg)
    syb = sum((v - myb) ** 2 for v in yb) / len(yb)
    c_uicm = -0.0268 * math.sqrt(mrg**2 + myb**2) + 0.1586 * math.sqrt(srg + syb)

    def eme(x):
        total, blocks = 0.0, _block_list(x)
        for b in blocks:
            mx, mn = max(b), min(b)
            if mx > mn and mn > 0:
                total += math.log(mx / mn)
        return 2 * total / len(blocks)

    c_uism = sum(wt * eme(_sobel_mag(px[..., c]) * px[..., c]) for c, wt in enumerate((0.299, 0.587, 0.114)))

    lum = px @ np.array([0.299, 0.587, 0.114])
    blocks = _block_list(lum)
    acc = 0.0
    for b in blocks:
        mx, mn = max(b), min(b)
        if mx > mn:
            r = (mx - mn) / (mx + mn)
            acc += r * math.log(r)
    c_uiconm = -acc / len(blocks)
    return 0.0282 * c_uicm + 0.2953 * c_uism + 3.5753 * c_uiconm


def _lab_pixel(rgb):
    m = ((0.412453, 0.357580, 0.180423), (0.212671, 0.715160, 0.072169), (0.019334, 0.119193, 0.950227))
    lin = [c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4 for c in rgb]
    xyz = [sum(m[r][c] * lin[c] for c in range(3)) / sum(m[r]) for r in range(3)]
    d = 6 / 29
    f = [t ** (1 / 3) if t > d**3 else t / (3 * d * d) + 4 / 29 for t in xyz]
    return 116 * f[1] - 16, 500 * (f[0] - f[1]), 200 * (f[1] - f[2])


def oracle_uciqe(img):
    h, w, _ = img.shape
    labs = [_lab_pixel(img[i, j]) for i in range(h) for j in range(w)]
    L = [p[0] / 100 for p in labs]
    C = [math.hypot(p[1], p[2]) / 100 for p in labs]
    mc = sum(C) / len(C)
    sc = math.sqrt(sum((c - mc) ** 2 for c in C) / len(C))
    s = sorted(L)
    n = max(1, round(0.01 * len(s)))
    con = sum(s[-n:]) / n - sum(s[:n]) / n
    sat = sum(c / l if l > 0 else 0.0 for c, l in zip(C, L)) / len(C)
    return 0.4680 * sc + 0.2745 * con + 0.2576 * sat


# -- psnr / ssim -------------------------------------------------------------------

def test_psnr_closed_forms(rng):
    a = rng.random((8, 8, 3))
    assert psnr(a, a) == 100.0
    b = np.full((4, 4, 3), 0.5)
    assert psnr(b, b + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_loop_and_is_symmetric(rng):
    a, b = rng.random((5, 6, 3)), rng.random((5, 6, 3))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch(rng):
    with pytest.raises(ValueError):
        psnr(rng.random((4, 4, 3)), rng.random((4, 5, 3)))


def test_ssim_closed_forms(rng):
    a = rng.random((16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    got = ssim(np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.6))
    want = (2 * 0.3 + 1e-4) / (0.25 + 0.36 + 1e-4)
    assert got == pytest.approx(want, abs=1e-6)
    assert round(want, 4) == 0.9836


def test_ssim_matches_sliding_window_oracle(rng):
    a, b = rng.random((14, 15, 3)), rng.random((14, 15, 3))
    assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-6)


def test_ssim_small_image_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


def test_ssim_bounded(rng):
    a = rng.random((16, 16, 3))
    assert -1 <= ssim(a, 1 - a) <= 1


# -- uiqm / uciqe ------------------------------------------------------------------

def test_uiqm_constant_gray_is_zero():
    g = np.full((16, 16, 3), 0.4)
    assert (uicm(g), uism(g), uiconm(g)) == (0.0, 0.0, 0.0)
    assert uiqm(g) == 0.0


def test_uiqm_combination_closed_form():
    assert combine_uiqm(1, 1, 1) == pytest.approx(3.8988, abs=1e-12)


def test_uiqm_matches_definition_oracle():
    img = colorful()
    assert uiqm(img) == pytest.approx(oracle_uiqm(img), abs=1e-6)


def test_uciqe_constant_gray_is_zero():
    assert uciqe(np.full((8, 8, 3), 0.7)) == pytest.approx(0.0, abs=1e-12)


def test_uciqe_combination_closed_form():
    assert combine_uciqe(1, 1, 1) == pytest.approx(1.0001, abs=1e-12)


def test_uciqe_matches_definition_oracle():
    img = colorful(seed=5, h=20, w=24)
    assert uciqe(img) == pytest.approx(oracle_uciqe(img), abs=1e-6)


def test_lab_white_and_gray():
    lab = rgb_to_lab(np.array([[[1.0, 1.0, 1.0], [0.3, 0.3, 0.3]]]))
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=1e-9)
    np.testing.assert_allclose(lab[..., 1:], 0.0, atol=1e-12)


def test_uciqe_components_nonnegative():
    assert all(c >= 0 for c in uciqe_components(colorful()))


@pytest.mark.parametrize("seed", range(3))
def test_no_reference_metrics_flip_invariant(seed):
    img = colorful(seed=seed, h=24, w=32)
    flipped = img[:, ::-1]
    assert uiqm(flipped) == pytest.approx(uiqm(img), abs=1e-6)
    assert uciqe(flipped) == pytest.approx(uciqe(img), abs=1e-6)


def test_trimmed_mean():
    vals = np.arange(10.0)
    assert trimmed_mean(vals) == pytest.approx(np.mean(vals[1:9]))


# -- reports ------------------------------------------------------------------------

def test_report_means_and_files(tmp_path, rng):
    outs = [rng.random((16, 16, 3)) for _ in range(3)]
    gts = [rng.random((16, 16, 3)) for _ in range(3)]
    w = rng.dirichlet(np.ones(3), size=3)
    rep = evaluate_images(outs, gts, ["a", "b", "c"], w)
    assert rep.columns == ["name", "psnr", "ssim", "uiqm", "uciqe", "w_0", "w_1", "w_2"]
    for c in rep.columns[1:]:
        assert rep.means()[c] == pytest.approx(sum(r[c] for r in rep.rows) / 3, abs=1e-9)
    rep.to_csv(tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert [r["name"] for r in rows] == ["a", "b", "c", "__mean__"]
    assert float(rows[0]["psnr"]) == rep.rows[0]["psnr"]
    rep.to_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["means"]["psnr"] == pytest.approx(rep.means()["psnr"])
    assert "mean" in rep.pretty()


def test_evaluate_on_ground_truth(rng):
    gts = [rng.random((16, 16, 3)) for _ in range(2)]
    rep = evaluate_images(gts, gts, ["x", "y"])
    assert all(r["psnr"] == 100.0 and r["ssim"] == pytest.approx(1.0, abs=1e-12) for r in rep.rows)


def test_evaluate_length_mismatch(rng):
    with pytest.raises(ValueError):
        evaluate_images([rng.random((16, 16, 3))], [], ["a"])
