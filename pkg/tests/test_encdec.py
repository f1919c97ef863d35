import numpy as np
import pytest
import torch

from styleroute.encdec import EncDec, Encoder, grad_map, gradient_tensor, grayscale
from styleroute.metrics import psnr
from styleroute.synth import procedural_image
from styleroute.tensors import to_numpy, to_tensor

from conftest import SMALL, make_net, sobel_oracle


def test_constant_image_gives_zero_gradient():
    assert np.all(grad_map(np.full((6, 7, 3), 0.4)) == 0)


def test_grayscale_weights():
    x = to_tensor(np.array([[[1.0, 0.0, 0.0]]]), torch.float64)
    assert grayscale(x).item() == pytest.approx(0.299, abs=1e-12)


def test_vertical_step_response():
    img = np.zeros((5, 5, 3))
    img[:, 2:] = 1.0
    g = grad_map(img)
    oracle = sobel_oracle(img[..., 0])
    np.testing.assert_allclose(g, oracle, atol=1e-12)
    interior = np.abs(g[1:4, 1:4, 0])
    # columns 1 and 2 straddle the step; column 3 is flat
    np.testing.assert_allclose(interior[:, 0], 4.0)
    np.testing.assert_allclose(interior[:, 1], 4.0)
    np.testing.assert_allclose(interior[:, 2], 0.0)
    np.testing.assert_allclose(g[1:4, 1:4, 1], 0.0)


def test_grad_map_matches_oracle_on_random(rng):
    img = rng.random((7, 9, 3))
    gray = img @ np.array([0.299, 0.587, 0.114])
    np.testing.assert_allclose(grad_map(img), sobel_oracle(gray), atol=1e-12)


def test_grad_map_is_linear(rng):
    x = torch.from_numpy(rng.random((1, 3, 8, 8)))
    np.testing.assert_allclose(gradient_tensor(2.5 * x).numpy(), 2.5 * gradient_tensor(x).numpy(), atol=1e-12)


def test_encode_shapes():
    torch.manual_seed(0)
    ed = EncDec(rep_width=32, style_width=64, downsample=4)
    rep, style = ed.encode(torch.rand(1, 3, 64, 64))
    assert rep.shape == (1, 32, 64, 64)
    assert style.shape == (1, 64, 16, 16)
    assert ed.decode(rep).shape == (1, 3, 64, 64)


def test_encode_rejects_indivisible_resolution():
    enc = Encoder(8, 8, 4)
    with pytest.raises(ValueError, match="divisible"):
        enc(torch.rand(1, 3, 10, 12))
    with pytest.raises(ValueError):
        Encoder(8, 8, 3)


def test_decode_rejects_wrong_width():
    ed = EncDec(8, 8, 4)
    with pytest.raises(ValueError):
        ed.decode(torch.rand(1, 5, 8, 8))


def test_encode_deterministic_and_not_brightness_invariant():
    net = make_net(SMALL)
    x = to_tensor(procedural_image(0, (32, 32)))
    with torch.no_grad():
        r1, s1 = net.encode(x)
        r2, s2 = net.encode(x)
        r3, _ = net.encode((x + 0.1).clamp(0, 1))
    assert torch.equal(r1, r2) and torch.equal(s1, s2)
    assert not torch.allclose(r1, r3)


def test_decode_range_and_shape(rng):
    net = make_net(SMALL)
    with torch.no_grad():
        out = net.decode(torch.from_numpy(rng.normal(0, 5, (2, 8, 16, 12))).float())
    assert out.shape == (2, 3, 16, 12)
    assert out.min() >= 0 and out.max() <= 1


def test_all_parameters_receive_finite_gradients(rng):
    net = make_net(SMALL, randomize_injection=True)
    x = torch.from_numpy(rng.random((2, 3, 16, 16))).float()
    out, decision, _ = net(x, K=2)
    (out.mean() + decision.logits.pow(2).mean()).backward()
    for name, p in net.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name


@pytest.mark.slow
def test_reconstruction_overfit_exceeds_30db():
    torch.manual_seed(0)
    ed = EncDec(32, 64, 4)
    img = procedural_image(1, (32, 32))
    x = to_tensor(img)
    opt = torch.optim.Adam(ed.parameters(), lr=2e-3)
    for _ in range(500):
        rep, _ = ed.encode(x)
        loss = (ed.decode(rep) - x).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        out = to_numpy(ed.decode(ed.encode(x)[0]))[0]
    assert psnr(out, img) > 30.0
