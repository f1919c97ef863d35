import numpy as np
import pytest
import torch

from styleroute.losses import LossWeights, get_extractor
from styleroute.model import Network
from styleroute.synth import make_synthetic_dataset
from styleroute.trainer import (
    FORMAT_VERSION, MAGIC, Checkpoint, CheckpointError, TrainConfig, TrainingDiverged, checkpoint_bytes,
    enhance, enhance_batch, load_checkpoint, parse_checkpoint, phase2_loss, pseudo_active, save_checkpoint,
    train, train_phase1, train_phase2, with_overrides,
)

from conftest import SMALL


@pytest.fixture(scope="module")
def data():
    return make_synthetic_dataset(None, 4, [0.2, 0.8], seed=0, resolution=(16, 16))


def cfg(**kw):
    base = dict(phase1_steps=4, phase2_steps=4, seed=3, model=SMALL, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def params_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@pytest.fixture(scope="module")
def trained(data):
    return train(data, cfg())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(phase1_steps=0, phase2_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(pseudo_label_start_fraction=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(extractor="resnet")


def test_config_round_trip():
    c = cfg(weights=LossWeights(lambda_style=0.0), K=3)
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert with_overrides(c, weights={"lambda_route": 0.5}).weights.lambda_route == 0.5


def test_zero_learning_rate_keeps_parameters(data):
    c = cfg(learning_rate=0.0)
    torch.manual_seed(c.seed)
    ref = {k: v.detach().numpy().copy() for k, v in Network(c.model).state_dict().items()}
    out = train(data, c)
    assert params_equal(ref, out.params)


def test_training_is_deterministic(data, trained):
    again = train(data, cfg())
    assert params_equal(trained.params, again.params)
    assert checkpoint_bytes(again) == checkpoint_bytes(trained)


def test_phase1_leaves_router_untouched(data):
    c = cfg()
    p1 = train_phase1(data, c)
    torch.manual_seed(c.seed)
    init = Network(c.model).state_dict()
    for k, v in p1.params.items():
        if k.startswith("router."):
            assert np.array_equal(v, init[k].numpy()), k
    assert any(not np.array_equal(v, init[k].numpy()) for k, v in p1.params.items() if k.startswith("encdec."))


def test_pseudo_gating():
    assert not any(pseudo_active(s, 10, 1.0) for s in range(10))
    assert [pseudo_active(s, 10, 0.5) for s in range(10)] == [False] * 5 + [True] * 5
    assert all(pseudo_active(s, 10, 0.0) for s in range(10))


def test_gated_phase2_route_terms_carry_no_gradient(data):
    c = cfg(pseudo_label_start_fraction=1.0)
    p2 = train_phase2(data, c, train_phase1(data, c))
    rows = [r for r in p2.log if r["phase"] == 2]
    assert all(r["route"] == 0.0 and r["k_recon"] == 0.0 for r in rows)
    assert all(sum(r[f"kbar_{k}"] for k in range(3)) == 0 for r in rows)
    net = p2.network()
    x = torch.from_numpy(np.stack(data.inputs())).permute(0, 3, 1, 2)
    y = torch.from_numpy(np.stack(data.targets())).permute(0, 3, 1, 2)
    parts, _, _ = phase2_loss(net, x, y, c, get_extractor("random"), pseudo=False)
    gated = c.weights.lambda_route * parts["route"] + c.weights.lambda_k_recon * parts["k_recon"]
    assert not gated.requires_grad or all(
        g is None or torch.all(g == 0)
        for g in torch.autograd.grad(gated, list(net.router.parameters()), allow_unused=True)
    )


def test_pseudo_labels_logged_when_active(data):
    c = cfg(pseudo_label_start_fraction=0.0, batch_size=2)
    ck = train(data, c)
    rows = [r for r in ck.log if r["phase"] == 2]
    assert all(sum(r[f"kbar_{k}"] for k in range(3)) == 2 for r in rows)
    assert len(ck.log) == c.phase1_steps + c.phase2_steps


def test_phase2_only_budget(data):
    ck = train(data, cfg(phase1_steps=0))
    assert ck.phase == 2 and ck.step == 4


def test_checkpoint_round_trip_is_byte_identical(tmp_path, trained):
    p = tmp_path / "a.ckpt"
    save_checkpoint(trained, p)
    loaded = load_checkpoint(p)
    save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert p.read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert params_equal(trained.params, loaded.params)
    assert loaded.config == trained.config
    assert p.read_bytes().startswith(MAGIC)


def test_checkpoint_wrong_version(trained):
    data = checkpoint_bytes(trained).replace(
        f"format_version {FORMAT_VERSION}\n".encode(), b"format_version 99\n", 1)
    with pytest.raises(CheckpointError, match="format_version 99"):
        parse_checkpoint(data)


@pytest.mark.parametrize("mutate", [
    lambda b: b"garbage" + b,
    lambda b: b[:-10],
    lambda b: b + b"xx",
    lambda b: b[:len(MAGIC) + 30],
])
def test_checkpoint_corruption_diagnosed(trained, mutate):
    with pytest.raises(CheckpointError):
        parse_checkpoint(mutate(checkpoint_bytes(trained)))


def test_enhance_after_round_trip(tmp_path, data, trained):
    save_checkpoint(trained, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    a, da = enhance(data[0].input, trained)
    b, db = enhance(data[0].input, loaded)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert torch.equal(da.weights, db.weights)
    assert a.shape == data[0].input.shape


def test_enhance_deterministic_and_batch_consistent(data, trained):
    a, _ = enhance(data[1].input, trained)
    b, _ = enhance(data[1].input, trained)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    out = enhance_batch(data.inputs(), trained)
    assert out["output"].shape == (4, 16, 16, 3)
    assert out["states"].shape == (4, 3, 16, 16, 3)
    np.testing.assert_allclose(out["weights"].sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(out["output"][1], a.pixels, atol=1e-6)


def test_enhance_rejects_bad_resolution(trained):
    with pytest.raises(ValueError):
        enhance(np.zeros((10, 10, 3)), trained)


def test_non_finite_loss_aborts_with_component(data):
    c = cfg(learning_rate=1e30, phase2_steps=0, phase1_steps=20)
    with pytest.raises(TrainingDiverged, match="component"):
        train(data, c)


def test_checkpoint_network_namespaces(trained):
    prefixes = {k.split(".")[0] for k in trained.params}
    assert prefixes == {"encdec", "sreu", "router"}
    assert isinstance(trained, Checkpoint)


@pytest.mark.slow
def test_phase1_overfit_trend():
    ds = make_synthetic_dataset(None, 8, [0.2, 0.8], seed=1, resolution=(64, 64))
    ck = train_phase1(ds, TrainConfig(phase1_steps=2000, seed=0))
    loss = np.array([r["rep_dec"] for r in ck.log])
    start = loss[:10].mean()
    assert loss[-50:].mean() < 0.25 * start
    ema, alpha = [], 2 / (200 + 1)
    acc = loss[0]
    for v in loss:
        acc = alpha * v + (1 - alpha) * acc
        ema.append(acc)
    assert ema[-1] <= 0.5 * ema[0]
