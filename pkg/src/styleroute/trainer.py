"""Two-phase training, checkpoint I/O and the ``enhance`` entry point.

Phase 1 learns the encoder/decoder and one SREU step under the
representation-decoupling objective. Phase 2 unrolls K states, routes them,
and, late in the phase, adds pseudo-label supervision from an image-space
cascade.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import Image
from .losses import (
    LossWeights, ada_mod_loss, get_extractor, k_recon_loss_batch, recon_loss, route_loss, style_loss,
)
from .model import ModelConfig, Network
from .router import route_states
from .tensors import to_numpy, to_tensor
from .trajectory import cascade_images, pseudo_labels_batch

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"STYLEROUTE-CKPT\n"


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    phase1_steps: int = 2000
    phase2_steps: int = 2000
    pseudo_label_start_fraction: float = 0.5
    learning_rate: float = 2e-4
    batch_size: int = 1
    seed: int = 0
    K: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    extractor: str = "random"
    extractor_layer: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)
    # SREU calls inside the phase-1 enhancement term; 2 trains the internal cascade baseline
    internal_depth: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.phase1_steps < 0 or self.phase2_steps < 0 or self.phase1_steps + self.phase2_steps < 1:
            raise ValueError("phase step budgets must be >= 0 with at least one step in total")
        if not 0.0 <= self.pseudo_label_start_fraction <= 1.0:
            raise ValueError("pseudo_label_start_fraction must lie in [0, 1]")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.internal_depth < 1:
            raise ValueError("internal_depth must be >= 1")
        if self.extractor not in ("random", "vgg19"):
            raise ValueError(f"unknown extractor {self.extractor!r}")

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["model"] = ModelConfig(**d.get("model", {}))
        return cls(**d)


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict  # name -> float32 ndarray, in module registration order
    step: int = 0
    phase: int = 0
    format_version: int = FORMAT_VERSION
    log: list = field(default_factory=list, repr=False)

    def network(self) -> Network:
        net = Network(self.config.model)
        state = {k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in self.params.items()}
        net.load_state_dict(state, strict=True)
        net.eval()
        return net


def _snapshot(net: Network) -> dict:
    return {k: v.detach().cpu().numpy().astype("<f4").copy() for k, v in net.state_dict().items()}


# -- checkpoint file format -----------------------------------------------------

def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in ckpt.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": ckpt.format_version,
        "step": ckpt.step,
        "phase": ckpt.phase,
        "config": ckpt.config.to_dict(),
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(f"format_version {ckpt.format_version}\n".encode())
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    for b in blobs:
        buf.write(b)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    return parse_checkpoint(data, str(path))


def parse_checkpoint(data: bytes, source="<bytes>") -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{source}: not a checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    nl = data.find(b"\n", pos)
    line = data[pos:nl].decode("ascii", "replace") if nl > 0 else ""
    if not line.startswith("format_version "):
        raise CheckpointError(f"{source}: missing format_version line")
    try:
        version = int(line.split()[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{source}: malformed format_version line {line!r}") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{source}: unsupported checkpoint format_version {version} (this build reads {FORMAT_VERSION})"
        )
    pos = nl + 1
    if len(data) < pos + 8:
        raise CheckpointError(f"{source}: truncated before header length")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    pos += hlen
    params = {}
    for e in header["params"]:
        start, end = pos + e["offset"], pos + e["offset"] + e["nbytes"]
        if end > len(data):
            raise CheckpointError(f"{source}: truncated parameter block {e['name']!r}")
        params[e["name"]] = np.frombuffer(data[start:end], dtype="<f4").reshape(e["shape"]).copy()
    expected = pos + sum(e["nbytes"] for e in header["params"])
    if expected != len(data):
        raise CheckpointError(f"{source}: {len(data) - expected} trailing bytes after parameter blocks")
    try:
        config = TrainConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: invalid config header ({exc})") from None
    return Checkpoint(config, params, header["step"], header.get("phase", 0), version)


# -- training -------------------------------------------------------------------

def _set_deterministic(config: TrainConfig):
    if config.deterministic:
        torch.use_deterministic_algorithms(True)


class _Batches:
    """Seeded epoch-wise shuffling over a dataset held as tensors."""

    def __init__(self, dataset, batch_size, seed):
        self.x = to_tensor(dataset.inputs())
        self.y = to_tensor(dataset.targets())
        self.n = len(dataset)
        self.bs = min(batch_size, self.n)
        self.rng = np.random.default_rng(seed)
        self.order, self.pos = self.rng.permutation(self.n), 0

    def next(self):
        if self.pos + self.bs > self.n:
            self.order, self.pos = self.rng.permutation(self.n), 0
        idx = torch.from_numpy(self.order[self.pos:self.pos + self.bs].copy())
        self.pos += self.bs
        return self.x[idx], self.y[idx]


def _check_finite(parts: dict, step, phase):
    for name, v in parts.items():
        if not torch.isfinite(torch.as_tensor(v)).all():
            raise TrainingDiverged(f"non-finite loss in component {name!r} at phase {phase} step {step}")


def rep_dec_terms(net, i0, igt, w, extractor, depth=1):
    """Phase-1 objective pieces; also returns (C0, S0) for reuse."""
    c0, s0 = net.encode(i0)
    cgt, sgt = net.encode(igt)
    c1, s1 = c0, s0
    for _ in range(depth):
        c1, s1 = net.step(c1, s1)
    parts = {
        "recon_input": recon_loss(i0, net.decode(c0), w, extractor),
        "recon_gt": recon_loss(igt, net.decode(cgt), w, extractor),
        "recon_enh": recon_loss(igt, net.decode(c1), w, extractor),
        "style": style_loss(s1, sgt),
    }
    parts["rep_dec"] = (
        parts["recon_input"] + parts["recon_gt"] + parts["recon_enh"] + w.lambda_style * parts["style"]
    )
    return parts, (c0, s0), (c1, s1)


def phase1_loss(net, i0, igt, config: TrainConfig, extractor):
    parts, _, _ = rep_dec_terms(net, i0, igt, config.weights, extractor, config.internal_depth)
    parts["total"] = parts["rep_dec"]
    return parts


def phase2_loss(net, i0, igt, config: TrainConfig, extractor, pseudo=True):
    w = config.weights
    parts, (c0, s0), (c1, s1) = rep_dec_terms(net, i0, igt, w, extractor)
    reps, styles = [c0, c1], [s0, s1]
    c, s = c1, s1
    for _ in range(2, config.K + 1):
        c, s = net.step(c, s)
        reps.append(c)
        styles.append(s)
    decision = route_states(net.router, reps, styles)
    parts["w_recon"] = recon_loss(igt, net.decode(decision.fused), w, extractor)
    zero = i0.new_zeros(())
    hist = None
    if pseudo:
        cands = cascade_images(i0, config.K, net)
        kbar, _ = pseudo_labels_batch(cands, igt)
        parts["route"] = route_loss(decision.logits, kbar)
        selected = torch.stack([reps[int(k)][i] for i, k in enumerate(kbar)])
        parts["k_recon"] = k_recon_loss_batch(kbar, igt, net.decode(selected), w, extractor)
        hist = torch.bincount(kbar, minlength=config.K + 1).tolist()
    else:
        parts["route"] = zero
        parts["k_recon"] = zero
    parts["total"] = ada_mod_loss(parts["rep_dec"], parts["w_recon"], parts["route"], parts["k_recon"], w)
    return parts, decision, hist


def _row(phase, step, parts, hist, K):
    row = {"phase": phase, "step": step}
    row.update({k: float(torch.as_tensor(v).detach()) for k, v in parts.items()})
    for k in range(K + 1):
        row[f"kbar_{k}"] = (hist[k] if hist is not None else 0)
    return row


def _init_network(config: TrainConfig) -> Network:
    torch.manual_seed(config.seed)
    return Network(config.model)


def train_phase1(dataset, config: TrainConfig, init: Checkpoint | None = None, progress=None) -> Checkpoint:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    _set_deterministic(config)
    net = init.network() if init is not None else _init_network(config)
    net.train()
    extractor = get_extractor(config.extractor, config.extractor_layer, seed=config.seed)
    params = [p for n, p in net.named_parameters() if not n.startswith("router.")]
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    batches = _Batches(dataset, config.batch_size, config.seed)
    rows = []
    for step in range(config.phase1_steps):
        i0, igt = batches.next()
        parts = phase1_loss(net, i0, igt, config, extractor)
        _check_finite(parts, step, 1)
        opt.zero_grad(set_to_none=True)
        parts["total"].backward()
        opt.step()
        rows.append(_row(1, step, parts, None, config.K))
        if progress:
            progress(1, step, rows[-1])
    net.eval()
    return Checkpoint(config, _snapshot(net), step=config.phase1_steps, phase=1, log=rows)


def pseudo_active(step, total, fraction) -> bool:
    return (step + 1) / total > fraction


def train_phase2(dataset, config: TrainConfig, warm_start: Checkpoint, progress=None) -> Checkpoint:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    _set_deterministic(config)
    net = warm_start.network()
    net.train()
    torch.manual_seed(config.seed + 1)
    extractor = get_extractor(config.extractor, config.extractor_layer, seed=config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    batches = _Batches(dataset, config.batch_size, config.seed + 1)
    rows = []
    for step in range(config.phase2_steps):
        i0, igt = batches.next()
        active = pseudo_active(step, config.phase2_steps, config.pseudo_label_start_fraction)
        parts, _, hist = phase2_loss(net, i0, igt, config, extractor, pseudo=active)
        _check_finite(parts, step, 2)
        opt.zero_grad(set_to_none=True)
        parts["total"].backward()
        opt.step()
        rows.append(_row(2, step, parts, hist, config.K))
        if progress:
            progress(2, step, rows[-1])
    net.eval()
    return Checkpoint(
        config, _snapshot(net), step=warm_start.step + config.phase2_steps, phase=2,
        log=list(warm_start.log) + rows,
    )


def train(dataset, config: TrainConfig, progress=None) -> Checkpoint:
    """Phase 1 then (if it has a budget) phase 2."""
    ckpt = None
    if config.phase1_steps > 0:
        ckpt = train_phase1(dataset, config, progress=progress)
    if config.phase2_steps > 0:
        if ckpt is None:
            torch.manual_seed(config.seed)
            net = Network(config.model)
            ckpt = Checkpoint(config, _snapshot(net), 0, 0)
        ckpt = train_phase2(dataset, config, ckpt, progress=progress)
    return ckpt


# -- inference ------------------------------------------------------------------

def _as_network(model) -> Network:
    return model.network() if isinstance(model, Checkpoint) else model


@torch.no_grad()
def enhance(image, checkpoint, K=None):
    """Encode, unroll K states, route and decode. Returns (Image, RoutingDecision)."""
    net = _as_network(checkpoint)
    if K is None:
        K = checkpoint.config.K if isinstance(checkpoint, Checkpoint) else 2
    x = to_tensor(image)
    out, decision, _ = net(x, K)
    return Image(to_numpy(out)[0]), decision


@torch.no_grad()
def enhance_batch(images, checkpoint, K=None, batch_size=8):
    """Batched routed inference: returns dict with outputs, weights, logits, state decodes, pre-logits."""
    net = _as_network(checkpoint)
    if K is None:
        K = checkpoint.config.K if isinstance(checkpoint, Checkpoint) else 2
    x_all = to_tensor(images)
    outs, weights, logits, pre, states = [], [], [], [], []
    for i in range(0, x_all.shape[0], batch_size):
        x = x_all[i:i + batch_size]
        out, decision, traj = net(x, K)
        outs.append(to_numpy(out))
        weights.append(decision.weights.double().numpy())
        logits.append(decision.logits.double().numpy())
        pre.append(decision.pre_logit_vectors.double().numpy())
        states.append(np.stack([to_numpy(net.decode(r)) for r in traj.reps], axis=1))
    return {
        "output": np.concatenate(outs),
        "weights": np.concatenate(weights),
        "logits": np.concatenate(logits),
        "pre_logit": np.concatenate(pre),
        "states": np.concatenate(states),
    }


@torch.no_grad()
def basic_batch(images, checkpoint, depth=1, repeats=1, batch_size=8):
    """``D(SREU^depth(E(.)))`` applied ``repeats`` times in image space."""
    net = _as_network(checkpoint)
    x_all = to_tensor(images)
    outs = []
    for i in range(0, x_all.shape[0], batch_size):
        x = x_all[i:i + batch_size]
        for _ in range(repeats):
            x = net.basic(x, depth)
        outs.append(to_numpy(x))
    return np.concatenate(outs)


@torch.no_grad()
def style_pre_logits(images, checkpoint, batch_size=8):
    """Router pre-logit vectors of the style features of ``images`` (state 0 only)."""
    net = _as_network(checkpoint)
    x_all = to_tensor(images)
    out = []
    for i in range(0, x_all.shape[0], batch_size):
        _, s = net.encode(x_all[i:i + batch_size])
        out.append(net.router(s)[1].double().numpy())
    return np.concatenate(out)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    weights = kw.pop("weights", None)
    if weights:
        kw["weights"] = replace(config.weights, **weights)
    model = kw.pop("model", None)
    if model:
        kw["model"] = replace(config.model, **model)
    return replace(config, **kw)
