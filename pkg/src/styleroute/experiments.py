"""Ablation arms, per-state analysis and routing-vector projections."""

from __future__ import annotations

import json
import logging
from dataclasses import replace

import numpy as np

from .metrics import METRIC_COLUMNS, evaluate_images, psnr
from .router import project_routing_vectors
from .synth import tier_of
from .trainer import (
    Checkpoint, TrainConfig, basic_batch, enhance_batch, style_pre_logits, train_phase1, train_phase2,
)

log = logging.getLogger(__name__)


class UnknownArm(ValueError):
    pass


def valid_arms(max_k=4, K=2):
    return (
        ["full", "w/o-decouple", "w/o-route", "w/o-both"]
        + [f"K{k}" for k in range(1, max_k + 1)]
        + ["internal-cascade", "external-cascade"]
        + [f"state{k}" for k in range(K + 1)]
    )


def check_arms(arms, K=2, max_k=4):
    ok = valid_arms(max_k, K)
    bad = [a for a in arms if a not in ok]
    if bad:
        raise UnknownArm(f"unknown arm(s) {', '.join(bad)}; valid arms: {', '.join(ok)}")


_PHASE2_ONLY = ("phase2_steps", "pseudo_label_start_fraction", "K")
_PHASE2_WEIGHTS = ("lambda_rep_dec", "lambda_w_recon", "lambda_route", "lambda_k_recon")


def _phase1_key(cfg: TrainConfig) -> str:
    d = cfg.to_dict()
    for k in _PHASE2_ONLY:
        d.pop(k)
    for k in _PHASE2_WEIGHTS:
        d["weights"].pop(k)
    return json.dumps(d, sort_keys=True)


class Trainer:
    """Trains configurations on demand, sharing identical phase-1 runs."""

    def __init__(self, train_ds, progress=None):
        self.train_ds = train_ds
        self.progress = progress
        self._p1 = {}
        self._full = {}

    def get(self, cfg: TrainConfig) -> Checkpoint:
        key = json.dumps(cfg.to_dict(), sort_keys=True)
        if key in self._full:
            return self._full[key]
        p1key = _phase1_key(cfg)
        if p1key not in self._p1:
            log.info("training phase 1 (%d steps)", cfg.phase1_steps)
            self._p1[p1key] = train_phase1(self.train_ds, replace(cfg, phase2_steps=0), progress=self.progress)
        ckpt = self._p1[p1key]
        if cfg.phase2_steps > 0:
            log.info("training phase 2 (%d steps, K=%d)", cfg.phase2_steps, cfg.K)
            ckpt = train_phase2(self.train_ds, cfg, ckpt, progress=self.progress)
        else:
            ckpt = Checkpoint(cfg, ckpt.params, ckpt.step, ckpt.phase, log=ckpt.log)
        self._full[key] = ckpt
        return ckpt


def _scores(outputs, test_ds, weights=None):
    rep = evaluate_images(list(outputs), list(test_ds.targets()), test_ds.names, weights)
    return rep.means()


def run_ablation(train_ds, test_ds, base: TrainConfig, arms=None, progress=None, trainer=None):
    """Train/evaluate each arm; returns {"rows": per-arm dicts, "table2", "table3", "table6"}."""
    arms = list(arms) if arms is not None else valid_arms(4, base.K)
    check_arms(arms, base.K)
    trainer = trainer or Trainer(train_ds, progress)
    x = test_ds.inputs()
    rows = {}

    def routed(cfg):
        ck = trainer.get(cfg)
        r = enhance_batch(x, ck)
        m = _scores(r["output"], test_ds)
        m["weights"] = r["weights"].mean(axis=0).tolist()
        return m, r

    no_route = replace(base, phase2_steps=0)
    no_style = replace(base.weights, lambda_style=0.0)
    for arm in arms:
        if arm == "full" or arm.startswith("state"):
            m, r = routed(base)
            if arm == "full":
                rows[arm] = m
            else:
                k = int(arm[5:])
                rows[arm] = _scores(r["states"][:, k], test_ds)
        elif arm == "w/o-decouple":
            rows[arm] = routed(replace(base, weights=no_style))[0]
        elif arm in ("w/o-route", "w/o-both", "external-cascade"):
            cfg = no_route if arm != "w/o-both" else replace(no_route, weights=no_style)
            reps = 2 if arm == "external-cascade" else 1
            rows[arm] = _scores(basic_batch(x, trainer.get(cfg), repeats=reps), test_ds)
        elif arm == "internal-cascade":
            ck = trainer.get(replace(no_route, internal_depth=2))
            rows[arm] = _scores(basic_batch(x, ck, depth=2), test_ds)
        elif arm.startswith("K"):
            rows[arm] = routed(replace(base, K=int(arm[1:])))[0]
    return {"rows": rows, **ablation_tables(rows, base.K)}


def _metric_cells(m):
    return {c: m[c] for c in METRIC_COLUMNS}


def ablation_tables(rows, K=2, max_w=4):
    table2 = []
    grid = (("w/o-both", True, True), ("w/o-decouple", True, False), ("w/o-route", False, True), ("full", False, False))
    for arm, wo_dec, wo_route in grid:
        if arm in rows:
            table2.append({"arm": arm, "wo_decouple": int(wo_dec), "wo_ada_route": int(wo_route),
                           **_metric_cells(rows[arm])})
    table3 = []
    ks = sorted(int(a[1:]) for a in rows if a.startswith("K"))
    width = max([max_w] + ks)
    for k in ks:
        m = rows[f"K{k}"]
        row = {"K": k, **_metric_cells(m)}
        for j in range(width + 1):
            row[f"w_{j}"] = m["weights"][j] if j <= k else ""
        table3.append(row)
    table6 = []
    for k in range(K + 1):
        if f"state{k}" in rows:
            table6.append({"strategy": f"State {k}", **_metric_cells(rows[f"state{k}"])})
    for arm, label in (("external-cascade", "External cascade"), ("internal-cascade", "Internal cascade"),
                       ("full", "Weighted")):
        if arm in rows:
            table6.append({"strategy": label, **_metric_cells(rows[arm])})
    return {"table2": table2, "table3": table3, "table6": table6}


# -- adaptivity and routing-vector analysis --------------------------------------

def tier_summary(names, weights, outputs=None, targets=None, states=None):
    """Per-tier mean routing weights and PSNRs."""
    tiers = np.array([tier_of(n) for n in names])
    out = {}
    for t in sorted(set(tiers)):
        m = tiers == t
        d = {"n": int(m.sum()), "mean_weights": np.asarray(weights)[m].mean(axis=0).tolist()}
        if outputs is not None:
            d["psnr"] = float(np.mean([psnr(o, g) for o, g in zip(np.asarray(outputs)[m], np.asarray(targets)[m])]))
        if states is not None:
            st = np.asarray(states)[m]
            tg = np.asarray(targets)[m]
            d["state_psnr"] = [float(np.mean([psnr(s[k], g) for s, g in zip(st, tg)])) for k in range(st.shape[1])]
        out[t] = d
    return out


def routing_projections(checkpoint, dataset, K=None):
    """For each image, PCA-project the pre-logit vectors of S_0..S_K and S_gt to 2-D.

    Returns (coords N x (K+2) x 2, gt_distance N x (K+1)).
    """
    r = enhance_batch(dataset.inputs(), checkpoint, K=K)
    gt_vec = style_pre_logits(dataset.targets(), checkpoint)
    coords, dists = [], []
    for vecs, g in zip(r["pre_logit"], gt_vec):
        pts = project_routing_vectors(np.vstack([vecs, g[None]]))
        coords.append(pts)
        dists.append(np.linalg.norm(pts[:-1] - pts[-1], axis=1))
    return np.asarray(coords), np.asarray(dists)


def approaching_fraction(dists, names, tier="severe"):
    """Fraction of ``tier`` images whose distance to the gt point is non-increasing in k."""
    sel = [d for d, n in zip(dists, names) if tier_of(n) == tier]
    if not sel:
        return float("nan")
    return float(np.mean([np.all(np.diff(d) <= 1e-12) for d in sel]))
