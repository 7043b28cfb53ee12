import math

import numpy as np
import pytest

from houghtrack.config import toy_config
from houghtrack.errors import NumericalError
from houghtrack.network import Network
from houghtrack.synthetic import generate, generate_set
from houghtrack.tensor import params_to_bytes
from houghtrack.training import (
    SGD,
    FixedPairSampler,
    SequenceSampler,
    decode_pair_boxes,
    evaluate,
    lr_at,
    make_pair,
    sample_pairs,
    train,
)


@pytest.fixture(scope="module")
def net():
    return Network(toy_config(batch=2))


@pytest.fixture(scope="module")
def seqs():
    return generate_set(0, 3, n_frames=8, size=128)


def test_lr_schedule_endpoints():
    cfg = toy_config(lr_peak=8e-3)
    total = 800
    assert lr_at(0, total, cfg) == 1e-6
    assert lr_at(100, total, cfg) == pytest.approx(8e-3)
    assert lr_at(total - 1, total, cfg) == pytest.approx(0.0, abs=1e-15)
    lrs = [lr_at(s, total, cfg) for s in range(total)]
    assert np.all(np.diff(lrs[:100]) > 0) and np.all(np.diff(lrs[100:]) <= 0)


def test_weight_decay_alone_shrinks_norm(net):
    params = net.init_params(0)
    opt = SGD(params, momentum=0.9, weight_decay=1e-2)
    zero = {name: np.zeros_like(t.data) for name, t in params}
    norms = [params.norm()]
    for _ in range(5):
        opt.step(0.1, zero)
        norms.append(params.norm())
    assert np.all(np.diff(norms) < 0)


def test_momentum_update_rule(net):
    params = net.init_params(0)
    name = params.names()[0]
    before = params[name].data.copy()
    g = {n: np.ones_like(t.data) for n, t in params}
    opt = SGD(params, momentum=0.5, weight_decay=0.0)
    opt.step(0.1, g)
    opt.step(0.1, g)
    # v1 = 1, v2 = 0.5 * 1 + 1 = 1.5 -> total step 0.25
    np.testing.assert_allclose(params[name].data, before - 0.25, atol=1e-6)


def test_pairs_use_inference_geometry(net, seqs):
    cfg = net.cfg
    rng = np.random.default_rng(0)
    pair = make_pair(seqs[0], 0, 3, cfg, rng, jitter=False)
    assert pair.template.shape == (48, 48, 3) and pair.search.shape == (96, 96, 3)
    x0, y0, x1, y1 = pair.box
    # unjittered: target centred in the search crop, template-sized
    assert (x0 + x1) / 2 == pytest.approx(47.5) and (y0 + y1) / 2 == pytest.approx(47.5)


def test_pairs_respect_interval(net, seqs):
    cfg = net.cfg.replace(pair_interval=2)
    pairs = sample_pairs(seqs, 6, cfg, net, seed=1)
    for p in pairs:
        assert p.target.shape == (net.map_size, net.map_size, 2)
        assert np.sum(p.target == 1) == 2


def test_training_is_reproducible(net, seqs):
    runs = []
    for _ in range(2):
        params, losses = train(net, SequenceSampler(seqs, net.cfg, net, 4), steps=3)
        runs.append((params_to_bytes(params), losses))
    assert runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1]
    assert all(math.isfinite(v) for v in runs[0][1])


def test_nonfinite_loss_names_step(net, seqs):
    params = net.init_params(0)
    params["head.bias"].data[:] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        train(net, SequenceSampler(seqs, net.cfg, net, 0), params=params, steps=2)


def test_single_pair_overfits():
    cfg = toy_config(batch=1, lr_peak=3e-3)
    net = Network(cfg)
    pairs = sample_pairs([generate(11, 5, 128)], 1, cfg, net, seed=2)
    _, losses = train(net, FixedPairSampler(pairs, 1), steps=500)
    assert all(math.isfinite(v) for v in losses)
    assert losses[-1] < 0.1 * losses[0]
    assert np.mean(losses[-50:]) < np.mean(losses[:50])


def test_evaluate_shapes(net, seqs):
    params = net.init_params(0)
    report, per_seq, boxes = evaluate(net, params, seqs)
    assert len(report.ious) == sum(len(s) - 1 for s in seqs)
    assert len(per_seq) == 3 and len(boxes[0]) == len(seqs[0])
    assert 0 <= report.ao <= 1 and report.sr75 <= report.sr50


def test_evaluate_needs_sequences(net):
    with pytest.raises(ValueError):
        evaluate(net, net.init_params(0), [])


def test_decode_pair_boxes_count(net, seqs):
    pairs = sample_pairs(seqs, 3, net.cfg, net, seed=0)
    boxes = decode_pair_boxes(net, net.init_params(0), pairs)
    assert len(boxes) == 3 and all(b[2] >= b[0] for b in boxes)
