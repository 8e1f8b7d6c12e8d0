"""Acceptance gate. Each test prints one PASS/FAIL line (collected in the
terminal summary) and asserts the criterion at its stated tolerance."""
import time

import numpy as np
import pytest

from oracles import cost_volume_loops, search_lookup_loops
from searchmorph import functional as F
from searchmorph.config import PRESETS, RegistrationConfig, preset
from searchmorph.correlation import build_pyramid, compute_cost_volume, search_channels, search_lookup
from searchmorph.data import synth_generate
from searchmorph.gradcheck import check_gradients
from searchmorph.losses import LossConfig, lncc_loss, mse_loss, smoothness_loss, total_loss, warp
from searchmorph.metrics import dice, folding_ratio
from searchmorph.model import SearchMorph
from searchmorph.nn import ConvGRU, FlowHead, flow_head, gru_cell
from searchmorph.pipeline import Checkpoint, evaluate, register, train
from searchmorph.tensor import Tensor, precision

RESULTS = []


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def _param(shape, rng, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _grad_cases(rng):
    """(name, fn, inputs, extra wrt) for five random shapes of every op."""
    cases = []
    for i in range(5):
        n, c, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(4, 8)), \
            int(rng.integers(4, 8))
        k = int(rng.integers(1, 4))
        stride = 1 + i % 2
        x = _param((n, c, h, w), rng)
        wt = _param((k, c, 3, 3), rng)
        b = _param((k,), rng)
        cases.append(("conv2d", lambda a, ww, bb, s=stride: F.conv2d(a, ww, bb, s, 1) ** 2,
                      [x, wt, b]))
        pk = 2 ** (i % 3 + 1)
        cases.append(("avg_pool2d", lambda a, pk=pk: F.avg_pool2d(a, pk) ** 2,
                      [_param((n, c, h + i, w), rng)]))
        img = _param((n, c, h, w), rng)
        coords = Tensor(rng.uniform(-1.3, max(h, w) + 0.3, size=(n, 2, h - 1, w + 1)),
                        requires_grad=True)
        cases.append(("grid_sample", lambda a, cc: F.grid_sample(a, cc) ** 2, [img, coords]))
        gru = ConvGRU(c + 1, k + 1, rng=rng)
        gx = _param((n, c + 1, h, w), rng)
        gh = _param((n, k + 1, h, w), rng, 0.5)
        cases.append(("gru_cell", lambda a, hh, g=gru: gru_cell(a, hh, g) ** 2, [gx, gh]))
        head = FlowHead(k + 1, 3, rng=rng, zero_init=False)
        cases.append(("flow_head", lambda hh, hd=head: flow_head(hh, hd) ** 2,
                      [_param((n, k + 1, h, w), rng)]))
        r = 1 + i % 3
        hm = _param((c, h, w), rng)
        hf = _param((c, h, w), rng)
        fl = Tensor(rng.uniform(-2, 2, size=(2, h, w)), requires_grad=True)
        cases.append(("search_lookup",
                      lambda a, bb, ff, r=r: search_lookup(build_pyramid(compute_cost_volume(a, bb)),
                                                           ff, r) ** 2,
                      [hm, hf, fl]))
        wimg = _param((c, h, w), rng)
        wfl = Tensor(rng.uniform(-2, 2, size=(2, h, w)), requires_grad=True)
        cases.append(("warp", lambda a, ff: warp(a, ff) ** 2, [wimg, wfl]))
        la, lb = _param((1, h, w), rng), _param((1, h, w), rng)
        cases.append(("mse_loss", mse_loss, [la, lb]))
        sa = Tensor(rng.normal(size=(1, h + 2, w + 2)) + np.arange(w + 2), requires_grad=True)
        sb = Tensor(rng.normal(size=(1, h + 2, w + 2)), requires_grad=True)
        cases.append(("lncc_loss", lambda a, bb: lncc_loss(a, bb, 3), [sa, sb]))
        cases.append(("smoothness_loss", smoothness_loss, [_param((2, h, w), rng)]))
        tm, tf = _param((1, 1, h, w), rng), _param((1, 1, h, w), rng)
        tfl = Tensor(rng.uniform(-2, 2, size=(1, 2, h, w)), requires_grad=True)
        sim = "mse" if i % 2 == 0 else "lncc"
        cfg = LossConfig(sim, lncc_window=3)
        cases.append(("total_loss", lambda a, bb, ff, cfg=cfg: total_loss(a, bb, ff, cfg),
                      [tm, tf, tfl]))
    return cases


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    worst = {}
    with precision(np.float64):
        rng = np.random.default_rng(2024)
        for name, fn, inputs in _grad_cases(rng):
            err = check_gradients(fn, inputs, eps=1e-6)
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-3 and elapsed < 60
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report(1, ok, f"max rel err {max(worst.values()):.2e} ({elapsed:.1f}s) {detail}")
    assert ok


def test_criterion_2_cost_volume_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        h, w, d = (int(v) for v in rng.integers(1, [7, 7, 5]))
        hM = rng.normal(size=(d, h, w))
        hF = rng.normal(size=(d, h, w))
        got = compute_cost_volume(Tensor(hM), Tensor(hF)).values.data
        worst = max(worst, float(np.abs(got - cost_volume_loops(hM, hF)).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 30
    report(2, ok, f"max abs err {worst:.2e} over 50 seeds ({elapsed:.1f}s)")
    assert ok


def test_criterion_3_search_lookup_oracle():
    worst = 0.0
    rng = np.random.default_rng(7)
    for r in (1, 2, 3):
        for h, w in ((3, 4), (8, 8), (12, 12), (7, 11)):
            hM = Tensor(rng.normal(size=(3, h, w)))
            hF = Tensor(rng.normal(size=(3, h, w)))
            pyr = build_pyramid(compute_cost_volume(hM, hF))
            flow = rng.uniform(-3, 3, size=(2, h, w))
            got = search_lookup(pyr, Tensor(flow), r).data
            ref = search_lookup_loops([lvl.data.astype(np.float64) for lvl in pyr.levels], flow, r)
            worst = max(worst, float(np.abs(got - ref).max()))
    ok = worst <= 1e-5
    report(3, ok, f"max abs err {worst:.2e} for r in 1..3, sizes up to 12x12")
    assert ok


def test_criterion_4_structural_constants():
    cfg = RegistrationConfig()
    checks = {
        "channels": all(search_channels(r) == 4 * (2 * r * r + 2 * r + 1) for r in range(1, 6)),
        "num_iters": cfg.num_iters == 4,
        "radius_mr": preset("mr").radius == 3 and PRESETS["mr"]["radius"] == 3,
        "radius_echo": preset("echo").radius == 2,
        "alpha_mse": RegistrationConfig(similarity="mse").alpha == 0.01,
        "alpha_lncc": RegistrationConfig(similarity="lncc").alpha == 2.0,
        "lr": cfg.learning_rate == 1e-3,
        "batch": cfg.batch_size == 8,
        "epochs": cfg.epochs == 1500,
    }
    ok = all(checks.values())
    report(4, ok, " ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert ok


def test_criterion_5_identity_invariants():
    rng = np.random.default_rng(5)
    img = Tensor(rng.random((1, 12, 16)))
    warp_ok = np.array_equal(warp(img, Tensor(np.zeros((2, 12, 16)))).data, img.data)
    model = SearchMorph(preset("desk", image_height=16, image_width=16))
    for p in model.parameters():
        p.data[...] = 0
    field, _ = model(Tensor(rng.random((2, 1, 16, 16))), Tensor(rng.random((2, 1, 16, 16))))
    zero_ok = not np.any(field.flow.data)
    fold_ok = folding_ratio(np.zeros((2, 16, 16))) == 0.0
    mask = rng.integers(0, 4, size=(16, 16))
    dice_ok = all(dice(mask, mask, lab) == 1.0 for lab in range(1, 4))
    ok = warp_ok and zero_ok and fold_ok and dice_ok
    report(5, ok, f"warp={warp_ok} zero_net={zero_ok} fold={fold_ok} dice={dice_ok}")
    assert ok


def test_criterion_6_folding_closed_form():
    f = np.zeros((2, 10, 12))
    f[0] = -2.0 * np.arange(12)[None, :]
    ratio = folding_ratio(f)
    ok = ratio == 1.0
    report(6, ok, f"folding ratio {ratio}")
    assert ok


# -- desk-scale training (criteria 7, 8) ----------------------------------------------

DESK = dict(train=200, test=50, size=(64, 64), max_disp=12.0, seed=42)


@pytest.fixture(scope="module")
def desk_corpus():
    train_set = synth_generate(DESK["train"], DESK["size"], DESK["max_disp"], seed=DESK["seed"])
    test_set = synth_generate(DESK["test"], DESK["size"], DESK["max_disp"], seed=DESK["seed"] + 1)
    return train_set, test_set


_RUNS = {}


def desk_run(corpus, num_iters):
    if num_iters not in _RUNS:
        train_set, test_set = corpus
        cfg = preset("desk", num_iters=num_iters, seed=DESK["seed"])
        start = time.perf_counter()
        ckpt = train(cfg, train_set)
        rep = evaluate(ckpt, test_set)
        _RUNS[num_iters] = (ckpt, rep, time.perf_counter() - start)
    return _RUNS[num_iters]


@pytest.mark.slow
def test_criterion_7_desk_convergence(desk_corpus):
    ckpt, rep, seconds = desk_run(desk_corpus, 4)
    agg = rep.aggregate
    initial, final = ckpt.history[0], ckpt.history[-1]
    epe, ident = agg["epe"][0], agg["epe_identity"][0]
    gain = agg["dice"][0] - agg["dice_before"][0]
    fold = agg["folding"][0]
    checks = {
        "loss": final <= 0.5 * initial,
        "epe": epe <= 0.7 * ident,
        "dice": gain >= 0.05,
        "fold": fold <= 0.01,
        "time": seconds <= 15 * 60,
    }
    ok = all(checks.values())
    report(7, ok, f"loss {initial:.5f}->{final:.5f} epe {epe:.3f}/{ident:.3f} "
                  f"dice +{gain:.3f} fold {fold:.4f} time {seconds / 60:.1f}min "
                  + " ".join(k for k, v in checks.items() if not v))
    assert ok


@pytest.mark.slow
def test_criterion_8_iteration_ablation(desk_corpus):
    _, rep4, _ = desk_run(desk_corpus, 4)
    _, rep1, _ = desk_run(desk_corpus, 1)
    epe4, epe1 = rep4.aggregate["epe"][0], rep1.aggregate["epe"][0]
    direction = epe4 <= epe1
    ok = epe4 <= 1.1 * epe1
    report(8, ok, f"epe 4 iters {epe4:.3f} vs 1 iter {epe1:.3f} "
                  f"({'4 iters better' if direction else '4 iters worse, within 10%' if ok else ''})")
    assert ok


def test_criterion_9_determinism_and_persistence(tmp_path):
    corpus = synth_generate(12, (16, 16), 2.0, seed=3)
    cfg = preset("desk", image_height=16, image_width=16, epochs=2, batch_size=4, seed=9)
    a = train(cfg, corpus)
    b = train(cfg, corpus)
    curves = a.history == b.history and all(
        np.array_equal(a.params[k], b.params[k]) for k in a.params)
    path = tmp_path / "model.smck"
    a.save(path)
    loaded = Checkpoint.load(path)
    pair = corpus[0]
    w1, f1, _ = register(a, pair.moving, pair.fixed)
    w2, f2, _ = register(loaded, pair.moving, pair.fixed)
    roundtrip = np.array_equal(f1, f2) and np.array_equal(w1, w2)
    ok = curves and roundtrip
    report(9, ok, f"identical loss curves={curves} checkpoint round-trip bitwise={roundtrip}")
    assert ok
