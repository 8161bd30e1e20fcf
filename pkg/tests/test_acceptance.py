"""Acceptance suite: one test per numbered criterion, each printing a
PASS/FAIL line (run with ``pytest -s tests/test_acceptance.py`` to see them
live).

Criteria 5-8 share three full desk-scale training runs plus a sweep; expect
roughly two hours of CPU time for the whole module.
"""

import time

import numpy as np
import pytest

from occuage import autodiff as ad
from occuage import losses as L
from occuage import networks as nets
from occuage.autodiff import Tensor
from occuage.config import Config
from occuage.data import denormalize_image, normalize_image
from occuage.evaluate import _outputs_per_condition, separation_matrix
from occuage.networks import generate
from occuage.spectra import TextureClassifier
from occuage.trainer import (
    build_pools,
    epoch_mean,
    init_state,
    load_checkpoint,
    single_thread_blas,
    train_loop,
)

from adcheck import primitive_cases, run_fd_case
from oracles import naive_conv2d, scalar_bilinear_upsample2x

ACCEPT_SEED = 7


def check(criterion, name, ok, detail=""):
    line = f"ACCEPTANCE {criterion} [{name}]: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print("\n" + line, flush=True)
    assert ok, line


def desk_config(**overrides) -> Config:
    cfg = Config()  # desk defaults: 64x64, 3 occupations, lambda/mu/nu = 10/1/0.1
    cfg.trainer.epochs = 30
    cfg.trainer.seed = ACCEPT_SEED
    cfg.trainer.checkpoint_every = 1800
    cfg.data.young_count = 120
    cfg.data.aged_per_occupation = 40
    cfg.data.eval_count = 30
    for key, value in overrides.items():
        section, field = key.split(".")
        setattr(getattr(cfg, section), field, value)
    return cfg.validate()


def run_training(tmp_factory, tag, **overrides):
    out_dir = tmp_factory.mktemp(tag)
    cfg = desk_config(**overrides)
    pools = build_pools(cfg)
    started = time.time()
    state = train_loop(cfg, pools=pools, out_dir=out_dir)
    return {
        "config": cfg,
        "pools": pools,
        "state": state,
        "out_dir": out_dir,
        "minutes": (time.time() - started) / 60,
    }


@pytest.fixture(scope="module")
def accept_run(tmp_path_factory):
    return run_training(tmp_path_factory, "accept")


@pytest.fixture(scope="module")
def ablation_run(tmp_path_factory):
    return run_training(tmp_path_factory, "ablation", **{"losses.triplet": 0.0})


def fidelity_per_condition(run):
    pools, state = run["pools"], run["state"]
    classifier = TextureClassifier().fit(pools.real)

    def gen_fn(img, p):
        return generate(state.models.generator, Tensor(img[None]), p).data[0]

    outputs = _outputs_per_condition(gen_fn, pools.eval_young, 3)
    return {p: classifier.accuracy(outputs[p], p) for p in outputs}, outputs


# ---------------------------------------------------------------------------
# Criterion 1: finite-difference gradient suite
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_suite():
    started = time.time()
    worst = 0.0
    for seed in range(20):
        for name, op, arrays in primitive_cases(seed):
            worst = max(worst, run_fd_case(f"{name}-{seed}", op, arrays, tol=1e-3))
    elapsed = time.time() - started
    check(
        1, "gradient-suite",
        worst < 1e-3 and elapsed < 60,
        f"max rel deviation {worst:.2e}, {elapsed:.1f}s over 20 seeds",
    )


# ---------------------------------------------------------------------------
# Criterion 2: kernel oracles
# ---------------------------------------------------------------------------


def test_criterion_2_kernel_oracles():
    rng_master = np.random.default_rng(1234)
    conv_worst = 0.0
    cases = 0
    while cases < 100:
        rng = np.random.default_rng(rng_master.integers(2**32))
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 5))
        cout = int(rng.integers(1, 4))
        h, w = int(rng.integers(4, 10)), int(rng.integers(4, 10))
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2]))
        mode = str(rng.choice(["zero", "reflect"]))
        pad = int(rng.integers(0, 2)) if k >= 2 else 0
        if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
            continue
        x = rng.standard_normal((n, cin, h, w)).astype(np.float32)
        wt = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        out = ad.conv2d(
            Tensor(x), Tensor(wt), Tensor(b), stride=stride,
            padding=ad.Padding(mode, (pad, pad), (pad, pad)),
        ).data
        ref = naive_conv2d(x, wt, b, stride, (pad, pad), (pad, pad), mode)
        conv_worst = max(conv_worst, float(np.abs(out - ref).max()))
        cases += 1

    up_worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 int(rng.integers(1, 8)), int(rng.integers(1, 8)))
        x = rng.standard_normal(shape).astype(np.float32)
        out = ad.bilinear_upsample2x(Tensor(x)).data
        up_worst = max(up_worst, float(np.abs(out - scalar_bilinear_upsample2x(x)).max()))

    raw = np.arange(256, dtype=np.uint8).reshape(16, 16)
    raw = np.stack([raw] * 3, axis=2)
    round_trip_exact = np.array_equal(denormalize_image(normalize_image(raw)), raw)

    check(
        2, "kernel-oracles",
        conv_worst < 1e-5 and up_worst < 1e-5 and round_trip_exact,
        f"conv {conv_worst:.2e}, upsample {up_worst:.2e}, bytes exact={round_trip_exact}",
    )


# ---------------------------------------------------------------------------
# Criterion 3: architecture contracts at full scale
# ---------------------------------------------------------------------------


def test_criterion_3_architecture_contracts():
    shape = nets.full_shape()
    gen = nets.init_translator(shape, conditioned=True, seed=0)
    with single_thread_blas():
        y = Tensor(np.zeros((1, 3, 256, 256), dtype=np.float32))
        bottleneck = nets.encode(gen, y)
    cube = nets.condition_cube(2, 5, 64, 64)
    ok = (
        bottleneck.shape == (1, 512, 64, 64)
        and cube.shape == (1, 5, 64, 64)
        and len(gen.residual) == 12
        and nets.receptive_field() == 70
    )
    check(
        3, "architecture-contracts", ok,
        f"bottleneck {bottleneck.shape}, cube {cube.shape}, "
        f"{len(gen.residual)} residual blocks, rf {nets.receptive_field()}",
    )


# ---------------------------------------------------------------------------
# Criterion 4: loss oracles
# ---------------------------------------------------------------------------


def test_criterion_4_loss_oracles(monkeypatch):
    size = 32
    shape = nets.NetworkShape(
        image_size=size, conditions=3, encoder_widths=(4, 8, 16),
        residual_width=8, upsample_widths=(8, 4), disc_widths=(4, 8, 8, 8),
    )
    models = nets.init_models(shape, seed=5)

    def const(value, n=1):
        return Tensor(np.full((n, 3, size, size), value, dtype=np.float32))

    def rand(seed):
        return Tensor(np.random.default_rng(seed).uniform(-0.9, 0.9, (1, 3, size, size)).astype(np.float32))

    failures = []

    def expect(label, actual, target, tol=1e-6):
        if abs(actual - target) > tol:
            failures.append(f"{label}: {actual!r} != {target!r}")

    # Personalized loss examples.
    batch5 = L.StepBatch(young=const(0.5), real={p: const(0.0) for p in range(1, 6)})
    monkeypatch.setattr(L, "generate", lambda g, y, p: const(0.0))
    monkeypatch.setattr(L, "reconstruct", lambda d, o: const(0.0))
    expect("perfect-cycle", L.personalized_loss(models.generator, models.decoder,
           L.StepBatch(young=const(0.0), real={1: const(0.1)})).item(), 0.0)
    expect("constant-cycle-2.5",
           L.personalized_loss(models.generator, models.decoder, batch5).item(), 2.5)

    # Adversarial examples with a constant-score discriminator stub.
    def disc_stub(value):
        return lambda d, img, p: Tensor(np.full((1, 1, 2, 2), value, dtype=np.float32))

    batch = L.StepBatch(young=rand(1), real={1: rand(2), 2: rand(3), 3: rand(4)})
    monkeypatch.setattr(L, "discriminate", disc_stub(0.5))
    expect("adv-d-half-0.75",
           L.adversarial_d_loss(models.discriminator, models.generator, batch, 1, 2).item(), 0.75)
    expect("adv-g-half-0.25",
           L.adversarial_g_loss(models.discriminator, models.generator, batch, 1).item(), 0.25)
    monkeypatch.setattr(L, "discriminate", disc_stub(1.0))
    expect("adv-g-one-0",
           L.adversarial_g_loss(models.discriminator, models.generator, batch, 1).item(), 0.0)
    monkeypatch.setattr(L, "discriminate", disc_stub(0.0))
    expect("adv-g-zero-1",
           L.adversarial_g_loss(models.discriminator, models.generator, batch, 1).item(), 1.0)

    real_correct = batch.real[1]
    monkeypatch.setattr(
        L, "discriminate",
        lambda d, img, p: Tensor(np.full((1, 1, 2, 2), 1.0 if img is real_correct else 0.0, np.float32)),
    )
    expect("adv-d-targets-met",
           L.adversarial_d_loss(models.discriminator, models.generator, batch, 1, 2).item(), 0.0)

    # Triplet examples.
    eps = 0.05
    monkeypatch.setattr(L, "generate", lambda g, y, p: const(0.3))
    t_batch = L.StepBatch(young=rand(5), real={1: const(0.2), 2: const(0.8)})
    expect("triplet-direct",
           L.triplet_rank_loss(models.generator, t_batch, 1, 2, eps).item(),
           max(0.0, eps + 0.1 - 0.5))
    sat = L.StepBatch(young=rand(6), real={1: const(0.3), 2: const(0.3 + 2 * eps)})
    expect("triplet-satisfied", L.triplet_rank_loss(models.generator, sat, 1, 2, eps).item(), 0.0)
    sym = L.StepBatch(young=rand(7), real={1: const(0.1), 2: const(0.5)})
    expect("triplet-symmetric", L.triplet_rank_loss(models.generator, sym, 1, 2, 0.2).item(), 0.2)

    monkeypatch.undo()

    # Composition identities on real networks.
    wrong = {1: 2, 2: 3, 3: 1}
    weights = L.LossWeights()
    combined = L.full_objective(models.generator, models.decoder, models.discriminator,
                                batch, weights, wrong)
    per = L.personalized_loss(models.generator, models.decoder, batch)
    adv = trl = None
    for p in batch.occupations:
        a = L.adversarial_g_loss(models.discriminator, models.generator, batch, p)
        adv = a if adv is None else ad.add(adv, a)
        t = L.triplet_rank_loss(models.generator, batch, p, wrong[p], weights.margin)
        trl = t if trl is None else ad.add(trl, t)
    recombined = ad.add(
        ad.add(ad.mul(per, weights.personalized), ad.mul(adv, weights.adversarial)),
        ad.mul(trl, weights.triplet),
    )
    expect("decomposition", combined.g_f_loss.item(), recombined.item())

    pure_adv = L.full_objective(
        models.generator, models.decoder, models.discriminator, batch,
        L.LossWeights(personalized=0.0, adversarial=1.0, triplet=0.0), wrong,
    )
    expect("weights-010", pure_adv.g_f_loss.item(), adv.item())

    lo = L.full_objective(models.generator, models.decoder, models.discriminator, batch,
                          L.LossWeights(personalized=0.5, adversarial=0.25, triplet=0.125), wrong)
    hi = L.full_objective(models.generator, models.decoder, models.discriminator, batch,
                          L.LossWeights(personalized=1.0, adversarial=0.25, triplet=0.125), wrong)
    expect("lambda-linearity", hi.g_f_loss.item() - lo.g_f_loss.item(), 0.5 * per.item())

    # Phase isolation: exactly zero cross-gradients.
    for params in (models.generator, models.decoder, models.discriminator):
        for _, tensor in params.named_tensors():
            tensor.grad = None
    d_loss, _ = L.discriminator_objective(models.discriminator, models.generator, batch, wrong)
    d_leaves = ad.backward(d_loss)
    gen_dec_ids = {id(t) for prm in (models.generator, models.decoder) for _, t in prm.named_tensors()}
    if any(id(t) in gen_dec_ids for t in d_leaves):
        failures.append("d-phase gradient leaked into generator/decoder")
    g_loss, _ = L.generator_objective(models.generator, models.decoder, models.discriminator,
                                      batch, weights, wrong)
    g_leaves = ad.backward(g_loss)
    disc_ids = {id(t) for _, t in models.discriminator.named_tensors()}
    if any(id(t) in disc_ids for t in g_leaves):
        failures.append("g-phase gradient leaked into discriminator")

    check(4, "loss-oracles", not failures, "; ".join(failures) or "all identities hold")


# ---------------------------------------------------------------------------
# Criterion 5: synthetic end-to-end run
# ---------------------------------------------------------------------------


def test_criterion_5_synthetic_end_to_end(accept_run):
    hist = accept_run["state"].history_array()
    final = accept_run["config"].trainer.epochs - 1
    per_first, per_last = epoch_mean(hist, "personalized", 0), epoch_mean(hist, "personalized", final)
    trl_first, trl_last = epoch_mean(hist, "triplet", 0), epoch_mean(hist, "triplet", final)
    gate_a = per_last < 0.5 * per_first
    gate_b = trl_last < 0.1 * trl_first

    accs, outputs = fidelity_per_condition(accept_run)
    gate_c = all(a >= 0.8 for a in accs.values())

    sep = separation_matrix(outputs)
    untrained = init_state(accept_run["config"])

    def gen0(img, p):
        return generate(untrained.models.generator, Tensor(img[None]), p).data[0]

    sep0 = separation_matrix(
        _outputs_per_condition(gen0, accept_run["pools"].eval_young, 3)
    )
    off = ~np.eye(3, dtype=bool)
    base = float(sep0[off].mean())
    trained = float(sep[off].mean())
    # Fresh models are condition-neutral, so the untrained separation can be
    # exactly zero; any positive trained separation then clears the factor.
    ratio = trained / base if base > 0 else float("inf")
    gate_d = ratio >= 3.0

    runtime_ok = accept_run["minutes"] <= 30.0

    check(
        5, "synthetic-end-to-end",
        gate_a and gate_b and gate_c and gate_d and runtime_ok,
        f"L_PER {per_first:.4f}->{per_last:.4f} (a={gate_a}), "
        f"L_TRL {trl_first:.4f}->{trl_last:.4f} (b={gate_b}), "
        f"fidelity {sorted(accs.values())} (c={gate_c}), "
        f"separation x{ratio:.1f} (d={gate_d}), {accept_run['minutes']:.1f} min",
    )


# ---------------------------------------------------------------------------
# Criterion 6: triplet-loss ablation
# ---------------------------------------------------------------------------


def test_criterion_6_triplet_ablation(ablation_run):
    hist = ablation_run["state"].history_array()
    final = ablation_run["config"].trainer.epochs - 1
    per_first, per_last = epoch_mean(hist, "personalized", 0), epoch_mean(hist, "personalized", final)
    gate_a = per_last < 0.5 * per_first

    accs, _ = fidelity_per_condition(ablation_run)
    gate_c_fails = any(a < 0.8 for a in accs.values())

    check(
        6, "triplet-ablation",
        gate_a and gate_c_fails,
        f"L_PER {per_first:.4f}->{per_last:.4f} (a={gate_a}), "
        f"fidelity without triplet {sorted(accs.values())} (c fails={gate_c_fails})",
    )


# ---------------------------------------------------------------------------
# Criterion 7: cycle-weight sweep
# ---------------------------------------------------------------------------


def test_criterion_7_cycle_weight_sweep(accept_run, tmp_path_factory):
    final = desk_config().trainer.epochs - 1
    aging_by_weight = {}
    for lam in (5.0, 50.0, 100.0):
        run = run_training(tmp_path_factory, f"sweep{int(lam)}", **{"losses.personalized": lam})
        aging_by_weight[lam] = epoch_mean(run["state"].history_array(), "aging_l1", final)
    aging_by_weight[10.0] = epoch_mean(accept_run["state"].history_array(), "aging_l1", final)
    ordered = [aging_by_weight[lam] for lam in (5.0, 10.0, 50.0, 100.0)]
    monotone = all(a >= b for a, b in zip(ordered, ordered[1:]))
    check(
        7, "cycle-weight-sweep", monotone,
        "final-epoch mean |aged - input| per weight 5/10/50/100: "
        + ", ".join(f"{v:.4f}" for v in ordered),
    )


# ---------------------------------------------------------------------------
# Criterion 8: reproducibility
# ---------------------------------------------------------------------------


def test_criterion_8_reproducibility(accept_run, tmp_path_factory):
    repeat = run_training(tmp_path_factory, "repeat")
    logs_equal = (
        (accept_run["out_dir"] / "metrics.ndjson").read_bytes()
        == (repeat["out_dir"] / "metrics.ndjson").read_bytes()
    )

    mid = accept_run["out_dir"] / "step_001800.ckpt"
    resumed_state = load_checkpoint(mid)
    resumed = train_loop(
        desk_config(),
        pools=accept_run["pools"],
        out_dir=tmp_path_factory.mktemp("resumed"),
        state=resumed_state,
    )
    params_equal = all(
        np.array_equal(ta.data, tb.data)
        for (_, ta), (_, tb) in zip(
            accept_run["state"].models.named_tensors(), resumed.models.named_tensors()
        )
    )
    history_equal = np.array_equal(
        accept_run["state"].history_array(), resumed.history_array()
    )

    check(
        8, "reproducibility",
        logs_equal and params_equal and history_equal,
        f"logs identical={logs_equal}, resume params bit-exact={params_equal}, "
        f"history bit-exact={history_equal}",
    )
