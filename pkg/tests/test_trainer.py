"""Training-loop tests: adapter algebra, chain rule, DP reductions, budgets."""

import math

import numpy as np
import pytest

from wishart_dp import mechanisms
from wishart_dp.accountants import compose_gaussian_steps, delta_M_bound
from wishart_dp.errors import ConfigError, DomainError
from wishart_dp.randmat import Seed
from wishart_dp.trainer import (
    FULL_BATCH,
    DpTrainConfig,
    Mechanism,
    TaskKind,
    clip_compare,
    dp_lora_fa,
    fit,
    init_lora,
    load_config,
    lora_fa_step,
    make_logistic_task,
    make_ridge_task,
    noise_free_lora,
    noisy_proj_budget,
    noisy_proj_step,
    rp_gd,
)

from conftest import MASTER


@pytest.fixture()
def ridge_task():
    return make_ridge_task(100, 16, Seed(MASTER, 400), reg=1e-3)


def test_lora_step_zero_gradient(ridge_task):
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 401))
    st2 = lora_fa_step(st, np.zeros((1, 16)), 0.5)
    assert np.array_equal(st2.LoraB, st.LoraB)
    assert st2.step == st.step + 1


def test_lora_step_weight_identity(ridge_task):
    # One step from B = 0 moves effective weights by -eta grad (A^T A).
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 402))
    g = ridge_task.grad_W(st.effective_weights())
    st2 = lora_fa_step(st, g, 0.2)
    lhs = st2.effective_weights() - st.effective_weights()
    rhs = -0.2 * g @ (st.LoraA.T @ st.LoraA)
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_lora_step_shape_mismatch(ridge_task):
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 403))
    with pytest.raises(DomainError):
        lora_fa_step(st, np.zeros((2, 16)), 0.1)


def test_chain_rule_against_finite_differences(ridge_task):
    # grad_B from the chain rule matches central differences of L(W0 + B A).
    st = init_lora(np.zeros((1, 16)), 4, Seed(MASTER, 404))
    W_eff = st.effective_weights()
    grad_B = ridge_task.grad_W(W_eff) @ st.LoraA.T
    h = 1e-6
    for i in range(st.LoraB.shape[0]):
        for j in range(st.LoraB.shape[1]):
            Bp = st.LoraB.copy()
            Bp[i, j] += h
            Bm = st.LoraB.copy()
            Bm[i, j] -= h
            lp = ridge_task.loss(st.W0 + Bp @ st.LoraA)
            lm = ridge_task.loss(st.W0 + Bm @ st.LoraA)
            fd = (lp - lm) / (2 * h)
            assert fd == pytest.approx(grad_B[i, j], rel=1e-5, abs=1e-10)


def test_frozen_factor_invariant(ridge_task):
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 405))
    a_before = st.LoraA.copy()
    cfg = DpTrainConfig(T=25, eta=0.05, mechanism=Mechanism.NOISE_FREE_LORA, r=8)
    st2, _ = noise_free_lora(ridge_task, st, cfg, Seed(MASTER, 406))
    assert np.array_equal(st2.LoraA, a_before)
    assert np.array_equal(st.LoraA, a_before)


def test_effective_weight_accumulation_identity(ridge_task):
    # W_T - W_0 = -eta sum_t grad_W(W_t) (A^T A) for the noise-free loop.
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 407))
    cfg = DpTrainConfig(T=30, eta=0.05, mechanism=Mechanism.NOISE_FREE_LORA, r=8)
    gram = st.LoraA.T @ st.LoraA
    acc = np.zeros((1, 16))
    state = st
    for t in range(cfg.T):
        acc += ridge_task.grad_W(state.effective_weights())
        state, _ = noise_free_lora(ridge_task, state, DpTrainConfig(
            T=1, eta=cfg.eta, mechanism=Mechanism.NOISE_FREE_LORA, r=8), Seed(MASTER, 408).child(t))
    lhs = state.effective_weights() - st.effective_weights()
    rhs = -cfg.eta * acc @ gram
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1e-12)


def test_dp_lora_fa_reduces_to_noise_free_bitwise(ridge_task):
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 409))
    dp_cfg = DpTrainConfig(
        T=20, eta=0.05, mechanism=Mechanism.DP_LORA_FA, sigma=0.0, clip=math.inf, r=8
    )
    free_cfg = DpTrainConfig(T=20, eta=0.05, mechanism=Mechanism.NOISE_FREE_LORA, r=8)
    st_dp, budget, _ = dp_lora_fa(ridge_task, st, dp_cfg, Seed(MASTER, 410))
    st_free, _ = noise_free_lora(ridge_task, st, free_cfg, Seed(MASTER, 410))
    assert np.array_equal(st_dp.LoraB, st_free.LoraB)
    assert budget == (math.inf, 0.0)


def test_dp_lora_fa_matches_plain_gd_loop(ridge_task):
    # Independent oracle: plain full-batch LoRA-FA GD via lora_fa_step.
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 411))
    cfg = DpTrainConfig(
        T=25, eta=0.05, mechanism=Mechanism.DP_LORA_FA, sigma=0.0, clip=math.inf, r=8
    )
    st_dp, _, _ = dp_lora_fa(ridge_task, st, cfg, Seed(MASTER, 412))
    state = st
    for _ in range(25):
        state = lora_fa_step(state, ridge_task.grad_W(state.effective_weights()), 0.05)
    assert np.linalg.norm(st_dp.LoraB - state.LoraB) <= 1e-10 * max(
        np.linalg.norm(state.LoraB), 1e-12
    )


def test_dp_lora_fa_noise_dominates_at_huge_sigma(ridge_task):
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 413))
    cfg = DpTrainConfig(
        T=10, eta=0.01, mechanism=Mechanism.DP_LORA_FA, sigma=1e6, clip=1.0, r=8,
        delta_target=1e-5,
    )
    st2, budget, traj = dp_lora_fa(ridge_task, st, cfg, Seed(MASTER, 414))
    init_loss = ridge_task.loss(st.effective_weights())
    assert traj.final_loss() > 10 * init_loss  # utility collapses
    assert budget[0] < 1e-3  # enormous noise buys a tiny eps


def test_dp_lora_fa_budget_composition(ridge_task):
    st = init_lora(np.zeros((1, 16)), 4, Seed(MASTER, 415))
    cfg = DpTrainConfig(
        T=7, eta=0.05, mechanism=Mechanism.DP_LORA_FA, eps_target=0.5, delta_target=1e-6,
        clip=1.0, r=4,
    )
    _, budget, traj = dp_lora_fa(ridge_task, st, cfg, Seed(MASTER, 416))
    assert budget == (pytest.approx(3.5), pytest.approx(7e-6))
    assert traj.records[0][3] == pytest.approx(0.5)
    # sigma follows the training algorithm's constant
    sigma = mechanisms.gaussian_sigma(
        1.0, 0.5, 1e-6, mechanisms.SigmaConvention.ALGORITHM
    )
    assert sigma == pytest.approx(2 * 1.0 * math.sqrt(2 * math.log(1.25e6)) / 0.5, rel=1e-12)


def test_dp_lora_fa_per_example_clip_bound(ridge_task):
    # Every clipped per-example contribution stays within the threshold.
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 417))
    beta = 0.05
    gW = ridge_task.per_example_grad_W(st.effective_weights())
    gB = np.einsum("bnd,rd->bnr", gW, st.LoraA)
    norms = np.sqrt(np.einsum("bnr,bnr->b", gB, gB))
    factors = np.minimum(1.0, beta / norms)
    clipped = norms * factors
    assert np.all(clipped <= beta + 1e-12)
    assert np.any(norms > beta)  # the threshold actually binds somewhere


def test_poisson_subsampling_mean_batch(ridge_task):
    from wishart_dp.trainer import _batch_indices

    cfg = DpTrainConfig(T=1, eta=0.1, batch=20, mechanism=Mechanism.DP_LORA_FA, sigma=0.0)
    base = Seed(MASTER, 418)
    sizes = []
    for i in range(10**4):
        idx, _ = _batch_indices(ridge_task, cfg, base.child(i).generator())
        sizes.append(len(idx))
    mean = float(np.mean(sizes))
    q = 20 / ridge_task.n_examples
    se = math.sqrt(ridge_task.n_examples * q * (1 - q) / len(sizes))
    assert abs(mean - 20.0) <= 3 * se


@pytest.mark.filterwarnings("ignore::wishart_dp.errors.OutOfStatedRangeWarning")
def test_dp_lora_fa_decreases_loss_within_budget(ridge_task):
    # Non-private GD sets the attainable decrease; the private run at modest
    # noise gets a healthy fraction of it.
    st = init_lora(np.zeros((1, 16)), 8, Seed(MASTER, 419))
    f_cfg = DpTrainConfig(T=50, eta=0.1, mechanism=Mechanism.NOISE_FREE_LORA, r=8)
    st_free, _ = noise_free_lora(ridge_task, st, f_cfg, Seed(MASTER, 420))
    init_loss = ridge_task.loss(st.effective_weights())
    free_loss = ridge_task.loss(st_free.effective_weights())
    assert free_loss < 0.8 * init_loss
    cfg = DpTrainConfig(
        T=50, eta=0.1, mechanism=Mechanism.DP_LORA_FA, eps_target=8.0, delta_target=1e-5,
        clip=2.0, r=8,
    )
    _, _, traj = dp_lora_fa(ridge_task, st, cfg, Seed(MASTER, 421))
    assert traj.final_loss() <= 0.8 * init_loss


def test_noisy_proj_step_requires_config():
    task = make_ridge_task(30, 8, Seed(MASTER, 430))
    st = init_lora(np.zeros((1, 8)), 4, Seed(MASTER, 431))
    bad = DpTrainConfig(T=1, eta=0.1, mechanism=Mechanism.NOISY_PROJ, sigma=0.0, clip=1.0, r=4)
    with pytest.raises(ConfigError):
        noisy_proj_step(task, st, bad, Seed(MASTER, 432))
    bad2 = DpTrainConfig(T=1, eta=0.1, mechanism=Mechanism.NOISY_PROJ, sigma=0.5, r=4)
    with pytest.raises(ConfigError):
        noisy_proj_step(task, st, bad2, Seed(MASTER, 432))


def test_noisy_proj_step_zero_clip_limit():
    # A tiny clipping threshold leaves an essentially pure projected-noise update.
    task = make_ridge_task(30, 8, Seed(MASTER, 433))
    st = init_lora(np.zeros((1, 8)), 4, Seed(MASTER, 434))
    cfg = DpTrainConfig(T=1, eta=1.0, mechanism=Mechanism.NOISY_PROJ, sigma=0.5, clip=1e-12, r=4)
    st2, _ = noisy_proj_step(task, st, cfg, Seed(MASTER, 435))
    seed = Seed(MASTER, 435).child(0)
    gen = seed.generator()
    Z = gen.standard_normal((8, 4)) * math.sqrt(0.25)
    xi = gen.standard_normal((8, 1)) * 0.5
    pure_noise_update = (xi.T @ (Z @ Z.T)).reshape(1, 8)
    assert np.abs((st.effective_weights() - st2.W0) - pure_noise_update).max() < 1e-9


def test_noisy_proj_step_equals_m2_mechanism_bitwise():
    task = make_ridge_task(40, 12, Seed(MASTER, 436))
    st = init_lora(np.zeros((1, 12)), 6, Seed(MASTER, 437))
    cfg = DpTrainConfig(
        T=1, eta=0.3, mechanism=Mechanism.NOISY_PROJ, sigma=0.4, clip=0.7, r=6,
        eps_target=None, delta_target=None,
    )
    step_seed = Seed(MASTER, 438)
    st2, report = noisy_proj_step(task, st, cfg, step_seed)
    G = task.grad_W(st.effective_weights())
    params = mechanisms.NoisyMechParams(
        variant=mechanisms.Variant.M2, r=6, entry_var=1.0 / 6, sigma_G=0.4, clip_beta=0.7
    )
    out = mechanisms.noisy_mech(mechanisms.MechanismInput(V=G.T), params, step_seed.child(0))
    assert np.array_equal(st2.W0, st.effective_weights() - 0.3 * out.T)
    assert report.sens_frob == pytest.approx(2 * 0.7)
    # fresh factor is recorded and B resets
    assert st2.LoraB.shape == (1, 6)
    assert np.abs(st2.LoraB).max() == 0.0
    assert not np.array_equal(st2.LoraA, st.LoraA)


def test_noisy_proj_multi_step_budget():
    cfg = DpTrainConfig(
        T=5, eta=0.1, mechanism=Mechanism.NOISY_PROJ, sigma=0.5, clip=1.0, r=8,
        alpha=0.1, sens_rank=2,
    )
    d = 100
    mu_step = 0.1 * (2.0) ** 2 / 0.25
    delta_p = delta_M_bound(2, 0.1, 8, d)
    expected = compose_gaussian_steps([mu_step] * 5, 1.0, delta_p)
    assert noisy_proj_budget(cfg, 5, 1.0, d) == pytest.approx(expected, rel=1e-12)


def test_rp_gd_stationary_point():
    task = make_ridge_task(50, 8, Seed(MASTER, 440), noise=0.0, reg=0.0)
    w_star = task.ridge_optimum()
    _, traj = rp_gd(task, w_star, 0.05, 10, 8, False, Seed(MASTER, 441))
    losses = [rec[1] for rec in traj.records]
    assert max(losses) - min(losses) < 1e-20


def test_rp_gd_tracks_plain_gd(ridge_task):
    # Per-step redraws make the projected update unbiased (E[M] = I), so the
    # averaged trajectory tracks plain GD. A single fixed square-case M does
    # not enjoy this: its smallest nonzero eigenvalue sits near 0, stalling
    # the matching directions, so the sample-once variant is not compared.
    d, T, eta = 16, 500, 1e-2
    w = np.zeros(d)
    for _ in range(T):
        w = w - eta * ridge_task.grad_W(w[None, :])[0]
    final_plain = ridge_task.loss(w[None, :])
    ratios = []
    for s in range(20):
        _, traj = rp_gd(ridge_task, np.zeros(d), eta, T, d, True, Seed(MASTER, 442).child(s))
        ratios.append(traj.final_loss() / final_plain)
    assert float(np.mean(ratios)) <= 1.1


def test_rp_gd_rank_one_confinement():
    from wishart_dp.randmat import sample_gaussian_matrix

    task = make_ridge_task(40, 10, Seed(MASTER, 443))
    # with a fixed rank-1 M every update stays along the single factor column
    w, _ = rp_gd(task, np.zeros(10), 0.05, 5, 1, False, Seed(MASTER, 444))
    Z = sample_gaussian_matrix(10, 1, 1.0, Seed(MASTER, 444).child(0))
    direction = Z[:, 0] / np.linalg.norm(Z)
    resid = w - direction * float(w @ direction)
    assert np.linalg.norm(resid) < 1e-10


def test_clip_compare_collapses_at_large_rank():
    res = clip_compare(10, 10**9, 0.01, 2.0)
    assert res.interval_low == pytest.approx(2.0, rel=1e-3)
    assert res.interval_high == pytest.approx(2.0, rel=1e-3)


def test_clip_compare_worked_example():
    res = clip_compare(10, 1200, 0.01, 1.0)
    assert res.zeta == pytest.approx(math.sqrt(12 * math.log(2000) / 1200), rel=1e-12)
    assert res.zeta == pytest.approx(0.2757, abs=2e-4)
    assert res.interval_low == pytest.approx(1 / math.sqrt(1 + res.zeta), rel=1e-12)
    assert res.interval_high == pytest.approx(1 / math.sqrt(1 - res.zeta), rel=1e-12)
    assert res.beta_prime == res.beta


def test_clip_compare_empirical_containment():
    # ||G A^T||_F / ||G||_F falls in [sqrt(1-zeta), sqrt(1+zeta)] w.h.p.
    d, r, n_rows = 64, 256, 3
    zeta = clip_compare(n_rows, r, 0.01, 1.0).zeta
    rng = Seed(MASTER, 450).generator()
    ok = 0
    trials = 1000
    for _ in range(trials):
        G = rng.standard_normal((n_rows, d))
        A = rng.standard_normal((r, d)) / math.sqrt(r)
        ratio = np.linalg.norm(G @ A.T) / np.linalg.norm(G)
        ok += math.sqrt(1 - zeta) <= ratio <= math.sqrt(1 + zeta)
    assert ok >= 0.99 * trials


def test_fit_dispatches_all_mechanisms():
    task = make_logistic_task(40, 8, 3, Seed(MASTER, 460))
    for mech, extra in (
        (Mechanism.NOISE_FREE_LORA, {}),
        (Mechanism.DP_LORA_FA, {"sigma": 0.1, "clip": 1.0, "delta_target": 1e-5}),
        (Mechanism.NOISY_PROJ, {"sigma": 0.1, "clip": 1.0}),
    ):
        cfg = DpTrainConfig(T=5, eta=0.2, mechanism=mech, r=4, **extra)
        W = fit(task, cfg, Seed(MASTER, 461))
        assert W.shape == (3, 8)
        assert np.all(np.isfinite(W))
        assert np.array_equal(W, fit(task, cfg, Seed(MASTER, 461)))


def test_config_validation():
    with pytest.raises(ConfigError):
        DpTrainConfig(T=5, eta=0.1, sigma=1.0, eps_target=1.0, delta_target=1e-5,
                      clip=1.0, mechanism=Mechanism.DP_LORA_FA)
    with pytest.raises(ConfigError):
        DpTrainConfig(T=5, eta=0.1, eps_target=1.0)
    with pytest.raises(ConfigError):
        DpTrainConfig(T=5, eta=0.1, batch=0)
    # the noisy-projection step legitimately takes sigma plus a reporting eps
    DpTrainConfig(T=5, eta=0.1, sigma=0.5, eps_target=1.0, delta_target=1e-5,
                  clip=1.0, mechanism=Mechanism.NOISY_PROJ)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(
        "# sample config\n"
        "T = 12\n"
        "eta = 0.25\n"
        "batch = full\n"
        "clip = 1.5\n"
        "sigma = 0.3\n"
        "mechanism = noisy_proj\n"
        "r = 6\n"
        "alpha = 0.2\n"
        "sens_rank = 1\n"
        "redraw_each_step = true\n"
    )
    cfg = load_config(path)
    assert cfg.T == 12 and cfg.eta == 0.25 and cfg.batch == FULL_BATCH
    assert cfg.mechanism is Mechanism.NOISY_PROJ and cfg.r == 6
    assert cfg.alpha == 0.2 and cfg.sens_rank == 1 and cfg.redraw_each_step


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("T = 5\neta = 0.1\nbogus = 3\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_task_kinds_and_example_loss():
    t = make_logistic_task(30, 6, 4, Seed(MASTER, 470))
    assert t.kind is TaskKind.LOGISTIC
    W = Seed(MASTER, 471).generator().standard_normal((4, 6))
    x = Seed(MASTER, 472).generator().standard_normal(6)
    losses = [t.example_loss(W, x, y) for y in range(4)]
    # cross-entropy of the argmax class is the smallest
    assert int(np.argmin(losses)) == int(np.argmax(W @ x))


def test_config_rejects_budget_with_unbounded_clip():
    with pytest.raises(ConfigError):
        DpTrainConfig(T=5, eta=0.1, eps_target=1.0, delta_target=1e-5,
                      mechanism=Mechanism.DP_LORA_FA)
