"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-
criterion lines and timing. Tolerances are fixed here, not configurable.
"""
import math
import os
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from trajlab.align import align_inversion
from trajlab.gating import (
    Block,
    GatingConfig,
    SpatialMask,
    apply_layer_policy,
    compute_region_weights,
    default_layer_policy,
    fuse_self_attention,
    replace_cross_attention,
)
from trajlab.metrics import psnr, stability_report
from trajlab.nulltext import (
    CfgPredictor,
    OptimizerSettings,
    optimize_null_embeddings,
    reconstruct_with_null,
    targets_from_aligned,
)
from trajlab.pipeline import (
    demo_config,
    run_parallel_batch,
    run_pipeline,
    signatures_equal,
    sweep_lambda,
    sweep_overlap_weight,
)
from trajlab.predictor import GaussianOracle, GaussianOracleConfig, predict_x0
from trajlab.sampler import (
    EMPTY_DPM_STATE,
    Direction,
    ddim_step,
    dpm2m_step,
    hybrid_step,
    run_trajectory,
)
from trajlab.schedule import (
    IndexConvention,
    SolverTag,
    build_noise_schedule,
    ddim_grid,
    dpm_grid,
    fragmented_plan,
    hybrid_grid,
    uniform_plan,
)

from conftest import make_oracle


class _Budget:
    def __init__(self, criterion: int, seconds: float):
        self.criterion = criterion
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            print(f"\nACCEPTANCE {self.criterion}: PASS ({elapsed:.2f}s / budget {self.seconds:.0f}s)")
            assert elapsed < self.seconds, f"criterion {self.criterion} exceeded runtime budget"
        else:
            print(f"\nACCEPTANCE {self.criterion}: FAIL after {elapsed:.2f}s")
        return False


def test_criterion_1_grid_exactness():
    with _Budget(1, 1.0):
        # direct evaluation of the linear and log-uniform rules
        tau = [0.9999 - (i / 4) * (0.9999 - 0.0001) for i in range(5)]
        assert np.max(np.abs(ddim_grid(5).values - tau)) < 1e-12
        sigma = [math.exp(math.log(0.99) + (i / 2) * (math.log(0.01) - math.log(0.99))) for i in range(3)]
        assert np.max(np.abs(dpm_grid(3).values - sigma)) < 1e-12
        plan = hybrid_grid(6, 1, 3)
        assert plan.dpm_steps_in_convention() == (1, 2, 3)


def test_criterion_2_ddim_identity_bitwise(default_schedule):
    with _Budget(2, 1.0):
        oracle = make_oracle(default_schedule, d=8, mu_scale=1.0, sigma=1.5, seed=1)
        rng = np.random.default_rng(2)
        for _ in range(1000):
            z = rng.normal(size=8)
            t = float(rng.uniform(0.01, 1.0))
            eps = oracle.eps(z, t)
            x0 = predict_x0(default_schedule, z, t, eps)
            assert np.all(np.isfinite(x0))
            out = ddim_step(default_schedule, oracle, z, t, t)
            assert np.array_equal(out, z)


def test_criterion_3_round_trip_fidelity(soft_schedule):
    with _Budget(3, 5.0):
        d = 8
        oracle = make_oracle(soft_schedule, d=d, mu_scale=1.0, sigma=4.0, seed=0)
        rng = np.random.default_rng(1)
        z0 = oracle.config.mu + 4.0 * rng.normal(size=d)
        errs = []
        for T in (25, 50, 100, 200):
            plan = uniform_plan(T, SolverTag.DDIM)
            conds = [None] * T
            inv = run_trajectory(plan, soft_schedule, oracle, z0, conds, Direction.INVERSION)
            rec = run_trajectory(
                plan, soft_schedule, oracle, inv.final_latent, conds, Direction.RECONSTRUCTION
            )
            errs.append(float(np.linalg.norm(rec.final_latent - z0) / np.linalg.norm(z0)))
        assert errs[1] <= 1e-2, f"T=50 relative L2 {errs[1]:.3e} above 1e-2"
        assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1)), errs


def test_criterion_4_solver_order(default_schedule):
    with _Budget(4, 5.0):
        d = 8
        oracle = make_oracle(default_schedule, d=d, mu_scale=1.0, sigma=1.0, seed=0)
        errs = []
        for T in (5, 10, 20, 40):
            grid = dpm_grid(T).values
            ab0 = default_schedule.alpha_bar(grid[0])
            m0 = np.sqrt(ab0) * oracle.config.mu
            s0 = math.sqrt(ab0 * 1.0 + (1 - ab0))
            zT = m0 + s0 * np.random.default_rng(2).normal(size=d)
            z_exact = oracle.exact_flow_map(zT, grid[0], grid[-1])
            z = zT
            state = EMPTY_DPM_STATE
            for i in range(T - 1):
                z, state = dpm2m_step(default_schedule, oracle, z, grid[i], grid[i + 1], None, state)
            errs.append(float(np.linalg.norm(z - z_exact)))
        slope = -np.polyfit(np.log([5, 10, 20, 40]), np.log(errs), 1)[0]
        assert slope >= 1.8, f"empirical order {slope:.2f} < 1.8"


def test_criterion_5_global_vs_fragmented(default_schedule):
    with _Budget(5, 10.0):
        d = 16
        oracle = make_oracle(default_schedule, d=d, mu_scale=1.0, sigma=2.0, seed=4)
        rng = np.random.default_rng(5)
        z0 = oracle.config.mu + 2.0 * rng.normal(size=d)
        T = 11
        conds = [None] * T
        reports = {}
        for name, plan in (
            ("global", hybrid_grid(T, 5, 10, IndexConvention.FROM_NOISE)),
            ("fragmented", fragmented_plan(T, 5, 10)),
        ):
            inv = run_trajectory(plan, default_schedule, oracle, z0, conds, Direction.INVERSION)
            rec = run_trajectory(
                plan, default_schedule, oracle, inv.final_latent, conds, Direction.RECONSTRUCTION
            )
            reports[name] = stability_report(inv, rec, z0)
        assert reports["fragmented"].boundary_jump >= 3.0 * reports["global"].boundary_jump
        assert reports["global"].psnr_db > reports["fragmented"].psnr_db


def test_criterion_6_alignment_convergence():
    with _Budget(6, 30.0):
        res = run_pipeline(demo_config())  # init_lambda = 0.04, eta = 0.01
        pair = res.aligned
        assert pair.lambda_history[-1] == 0.5
        assert np.array_equal(pair.traj_1.final_latent, pair.traj_2.final_latent)
        assert np.array_equal(pair.traj_1.final_latent, pair.z_shared)
        assert pair.loss_monotone, pair.loss_history

        rows = sweep_lambda()  # reference value set 0.02 .. 0.5
        by_lam = {r["init_lambda"]: r["psnr_mean"] for r in rows}
        peak = max(by_lam, key=by_lam.get)
        assert 0.0 < peak <= 0.1, f"peak at {peak}"
        assert by_lam[0.3] < by_lam[peak], "no degradation at 0.3"
        assert by_lam[0.5] < by_lam[peak], "no degradation at 0.5"


def test_criterion_7_nulltext_exactness(soft_schedule):
    with _Budget(7, 30.0):
        d = 64
        rng = np.random.default_rng(5)
        mu1 = rng.normal(size=d)
        mu2 = mu1 + rng.normal(size=d)
        K = np.eye(d)
        o1 = GaussianOracle(soft_schedule, GaussianOracleConfig(mu=mu1, sigma_diag=np.ones(d), coupling=K))
        o2 = GaussianOracle(soft_schedule, GaussianOracleConfig(mu=mu2, sigma_diag=np.ones(d), coupling=K))
        z1 = mu1 + rng.normal(size=d)
        z2 = mu2 + rng.normal(size=d)
        plan = hybrid_grid(6, 1, 3)
        conds = [np.zeros(d)] * 6
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pair = align_inversion(plan, soft_schedule, o1, o2, z1, z2, conds, conds, init_lambda=0.04)
        targets = targets_from_aligned(pair)
        settings = OptimizerSettings(inner_iterations=20, early_stop=1e-30, warn_nonconverged=False)
        emb1, emb2 = optimize_null_embeddings(
            plan, soft_schedule, (o1, o2), pair.z_shared, targets,
            (np.zeros(d), np.zeros(d)), settings,
        )

        # iterative optimum vs closed-form least squares, step by step
        pred = CfgPredictor(o1, np.zeros(d), 0.0)
        z = pair.z_shared
        state = EMPTY_DPM_STATE
        for i in range(len(plan)):
            base, _ = hybrid_step(plan, i, soft_schedule, pred, z, np.zeros(d), state)
            cols = []
            for j in range(d):
                ej = np.zeros(d)
                ej[j] = 1.0
                out, _ = hybrid_step(plan, i, soft_schedule, pred, z, ej, state)
                cols.append(out - base)
            A = np.stack(cols, axis=1)
            closed, *_ = np.linalg.lstsq(A, targets[0].states[i] - base, rcond=None)
            rel = np.linalg.norm(emb1.nulls[i] - closed) / max(np.linalg.norm(closed), 1e-12)
            assert rel < 1e-6, f"step {i}: iterative vs closed-form relative gap {rel:.2e}"
            z, state = hybrid_step(plan, i, soft_schedule, pred, z, emb1.nulls[i], state)
            if plan.solver_tags[i] is SolverTag.DDIM:
                state = EMPTY_DPM_STATE

        assert max(emb1.residuals) <= 1e-6, max(emb1.residuals)
        assert max(emb2.residuals) <= 1e-6, max(emb2.residuals)
        rec1 = reconstruct_with_null(plan, soft_schedule, o1, pair.z_shared, emb1)
        rec2 = reconstruct_with_null(plan, soft_schedule, o2, pair.z_shared, emb2)
        assert psnr(z1, rec1.final_latent) >= 25.0
        assert psnr(z2, rec2.final_latent) >= 25.0


def test_criterion_8_gating_algebra():
    with _Budget(8, 5.0):
        rng = np.random.default_rng(8)

        def stoch(rows, cols):
            m = rng.random((rows, cols)) + 1e-3
            return m / m.sum(axis=1, keepdims=True)

        n, side = 16, 4
        for _ in range(1000):
            s1, s2, s3 = stoch(n, n), stoch(n, n), stoch(n, n)
            m1 = SpatialMask((rng.random((side, side)) > 0.5).astype(float))
            m2 = SpatialMask((rng.random((side, side)) > 0.5).astype(float))
            w = compute_region_weights(m1, m2, float(rng.random()))
            fused = fuse_self_attention(s1, s2, s3, w)
            assert np.all(np.abs(fused.sum(axis=1) - 1.0) < 1e-9)

        # endpoint independence is bitwise
        m1 = SpatialMask(np.kron(np.array([[1.0, 1.0], [0.0, 0.0]]), np.ones((2, 2))))
        m2 = SpatialMask(np.kron(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2))))
        overlap = np.nonzero((m1.values * m2.values).reshape(-1) > 0)[0]
        s1, s2, s3 = stoch(n, n), stoch(n, n), stoch(n, n)
        w1 = compute_region_weights(m1, m2, 1.0)
        ref = fuse_self_attention(s1, s2, s3, w1)
        s2_mod = s2.copy()
        s2_mod[overlap] = stoch(len(overlap), n)
        assert np.array_equal(ref, fuse_self_attention(s1, s2_mod, s3, w1))
        w0 = compute_region_weights(m1, m2, 0.0)
        ref0 = fuse_self_attention(s1, s2, s3, w0)
        s1_mod = s1.copy()
        s1_mod[overlap] = stoch(len(overlap), n)
        assert np.array_equal(ref0, fuse_self_attention(s1_mod, s2, s3, w0))

        # cross replacement touches exactly the selected columns
        for _ in range(1000):
            L = int(rng.integers(4, 10))
            rows = int(rng.integers(3, 8))
            a1, a2, a3 = stoch(rows, L), stoch(rows, L), stoch(rows, L)
            perm = list(rng.permutation(L))
            t1 = perm[: L // 3]
            t2 = perm[L // 3 : 2 * L // 3]
            out = replace_cross_attention(a1, a2, a3, t1, t2)
            for c in range(L):
                if c in t1:
                    assert np.array_equal(out[:, c], a1[:, c])
                elif c in t2:
                    assert np.array_equal(out[:, c], a2[:, c])
                else:
                    assert np.array_equal(out[:, c], a3[:, c])

        # default layer policy leaves up-block self maps untouched
        policy = default_layer_policy([(Block.DOWN, 256), (Block.MID, 64), (Block.UP, 256)])
        cfg = GatingConfig(w_hat=0.5, token_set_1=(0,), token_set_2=(1,), layer_policy=policy)
        maps_s = (stoch(n, n), stoch(n, n), stoch(n, n))
        maps_a = (stoch(n, 6), stoch(n, 6), stoch(n, 6))
        w = compute_region_weights(m1, m2, 0.5)
        s_out, _ = apply_layer_policy(cfg, (Block.UP, 256), maps_s, maps_a, w)
        assert s_out is maps_s[2]


def test_criterion_9_overlap_weight_shape():
    with _Budget(9, 30.0):
        rows = sweep_overlap_weight()
        co = max(rows, key=lambda r: r["coexistence_score"])
        cov = max(rows, key=lambda r: r["coverage_score"])
        assert 0.4 <= co["w_hat"] <= 0.6, f"co-existence optimum at {co['w_hat']}"
        assert cov["w_hat"] < 1.0 - cov["w_hat"], f"coverage optimum at {cov['w_hat']}"


def test_criterion_10_determinism_and_parallelism():
    with _Budget(10, 60.0):
        cfgs = [replace(demo_config(), seed=s) for s in (23, 24, 25, 26)]
        t0 = time.perf_counter()
        single = run_pipeline(cfgs[0])
        t_single = time.perf_counter() - t0

        seq = [run_pipeline(c) for c in cfgs]
        t0 = time.perf_counter()
        par = run_parallel_batch(cfgs, workers=4)
        t_par = time.perf_counter() - t0

        for a, b in zip(seq, par):
            assert b.ok
            assert signatures_equal(a.signature(), b.result.signature())

        cores = os.cpu_count() or 1
        ratio = t_par / max(t_single, 1e-9)
        print(
            f"\n  [soft, reported] batch wall time {t_par:.3f}s vs single {t_single:.3f}s "
            f"(ratio {ratio:.2f}, target <= 1.3 on >= 4 cores; host has {cores})"
        )
