"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The per-criterion lines appear in the "acceptance criteria" section of the
pytest summary (and live with -s).  The trained simple-2D setup comes from
conftest and is cached on disk, so the first run pays a one-time build cost.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from neuroplan.cspace import path_cost, path_feasible
from neuroplan.data import gen_point_cloud, gen_problem, gen_workspace, make_robot, cloud_size
from neuroplan.learn import (
    EpisodicMemory,
    LoopConfig,
    active_continual_loop,
    continual_loop,
    gem_project,
    reservoir_update,
)
from neuroplan.models import make_model
from neuroplan.neuralnet import (
    NetSpec,
    backward,
    cae_loss,
    forward,
    init_params,
    path_mse_loss,
    quaternion_loss,
)
from neuroplan.planner import (
    NeuralSampler,
    PlanConfig,
    bidirectional_neural_plan,
    lazy_states_contraction,
    plan_path,
    plan_with_neural_sampler,
)
from neuroplan.smp import PlanningProblem, UniformSampler, informed_rrt_star, rrt_star

FINE = 0.05


def report(num: int, desc: str, ok: bool, detail: str = "") -> None:
    import conftest

    tail = f" | {detail}" if detail else ""
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} - {desc}{tail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(f"\n{line}", flush=True)  # also live, for -s runs


# ---------------------------------------------------------------------------
# 1. feasibility soundness across planners
# ---------------------------------------------------------------------------

def test_criterion_01_feasibility_soundness(trained_setup):
    runs = 0
    violations = 0
    successes = 0

    def check(problem, path):
        nonlocal violations, successes
        if path is None:
            return
        successes += 1
        ok = (
            path_feasible(problem.robot, path, problem.ws, FINE)
            and path[0] == problem.start
            and problem.robot.in_goal(path.end.coords, problem.goal.coords)
        )
        if not ok:
            violations += 1

    env_problems = {"simple2d": list(trained_setup.problems)}
    for env, count in (("complex2d", 60), ("complex3d", 50), ("rigid_se2", 20)):
        robot = make_robot(env)
        rng = np.random.default_rng(777)
        probs = []
        for i in range(count):
            ws = gen_workspace(env, np.random.default_rng([888, env == "complex3d", i]))
            probs.append(gen_problem(ws, robot, None, rng))
        env_problems[env] = probs

    smp_models = {}
    for env in env_problems:
        kind = "se2" if env == "rigid_se2" else ("point3d" if env.endswith("3d") else "point2d")
        m = 3 if env.endswith("3d") else 2
        smp_models[env] = make_model(
            kind, [[-20, 20]] * m, n_cloud_points=cloud_size(env), seed=12345,
            latent_dim=16, encoder_hidden=(64,), predictor_hidden=(64,),
        )

    cfg = PlanConfig()
    for env, probs in env_problems.items():
        n_pc = cloud_size(env)
        for k, problem in enumerate(probs):
            if problem.cloud is None:
                cloud = gen_point_cloud(problem.ws, n_pc, np.random.default_rng([1, k]))
                problem = PlanningProblem(
                    problem.robot, problem.ws, problem.start, problem.goal, cloud
                )
            rng_seed = [2, hash(env) % (2**31), k]
            path, _t, _s = rrt_star(
                problem, UniformSampler(problem), 20_000,
                np.random.default_rng(rng_seed + [0]), stop_cost=math.inf, step=FINE,
            )
            check(problem, path)
            runs += 1
            path, _t, _s = informed_rrt_star(
                problem, 20_000, np.random.default_rng(rng_seed + [1]),
                stop_cost=math.inf, step=FINE,
            )
            check(problem, path)
            runs += 1
            path, _t, _s = plan_with_neural_sampler(
                smp_models[env], problem, cfg, 20_000,
                np.random.default_rng(rng_seed + [2]), stop_cost=math.inf, step=FINE,
            )
            check(problem, path)
            runs += 1

    ok = runs >= 500 and violations == 0
    report(1, "feasibility soundness of every returned path", ok,
           f"{runs} runs, {successes} paths, {violations} violations")
    assert runs >= 500
    assert violations == 0


# ---------------------------------------------------------------------------
# 2. hybrid-planner completeness parity
# ---------------------------------------------------------------------------

def test_criterion_02_hybrid_completeness(trained_setup):
    cfg = PlanConfig(plan_oracle=True, oracle_iters=10_000)
    solved = 0
    for k, problem in enumerate(trained_setup.problems):
        path, stats = plan_path(
            trained_setup.model, problem, cfg, np.random.default_rng([404, k])
        )
        if path is not None and path_feasible(problem.robot, path, problem.ws, FINE):
            solved += 1
    ok = solved == len(trained_setup.problems)
    report(2, "hybrid planner solves every feasible problem", ok,
           f"{solved}/{len(trained_setup.problems)} at oracle budget 10000")
    assert ok


# ---------------------------------------------------------------------------
# 3. near-optimality of the neural planner
# ---------------------------------------------------------------------------

def test_criterion_03_near_optimality(trained_setup):
    cfg = PlanConfig(plan_oracle=False)
    ratios = []
    for idx, expert_cost in trained_setup.expert_costs.items():
        problem = trained_setup.problems[idx]
        path, _stats = plan_path(
            trained_setup.model, problem, cfg, np.random.default_rng([403, idx])
        )
        if path is None:
            continue
        ratios.append(path_cost(path) / expert_cost)
    median = float(np.median(ratios))
    ok = median <= 1.2 and len(ratios) >= 15
    report(3, "neural-only cost vs full-budget tree search", ok,
           f"median ratio {median:.3f} over {len(ratios)} solved problems")
    assert ok


# ---------------------------------------------------------------------------
# 4. neural-only success rates
# ---------------------------------------------------------------------------

def test_criterion_04_neural_success(trained_setup):
    model = trained_setup.model
    cfg = PlanConfig(plan_oracle=False)
    n = len(trained_setup.problems)
    bnp_ok = 0
    np_ok = 0
    for k, problem in enumerate(trained_setup.problems):
        z = model.encode(problem.cloud)
        sigma = bidirectional_neural_plan(
            model, z, problem.start.coords, problem.goal.coords, problem, cfg,
            np.random.default_rng([401, k]),
        )
        if sigma is not None:
            sigma = lazy_states_contraction(sigma, problem.robot, problem.ws, FINE)
            if path_feasible(problem.robot, sigma, problem.ws, FINE):
                bnp_ok += 1
        path, _stats = plan_path(model, problem, cfg, np.random.default_rng([402, k]))
        if path is not None:
            np_ok += 1
    ok = bnp_ok >= 0.5 * n and np_ok >= 0.8 * n
    report(4, "rollout-only and neural-replanning success on seen problems", ok,
           f"rollout {bnp_ok}/{n} (need >=50%), neural {np_ok}/{n} (need >=80%)")
    assert bnp_ok >= 0.5 * n
    assert np_ok >= 0.8 * n


# ---------------------------------------------------------------------------
# 5. gradient projection invariants
# ---------------------------------------------------------------------------

def test_criterion_05_projection_invariants():
    rng = np.random.default_rng(42)
    failures = 0
    for _ in range(10_000):
        g = rng.normal(size=64)
        gm = rng.normal(size=64)
        out = gem_project(g, gm)
        if out @ gm < -1e-9:
            failures += 1
        if g @ gm >= 0 and out is not g:
            failures += 1
        again = gem_project(out.copy(), gm)
        if not np.allclose(again, out, atol=1e-12):
            failures += 1
    ok = failures == 0
    report(5, "constrained-update projection invariants", ok,
           f"{failures} failures over 10000 random pairs")
    assert ok


# ---------------------------------------------------------------------------
# 6. reservoir uniformity
# ---------------------------------------------------------------------------

def test_criterion_06_reservoir_uniformity():
    capacity, stream, runs = 50, 5000, 2000
    counts = np.zeros(stream)
    for seed in range(runs):
        mem = EpisodicMemory(capacity)
        rng = np.random.default_rng(seed)
        for i in range(stream):
            reservoir_update(mem, i, rng)
        assert len(mem) == capacity
        counts[mem.items] += 1
    freq = counts / runs
    # smooth per-item estimates over 100-item stream windows; every window
    # mean must sit within the stated 0.01 +/- 0.003 band
    window = freq.reshape(-1, 100).mean(axis=1)
    ok = bool(np.all(np.abs(window - 0.01) < 0.003)) and freq.mean() == pytest.approx(0.01)
    report(6, "reservoir keeps a uniform subsample of the stream", ok,
           f"window means in [{window.min():.4f}, {window.max():.4f}] around 0.01")
    assert ok


# ---------------------------------------------------------------------------
# 7. gradient correctness for all three losses
# ---------------------------------------------------------------------------

def _finite_diff(fn, flat, h=1e-5):
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        g[i] = (hi - lo) / (2 * h)
    return g


def _max_rel_err(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def test_criterion_07_gradient_correctness():
    rng = np.random.default_rng(7)
    worst = 0.0

    # waypoint MSE through a random net
    spec = NetSpec((6, 24, 12, 4))
    params = init_params(spec, rng)
    x = rng.normal(size=(5, 6))
    target = rng.normal(size=(5, 4))

    def mse_value():
        out, _ = forward(spec, params, x)
        return path_mse_loss(out, target)[0]

    out, cache = forward(spec, params, x)
    _, g_out = path_mse_loss(out, target)
    grad, _ = backward(spec, params, cache, g_out)
    worst = max(worst, _max_rel_err(grad.flat, _finite_diff(mse_value, params.flat)))

    # autoencoder loss with weight penalty, both parameter sets
    enc = NetSpec((5, 12, 4))
    dec = NetSpec((4, 12, 5))
    enc_p = init_params(enc, rng)
    dec_p = init_params(dec, rng)
    batch = rng.normal(size=(4, 5))

    def cae_value():
        return cae_loss(enc, dec, enc_p, dec_p, batch, lam=0.01)[0]

    _, enc_g, dec_g = cae_loss(enc, dec, enc_p, dec_p, batch, lam=0.01)
    worst = max(worst, _max_rel_err(enc_g.flat, _finite_diff(cae_value, enc_p.flat)))
    worst = max(worst, _max_rel_err(dec_g.flat, _finite_diff(cae_value, dec_p.flat)))

    # unit-sphere rotation loss through a random net
    qspec = NetSpec((3, 16, 4))
    qparams = init_params(qspec, rng)
    qx = rng.normal(size=3)
    qt = rng.normal(size=4)
    qt /= np.linalg.norm(qt)

    def quat_value():
        q, _ = forward(qspec, qparams, qx)
        return quaternion_loss(q, qt)[0]

    q, qcache = forward(qspec, qparams, qx)
    _, gq = quaternion_loss(q, qt)
    qgrad, _ = backward(qspec, qparams, qcache, gq)
    worst = max(worst, _max_rel_err(qgrad.flat, _finite_diff(quat_value, qparams.flat, h=1e-6)))

    ok = worst < 1e-4
    report(7, "analytic gradients match central finite differences", ok,
           f"max rel err {worst:.2e} across the three losses")
    assert ok


# ---------------------------------------------------------------------------
# 8. active continual learning data efficiency
# ---------------------------------------------------------------------------

def test_criterion_08_active_learning_efficiency():
    from neuroplan.data import gen_demo

    n_ws, steps = 20, 400
    robot = make_robot("simple2d")
    n_pc = cloud_size("simple2d")
    pool = []
    for i in range(n_ws):
        ws = gen_workspace("simple2d", np.random.default_rng([500, i]))
        pool.append((ws, gen_point_cloud(ws, n_pc, np.random.default_rng([500, i, 1]))))

    def make_stream(seed):
        rng = np.random.default_rng(seed)
        return [
            gen_problem(pool[t % n_ws][0], robot, pool[t % n_ws][1], rng)
            for t in range(steps)
        ]

    def fresh_model():
        return make_model(
            "point2d", [[-20, 20], [-20, 20]], n_cloud_points=n_pc, latent_dim=16,
            encoder_hidden=(128,), predictor_hidden=(256, 128), seed=3,
        )

    def make_expert():
        ergn = np.random.default_rng(77)
        return lambda problem: gen_demo(problem, 1200, ergn)

    cfg = LoopConfig(replay_period=5, replay_batch=64, lr=1e-2, pretrain_steps=50)
    attempt_cfg = PlanConfig(n_bnp=60, n_replan=6)

    cl_model, _log = continual_loop(
        fresh_model(), make_stream(901), make_expert(), np.random.default_rng(11), cfg
    )
    acl_model, demo_count, _log = active_continual_loop(
        fresh_model(), make_stream(901), make_expert(), np.random.default_rng(11),
        cfg, plan_cfg=attempt_cfg,
    )

    eval_rng = np.random.default_rng(55)
    eval_problems = [
        gen_problem(pool[k % n_ws][0], robot, pool[k % n_ws][1], eval_rng)
        for k in range(60)
    ]

    def success(model):
        hits = 0
        for k, problem in enumerate(eval_problems):
            path, _ = plan_path(model, problem, attempt_cfg, np.random.default_rng([9, k]))
            hits += path is not None
        return hits / len(eval_problems)

    s_cl = success(cl_model)
    s_acl = success(acl_model)
    ok = demo_count < steps and abs(s_cl - s_acl) <= 0.10
    report(8, "active learning uses fewer demos at comparable success", ok,
           f"demos {demo_count}/{steps}, success CL {s_cl:.2f} vs ACL {s_acl:.2f}")
    assert demo_count < steps
    assert abs(s_cl - s_acl) <= 0.10


# ---------------------------------------------------------------------------
# 9. learned-sampler completeness and concentration
# ---------------------------------------------------------------------------

def _dist_to_polyline(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    best = np.full(pts.shape[0], np.inf)
    for a, b in zip(poly[:-1], poly[1:]):
        seg = b - a
        denom = float(seg @ seg)
        t = np.clip((pts - a) @ seg / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(pts))
        d = np.linalg.norm(pts - (a + t[:, None] * seg), axis=1)
        best = np.minimum(best, d)
    return best


def test_criterion_09_sampler_completeness_and_concentration(trained_setup):
    cfg = PlanConfig(n_smp=300)
    untrained = make_model(
        "point2d", [[-20, 20], [-20, 20]],
        n_cloud_points=trained_setup.dataset.clouds[0].n_points, seed=2024,
    )
    solved = {"trained": 0, "untrained": 0}
    problems = trained_setup.problems[:20]
    for label, model, seed0 in (("trained", trained_setup.model, 405),
                                ("untrained", untrained, 406)):
        for k, problem in enumerate(problems):
            path, _t, _s = plan_with_neural_sampler(
                model, problem, cfg, 50_000, np.random.default_rng([seed0, k]),
                stop_cost=math.inf,
            )
            if path is not None:
                solved[label] += 1

    near_neural = near_uniform = total = 0
    for idx, poly in trained_setup.expert_paths.items():
        if idx >= 10:
            continue
        problem = trained_setup.problems[idx]
        sampler = NeuralSampler(trained_setup.model, problem, cfg)
        rng = np.random.default_rng([407, idx])
        draws = np.array([sampler.next(rng) for _ in range(cfg.n_smp)])
        urng = np.random.default_rng([408, idx])
        uniform = np.array(
            [problem.robot.sample_uniform(problem.ws, urng) for _ in range(cfg.n_smp)]
        )
        near_neural += int((_dist_to_polyline(draws, poly) < 2.0).sum())
        near_uniform += int((_dist_to_polyline(uniform, poly) < 2.0).sum())
        total += cfg.n_smp

    frac_n = near_neural / total
    frac_u = near_uniform / total
    complete = solved["trained"] == len(problems) and solved["untrained"] == len(problems)
    concentrated = frac_n >= 3.0 * frac_u and frac_n > 0
    ok = complete and concentrated
    report(9, "tree search with learned samples stays complete and concentrated", ok,
           f"solved trained {solved['trained']}/20, untrained {solved['untrained']}/20; "
           f"near-path fraction {frac_n:.2f} vs uniform {frac_u:.2f}")
    assert complete
    assert concentrated


# ---------------------------------------------------------------------------
# 10. asymptotic optimality smoke test
# ---------------------------------------------------------------------------

def test_criterion_10_asymptotic_optimality():
    from neuroplan.cspace import Config, PointRobot2D, Workspace

    robot = PointRobot2D()
    ws = Workspace([[-20, 20], [-20, 20]])
    problem = PlanningProblem(robot, ws, Config([-15, -15]), Config([15, 15]))
    optimum = math.hypot(30.0, 30.0)
    costs = []
    for seed in range(20):
        _p, _t, stats = rrt_star(
            problem, UniformSampler(problem), 20_000, np.random.default_rng([410, seed]),
            connect_exact=True,
        )
        costs.append(stats.cost if stats.cost is not None else math.inf)
    median = float(np.median(costs))
    ok = median <= 1.05 * optimum
    report(10, "tree-search cost converges to the straight-line optimum", ok,
           f"20-seed median {median:.2f} vs optimum {optimum:.2f} "
           f"(ratio {median / optimum:.4f})")
    assert ok


# ---------------------------------------------------------------------------
# 11. relative speed: neural planning vs cost-matched tree search
# ---------------------------------------------------------------------------

def test_criterion_11_relative_speed(trained_setup):
    cfg = PlanConfig(plan_oracle=False)
    np_times, rrt_times = [], []
    for k, problem in enumerate(trained_setup.problems):
        if len(np_times) == 20:
            break
        rng = np.random.default_rng([409, k])
        t0 = time.perf_counter()
        path, _stats = plan_path(trained_setup.model, problem, cfg, rng)
        np_ms = (time.perf_counter() - t0) * 1e3
        if path is None:
            continue
        target = 1.05 * path_cost(path)
        t0 = time.perf_counter()
        _p, _t, _s = rrt_star(
            problem, UniformSampler(problem), 20_000,
            np.random.default_rng([411, k]), stop_cost=target,
        )
        rrt_ms = (time.perf_counter() - t0) * 1e3
        np_times.append(np_ms)
        rrt_times.append(rrt_ms)
    np_med = float(np.median(np_times))
    rrt_med = float(np.median(rrt_times))
    ok = len(np_times) == 20 and np_med < rrt_med
    report(11, "neural planning beats cost-matched tree search on wall time", ok,
           f"median {np_med:.1f} ms vs {rrt_med:.1f} ms "
           f"(mean {np.mean(np_times):.1f} vs {np.mean(rrt_times):.1f} ms, n=20)")
    assert ok
