"""One test per acceptance criterion.

Each test records a ``CRITERION n: PASS|FAIL ...`` line (printed in the
terminal summary by ``conftest.py``) before asserting, so a failing run still
reports what was measured.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE
from fleetlab.dataset import build_rc_table, observe, stack_samples, build_rc_samples
from fleetlab.dataset.rc import RCTable
from fleetlab.evaluation import dtw, evaluate, exclusivity_violations, rollout
from fleetlab.evaluation.dtw import pairwise_cost
from fleetlab.floor import FloorGraph, FloorState, Heading, RobotState, VertexRecord
from fleetlab.models.common import TrainConfig
from fleetlab.models.gf import GFConfig, GFTable, gf_batch_loss, gf_forward, gf_move_accuracy, init_gf
from fleetlab.models.rc import (RCConfig, decode_sequence, encode_batch, encode_neighborhood, init_rc, rc_accuracy,
                                rc_loss, train_rc)
from fleetlab.nn import attention, backward, load_checkpoint, save_checkpoint
from fleetlab.rng import derive_seed
from fleetlab.scaling import fit_isoflop, fit_power_law
from fleetlab.sim import generate_floor, simulate

F64 = torch.float64
TINY_RC = RCConfig(d_model=8, n_heads=2, d_ff=16, K=2, K_r=3, K_p=2, K_x=4)
TINY_GF = GFConfig(d_emb=8, n_blocks=1, n_heads=2, N_max=8)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"


def _cli(args, env=None):
    return subprocess.run([sys.executable, "-m", "fleetlab.cli", *map(str, args)], capture_output=True,
                          env={**os.environ, **(env or {})}, check=True)


# ------------------------------------------------------------------ 1

def test_criterion_1_environment_determinism(tmp_path):
    _cli(["gen-floor", "--width", 8, "--height", 8, "--seed", 3, "-o", tmp_path / "floor.json"])
    outputs = []
    for k, env in enumerate([{}, {}, {}, {"FLEETLAB_PURE": "1"}]):
        out = tmp_path / f"ep{k}.jsonl"
        _cli(["simulate", "--floor", tmp_path / "floor.json", "--robots", 6, "--duration-s", 300, "--seed", 9,
              "-o", out], env)
        outputs.append(out.read_bytes())
    same = all(o == outputs[0] for o in outputs)
    floor = FloorGraph.load(tmp_path / "floor.json")
    t0 = time.perf_counter()
    ep = simulate(floor, 6, 300, 9)
    seconds = time.perf_counter() - t0
    same = same and ep.to_jsonl().encode() == outputs[0]
    ok = same and seconds < 10
    record(1, ok, f"3 runs + pure backend byte-identical={same}; 8x8/6 robots/300 s in {seconds:.2f} s (< 10 s)")
    assert ok


# ------------------------------------------------------------------ 2

def test_criterion_2_exclusivity_and_conservation():
    violations, count_changes, n_snaps = 0, 0, 0
    for k in range(50):
        floor = generate_floor("storage" if k % 2 else "sortation", 8 + k % 3, 8, derive_seed(2, "floor", k))
        ep = simulate(floor, 4 + k % 4, 120, derive_seed(2, "episode", k))
        violations += exclusivity_violations(ep)
        robots = {len(s.robots) for s in ep.snapshots}
        objects = {len(s.objects) for s in ep.snapshots}
        count_changes += (len(robots) > 1) + (len(objects) > 1)
        n_snaps += len(ep.snapshots)
    ok = violations == 0 and count_changes == 0
    record(2, ok, f"50 episodes, {n_snaps} snapshots: {violations} vertex-sharing violations, "
                  f"{count_changes} count changes")
    assert ok


# ------------------------------------------------------------------ 3

def _enumerate_dtw(a, b, cost):
    """Every monotone warping path; the cheapest wins, the longest breaks ties."""
    c = pairwise_cost(a, b, cost).tolist()
    n, m = len(c), len(c[0])
    best = [math.inf, 0]

    def walk(i, j, acc, length):
        acc = c[i][j] + acc
        if i == n - 1 and j == m - 1:
            if acc < best[0] or (acc == best[0] and length + 1 > best[1]):
                best[:] = [acc, length + 1]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, acc, length + 1)

    walk(0, 0, 0.0, 0)
    return best[0], best[0] / best[1]


def test_criterion_3_dtw_oracle():
    rng = np.random.default_rng(3)
    mismatches, checked = 0, 0
    for cost in ("abs", "hamming", "euclidean"):
        for _ in range(1000):
            la, lb = rng.integers(1, 7, size=2)
            if cost == "euclidean":
                a, b = rng.normal(size=(la, 2)).round(3), rng.normal(size=(lb, 2)).round(3)
            elif cost == "hamming":
                a, b = rng.integers(0, 3, size=(la, 2)), rng.integers(0, 3, size=(lb, 2))
            else:
                a, b = rng.integers(-4, 5, size=la).astype(float), rng.integers(-4, 5, size=lb).astype(float)
            mismatches += dtw(a, b, cost) != _enumerate_dtw(a, b, cost)
            checked += 1
    ok = mismatches == 0
    record(3, ok, f"{checked} pairs (1000 per cost): {mismatches} differ from enumeration")
    assert ok


# ------------------------------------------------------------------ 4

def test_criterion_4_replay_scores_zero(corpus):
    pairs = []
    for ep, floor in corpus.split("test"):
        pred = rollout("replay", floor, ep, 60, 60)
        pairs.append((pred, ep.window(60, 120), floor))
    rep = evaluate("replay", pairs)
    values = (rep.dtw_position_m, rep.dtw_state, rep.dtw_timing_s, rep.cde_percent)
    ok = len(pairs) == 20 and values == (0.0, 0.0, 0.0, 0.0)
    record(4, ok, f"{len(pairs)} held-out episodes: position/state/timing/CDE = {values}")
    assert ok


# ------------------------------------------------------------------ 5

def _grad_error(store, loss_fn, seed, n_coords=30, h=1e-4):
    grads = {n: g.clone() for n, g in backward(loss_fn(), store).items()}
    names = sorted(store.params)
    sizes = np.array([store.params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(sizes.sum(), size=n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for g in flat_ids:
            k = int(np.searchsorted(offsets, g, side="right") - 1)
            name, i = names[k], int(g - offsets[k])
            flat = store.params[name].view(-1)
            old = flat[i].item()
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = grads[name].view(-1)[i].item()
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-4))
    return worst


def test_criterion_5_gradient_fidelity(floor8, episode8):
    rc_table = build_rc_table(episode8, floor8, TINY_RC.K, TINY_RC.K_r, TINY_RC.K_p, TINY_RC.K_x, dtype=np.float64)
    gf_table = GFTable(TINY_GF, dtype=np.float64)
    gf_table.add(episode8, floor8)
    rc_batch = rc_table.batch(np.arange(12))
    gf_batch = gf_table.batch(np.arange(0, 60, 20))
    rc_worst, gf_worst = 0.0, 0.0
    for seed in range(10):
        rs = init_rc(TINY_RC, seed, F64)
        rc_worst = max(rc_worst, _grad_error(rs, lambda: rc_loss(rs, TINY_RC, rc_batch), seed))
        gs = init_gf(TINY_GF, seed, F64)
        gf_worst = max(gf_worst, _grad_error(gs, lambda: gf_batch_loss(gs, TINY_GF, gf_batch), seed))
    ok = rc_worst < 1e-4 and gf_worst < 1e-4
    record(5, ok, f"10 seeds, h=1e-4, float64: max rel error rc_loss {rc_worst:.2e}, gf_loss {gf_worst:.2e} (< 1e-4)")
    assert ok


# ------------------------------------------------------------------ 6

def _rotated(floor, turns, shift):
    def move(x, y):
        for _ in range(turns):
            x, y = -y, x
        return x + shift[0], y + shift[1]
    return FloorGraph(tuple(VertexRecord(v.id, *move(v.x, v.y), v.kind) for v in floor.vertices), floor.edges,
                      floor.cell_pitch_m)


def _turn(state, turns):
    return FloorState(state.time_s, tuple(RobotState(r.robot_id, r.position, Heading((r.heading + turns) % 4), r.goal,
                                                     r.laden) for r in state.robots), state.objects)


def test_criterion_6_invariance_suite(floor8, episode8):
    failures = []
    store = init_rc(TINY_RC, 1)
    for turns, shift in ((0, (7, -3)), (1, (0, 0)), (2, (5, 5)), (3, (-9, 2))):
        moved = _rotated(floor8, turns, shift)
        for t in (10, 45, 90):
            state = episode8.snapshot_at(t)
            for r in state.robots:
                a = observe(floor8, state, r.robot_id, TINY_RC.K_r, TINY_RC.K_p, TINY_RC.K_x)
                b = observe(moved, _turn(state, turns), r.robot_id, TINY_RC.K_r, TINY_RC.K_p, TINY_RC.K_x)
                if not torch.equal(encode_neighborhood(store, TINY_RC, a), encode_neighborhood(store, TINY_RC, b)):
                    failures.append(f"rc rotation {turns} t={t}")

    samples = build_rc_samples(episode8, floor8, TINY_RC.K, TINY_RC.K_r, TINY_RC.K_p, TINY_RC.K_x)[:8]
    batch = stack_samples(samples, TINY_RC.K)
    s64 = init_rc(TINY_RC, 0, F64)
    h = encode_batch(s64, TINY_RC, batch)
    base = decode_sequence(s64, TINY_RC, h, batch.actions, batch.step_mask)
    h2 = h.clone()
    h2[:, -1] += 5.0
    acts = batch.actions.copy()
    acts[:, -1] = (acts[:, -1] + 3) % 9
    changed = decode_sequence(s64, TINY_RC, h2, acts, batch.step_mask)
    if not torch.equal(base[:, :-2], changed[:, :-2]):
        failures.append("rc decoder causality")

    gcfg = GFConfig()
    gs = init_gf(gcfg, 0, F64)
    from fleetlab.dataset import build_gf_window
    g, _ = build_gf_window(episode8, floor8, t_end=60)
    g64 = type(g)(g.node_features.astype(np.float64), g.node_ids, g.edge_index, g.edge_features.astype(np.float64),
                  g.n_spatial, g.T, g.M)
    out = gf_forward(gs, gcfg, g64)
    for seed in range(3):
        perm = np.random.default_rng(seed).permutation(g64.n_nodes)
        out_p = gf_forward(gs, gcfg, g64.permuted(perm))
        if not all(torch.equal(out_p[k], out[k][perm]) for k in out):
            failures.append(f"gf permutation {seed}")

    v = torch.randn(4, 1, 6, dtype=F64)
    if not torch.equal(attention(torch.randn(4, 3, 6, dtype=F64), torch.randn(4, 1, 6, dtype=F64), v),
                       v.expand(4, 3, 6)):
        failures.append("attention singleton")
    q, k = torch.zeros(2, 1, 4, dtype=F64), torch.randn(2, 5, 4, dtype=F64)
    vals = torch.randn(2, 5, 3, dtype=F64)
    if not torch.allclose(attention(q, k, vals), vals.mean(1, keepdim=True), rtol=0, atol=1e-15):
        failures.append("attention uniform")
    ok = not failures
    record(6, ok, "rc translation/rotation, rc causality, gf permutation (float64), attention singleton/uniform: "
                  + ("all exact" if ok else ", ".join(failures)))
    assert ok


# ------------------------------------------------------------------ 7

def _test_table(corpus, cfg):
    return RCTable.concat([build_rc_table(ep, fl, cfg.K, cfg.K_r, cfg.K_p, cfg.K_x) for ep, fl in
                           corpus.split("test")])


def test_criterion_7_learning_signal(corpus, rc_trained, gf_trained):
    assert len(corpus.episodes) >= 200
    rc_acc = rc_accuracy(rc_trained.store, rc_trained.config, _test_table(corpus, rc_trained.config))
    rc_pairs, random_pairs = [], []
    for k, (ep, floor) in enumerate(corpus.split("test")):
        truth = ep.window(60, 120)
        rc_pairs.append((rollout("rc", floor, ep, 60, 60, model=(rc_trained.store, rc_trained.config)), truth, floor))
        random_pairs.append((rollout("random", floor, ep, 60, 60, seed=k), truth, floor))
    rc_dtw = evaluate("rc", rc_pairs).dtw_position_m
    random_dtw = evaluate("random", random_pairs).dtw_position_m
    ratio = random_dtw / rc_dtw if rc_dtw > 0 else math.inf
    gtable = GFTable(gf_trained.config)
    for ep, floor in corpus.split("test"):
        gtable.add(ep, floor)
    gf_acc = gf_move_accuracy(gf_trained.store, gf_trained.config, gtable)
    limit = 30 * 60
    ok = rc_acc >= 0.95 and ratio >= 5 and gf_acc >= 0.90 and max(rc_trained.seconds, gf_trained.seconds) <= limit
    record(7, ok, f"RC accuracy {rc_acc:.4f} (>= 0.95); position DTW random {random_dtw:.3f} / RC {rc_dtw:.3f} = "
                  f"{ratio:.2f}x (>= 5); GF move accuracy {gf_acc:.4f} (>= 0.90); training "
                  f"{rc_trained.seconds:.0f} s / {gf_trained.seconds:.0f} s (<= 1800 s)")
    assert ok


# ------------------------------------------------------------------ 8

def test_criterion_8_sixty_second_rollouts(corpus, rc_trained, gf_trained):
    problems = []
    n = 0
    for ep, floor in corpus.split("test")[:5]:
        for name, model in (("rc", (rc_trained.store, rc_trained.config)),
                            ("gf", (gf_trained.store, gf_trained.config))):
            a = rollout(name, floor, ep, 50, 60, model=model)
            b = rollout(name, floor, ep, 50, 60, model=model)
            n += 1
            if a.t_end - a.t_start != 60 or len(a.snapshots) != 61:
                problems.append(f"{name} length {a.t_end - a.t_start}")
            if exclusivity_violations(a):
                problems.append(f"{name} unsafe")
            if a.to_jsonl() != b.to_jsonl():
                problems.append(f"{name} nondeterministic")
    ok = not problems
    record(8, ok, f"{n} greedy rollouts (rc and gf): exactly 60 ticks, safety-clean, repeatable"
           if ok else f"{n} rollouts: {', '.join(problems)}")
    assert ok


# ------------------------------------------------------------------ 9

def test_criterion_9_scaling_machinery():
    sizes = 10.0 ** np.arange(4, 11)  # seven decades, so log10 of every size is exact
    clean = 0.1 * (np.log10(sizes) - 7) ** 2 + 2
    exact_iso = fit_isoflop(sizes, clean).argmin_params == 1e7
    rng = np.random.default_rng(9)
    iso_hits = sum(abs(math.log10(fit_isoflop(sizes, clean + rng.normal(0, 0.01, 7)).argmin_params) - 7) <= 0.1
                   for _ in range(100))
    C = np.array([1e18, 1e19, 1e20])
    exact_pow = fit_power_law(C, 0.1 * C ** 0.5).exponent == 0.5
    pow_hits = sum(abs(fit_power_law(C, 0.1 * C ** 0.5 * (1 + rng.normal(0, 0.02, 3))).exponent - 0.5) <= 0.025
                   for _ in range(100))
    ok = exact_iso and iso_hits >= 95 and exact_pow and pow_hits >= 95
    record(9, ok, f"isoflop exact={exact_iso}, noisy within 0.1 dex {iso_hits}/100; power law exact={exact_pow}, "
                  f"noisy within 5% {pow_hits}/100")
    assert ok


# ------------------------------------------------------------------ 10

def test_criterion_10_checkpoint_and_resume(tmp_path, floor8, episode8):
    table = build_rc_table(episode8, floor8, TINY_RC.K, TINY_RC.K_r, TINY_RC.K_p, TINY_RC.K_x)
    train = TrainConfig(steps=200, batch_size=16, lr=3e-3, log_every=1, warmup=20)
    straight, rows = train_rc(table, TINY_RC, train, seed=4)

    half, _ = train_rc(table, TINY_RC, train, seed=4, until=100)
    path = tmp_path / "half.flck"
    save_checkpoint(half, path)
    loaded = load_checkpoint(path)
    bit_exact = (sorted(loaded.params) == sorted(half.params)
                 and all(torch.equal(loaded.params[k], half.params[k]) for k in half.params)
                 and sorted(loaded.opt_state) == sorted(half.opt_state)
                 and all(torch.equal(loaded.opt_state[k], half.opt_state[k]) for k in half.opt_state)
                 and loaded.opt_step == half.opt_step == 100 and loaded.meta == half.meta)
    save_checkpoint(loaded, tmp_path / "again.flck")
    bit_exact = bit_exact and (tmp_path / "again.flck").read_bytes() == path.read_bytes()

    resumed, more = train_rc(table, TINY_RC, train, seed=4, store=loaded)
    same_losses = [r.loss for r in more] == [r.loss for r in rows[100:]] and len(more) == 100
    same_rows = [r.as_tuple() for r in more] == [r.as_tuple() for r in rows[100:]]
    same_params = all(torch.equal(resumed.params[k], straight.params[k]) for k in straight.params)
    ok = bit_exact and same_losses and same_rows and same_params
    record(10, ok, f"save/load bit-exact={bit_exact}; resumed 100-step loss trajectory identical={same_losses}, "
                   f"ledger identical={same_rows}, final parameters identical={same_params}")
    assert ok
