import math

import numpy as np
import pytest

from multiarm import planner as pl
from multiarm.collision import CollisionCache, find_first_collision
from multiarm.config import RunConfig, load_config
from multiarm.kinematics import BasePose, EEPose, forward_kinematics, make_arm
from multiarm.observation import build_frame, build_history
from multiarm.planner import PlanSet, dgmap_search, node_cost, plan_cost_terms

T_P = 16
DELTA = 0.1


class ScriptedPolicy:
    """Stand-in policy: returns scripted plans regardless of conditioning."""

    def __init__(self, plans_fn, action_dim=3, obs_horizon=2, pred_horizon=T_P):
        self.plans_fn = plans_fn
        self.action_dim = action_dim
        self.obs_horizon = obs_horizon
        self.pred_horizon = pred_horizon

    def sample_plans(self, obs_vec, count, rng, delta_limit):
        plans = self.plans_fn(obs_vec, count, rng)
        return np.clip(np.asarray(plans, dtype=float), -delta_limit, delta_limit)


def straight_plans(obs_vec, count, rng):
    """Everything sweeps joint 0 downward at full rate; tiny jitter."""
    plans = np.zeros((count, T_P, 3))
    plans[:, :, 0] = -0.1
    plans += rng.normal(0, 0.003, size=plans.shape)
    return plans


def dodge_plans(obs_vec, count, rng):
    """Mixture of waiting, slow sweeps, and folds: head-on resolvers."""
    plans = np.zeros((count, T_P, 3))
    plans[:, :, 0] = rng.uniform(-0.1, 0.02, size=count)[:, None]
    plans[:, :, 1] = rng.uniform(-0.1, 0.1, size=count)[:, None]
    plans[:, :, 2] = rng.uniform(-0.05, 0.05, size=count)[:, None]
    return plans


def facing_scene():
    """Both arms start pointing up and must sweep through the shared midline
    simultaneously to reach down-pointing goals: every straight combination
    collides mid-transit, while one arm pausing resolves it."""
    a = make_arm((0.5, 0.3, 0.2), BasePose(-0.75, 0.0, 0.0), 0.11)
    b = make_arm((0.5, 0.3, 0.2), BasePose(0.75, 0.0, math.pi), 0.11)
    starts = [np.array([math.pi / 2, 0.0, 0.0]), np.array([math.pi / 2, 0.0, 0.0])]
    goals = [forward_kinematics(arm, np.array([-math.pi / 2, 0.0, 0.0]))
             for arm in (a, b)]
    hists = [build_history([build_frame(arm, q, g)], 2)
             for arm, q, g in zip((a, b), starts, goals)]
    return [a, b], starts, goals, hists


@pytest.fixture
def cfg() -> RunConfig:
    return load_config(None)


class TestPlanSet:
    def test_update_appends_and_returns_index(self):
        ps = PlanSet([np.zeros((4, 2))])
        idx = ps.update(np.ones((4, 2)))
        assert idx == 1 and len(ps) == 2
        assert ps.update(np.ones((4, 2))) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            PlanSet([])


class TestNodeCost:
    def test_zero_at_goal_with_zero_plans(self):
        arm = make_arm((0.5, 0.5), BasePose(0, 0, 0), 0.1)
        q = np.array([0.3, -0.2])
        goal = forward_kinematics(arm, q)
        cost = node_cost([arm], [q], [np.zeros((T_P, 2))], [goal],
                         delta_limit=DELTA, penalty=10.0, collided=False)
        assert cost == pytest.approx(0.0, abs=1e-12)

    def test_collision_penalty_adds_ten(self):
        arm = make_arm((0.5, 0.5), BasePose(0, 0, 0), 0.1)
        q = np.array([0.3, -0.2])
        goal = forward_kinematics(arm, q)
        base = node_cost([arm], [q], [np.zeros((T_P, 2))], [goal],
                         delta_limit=DELTA, penalty=10.0, collided=False)
        bumped = node_cost([arm], [q], [np.zeros((T_P, 2))], [goal],
                           delta_limit=DELTA, penalty=10.0, collided=True)
        assert bumped - base == pytest.approx(10.0)

    def test_matches_independent_recomputation(self, rng):
        from multiarm.collision import rollout
        from multiarm.kinematics import pos_distance, rot_distance
        for _ in range(20):
            arm = make_arm((0.5, 0.3, 0.2), BasePose(*rng.uniform(-1, 1, 2), 0.0), 0.11)
            q = rng.uniform(-1, 1, size=3)
            plan = rng.uniform(-DELTA, DELTA, size=(T_P, 3))
            goal = EEPose(rng.uniform(-1, 1, size=2), rng.uniform(-1, 1))
            got = plan_cost_terms(arm, q, plan, goal, DELTA)
            # Straight-line recomputation of each term.
            smooth = sum(math.sqrt(float(np.sum(row * row))) for row in plan)
            traj = rollout(arm, q, plan, DELTA)
            ee = forward_kinematics(arm, traj[-1])
            expect = smooth + pos_distance(ee, goal) + rot_distance(ee, goal)
            assert got == pytest.approx(expect, abs=1e-9)


class TestInitPlans:
    def test_sizes_and_determinism(self, cfg):
        _, _, goals, hists = facing_scene()
        policy = ScriptedPolicy(straight_plans)
        sets_a = pl.init_plans(policy, hists, 10, seed=4, delta_limit=DELTA)
        sets_b = pl.init_plans(policy, hists, 10, seed=4, delta_limit=DELTA)
        assert [len(s) for s in sets_a] == [10, 10]
        for sa, sb in zip(sets_a, sets_b):
            for p, q in zip(sa.plans, sb.plans):
                assert np.array_equal(p, q)

    def test_independent_of_team_size(self):
        _, _, _, hists = facing_scene()
        policy = ScriptedPolicy(straight_plans)
        solo = pl.init_plans(policy, hists[:1], 5, seed=9, delta_limit=DELTA)
        duo = pl.init_plans(policy, hists, 5, seed=9, delta_limit=DELTA)
        for p, q in zip(solo[0].plans, duo[0].plans):
            assert np.array_equal(p, q)

    def test_frozen_arm_gets_single_zero_plan(self):
        _, _, _, hists = facing_scene()
        policy = ScriptedPolicy(straight_plans)
        sets = pl.init_plans(policy, hists, 10, seed=4, delta_limit=DELTA,
                             frozen={1})
        assert len(sets[0]) == 10
        assert len(sets[1]) == 1
        assert np.all(sets[1].plans[0] == 0.0)


class TestSearch:
    def test_single_arm_free_space_solves_immediately(self, cfg):
        arm = make_arm((0.5, 0.3, 0.2), BasePose(0, 0, 0), 0.11)
        start = np.zeros(3)
        goal = forward_kinematics(arm, np.array([0.8, 0.2, -0.1]))
        hist = build_history([build_frame(arm, start, goal)], 2)
        policy = ScriptedPolicy(straight_plans)
        result = dgmap_search([arm], [start], [goal], [hist], policy, None, cfg, 3)
        assert result.solved
        assert result.t_star == T_P
        assert result.stats["expansions"] == 1

    def test_crossing_pair_requires_repair(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 11,
                              audit=True)
        assert result.solved
        assert result.stats["repairs"] >= 1
        # Validate the returned combination with a fresh, cache-free check.
        conflict = find_first_collision(arms, starts, list(result.plans),
                                        delta_limit=DELTA)
        assert conflict is None

    def test_no_duplicate_expansions(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 11)
        tuples = result.stats["expanded_tuples"]
        assert len(tuples) == len(set(tuples))

    def test_extractions_are_frontier_minima(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 11,
                              audit=True)
        costs = result.stats["extraction_costs"]
        mins = result.stats["frontier_min_after"]
        for cost, rest_min in zip(costs, mins):
            if rest_min is not None:
                assert cost <= rest_min + 1e-12

    def test_kappa_exclusion(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 11,
                              audit=True)
        for b, kappa in zip(result.stats["expanded_tuples"],
                            result.stats["expanded_kappa"]):
            for i, bi in enumerate(b):
                assert bi not in kappa[i]

    def test_determinism(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        r1 = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 21)
        r2 = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 21)
        assert r1.solved == r2.solved
        assert r1.t_star == r2.t_star
        assert r1.stats["expansions"] == r2.stats["expansions"]
        assert r1.stats["extraction_costs"] == r2.stats["extraction_costs"]
        for p, q in zip(r1.plans, r2.plans):
            assert np.array_equal(p, q)

    def test_zero_budget_returns_root_best_effort(self, cfg):
        import dataclasses
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        zero = dataclasses.replace(cfg, planner=dataclasses.replace(cfg.planner,
                                                                    timeout_s=0.0))
        result = dgmap_search(arms, starts, goals, hists, single, dual, zero, 11)
        assert not result.solved
        assert result.t_star >= 1
        assert result.stats["expansions"] == 0

    def test_plan_sets_grow_monotonically(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search(arms, starts, goals, hists, single, dual, cfg, 11)
        sizes = result.stats["plan_set_sizes"]
        assert all(size >= cfg.planner.batch for size in sizes)
        grew = result.stats["repair_plans"]
        assert sum(sizes) == 2 * cfg.planner.batch + grew

    def test_self_conflict_rebranches_without_repair(self, cfg):
        # One arm, wall straight ahead: all straight plans are infeasible, so
        # the search rebranches through every candidate then exhausts.
        import dataclasses
        world = dataclasses.replace(cfg, world=dataclasses.replace(
            cfg.world, x_max=0.75))
        arm = make_arm((0.5, 0.3, 0.2), BasePose(0.0, 0.0, 0.0), 0.11)
        start = np.zeros(3)
        goal = forward_kinematics(arm, np.array([0.9, 0.0, 0.0]))
        hist = build_history([build_frame(arm, start, goal)], 2)

        def head_for_wall(obs_vec, count, rng):
            plans = np.zeros((count, T_P, 3))
            plans[:, :, 1] = 0.1  # folds into the wall region regardless
            plans[:, :, 0] = rng.uniform(-0.02, 0.02, size=count)[:, None]
            return plans

        single = ScriptedPolicy(head_for_wall)
        dual = ScriptedPolicy(dodge_plans)
        result = dgmap_search([arm], [start], [goal], [hist], single, dual, world, 2)
        assert result.stats["repairs"] == 0


class TestRepairDetails:
    def test_repair_appends_new_indices(self, cfg):
        arms, starts, goals, hists = facing_scene()
        search = pl._Search(arms, starts, goals, hists, ScriptedPolicy(straight_plans),
                            ScriptedPolicy(dodge_plans), cfg, 11, frozenset())
        root = tuple([0, 0])
        search.push(root, (frozenset(), frozenset()))
        node = search.pop()
        before = len(search.plan_sets[0])
        search.repair(node, 0, 1, frozenset({0}))
        after = len(search.plan_sets[0])
        assert after - before == cfg.planner.batch
        # New successor nodes reference only fresh indices.
        fresh = set(range(before, after))
        for _, _, nd in search.heap:
            if nd.b != root:
                assert nd.b[0] in fresh

    def test_rebranch_respects_kappa_and_visited(self, cfg):
        arms, starts, goals, hists = facing_scene()
        search = pl._Search(arms, starts, goals, hists, ScriptedPolicy(straight_plans),
                            ScriptedPolicy(dodge_plans), cfg, 11, frozenset())
        root = tuple([0, 0])
        search.push(root, (frozenset(), frozenset()))
        node = search.pop()
        search.visited.add(root)
        kappa = frozenset({0, 3})
        search.rebranch(node, 0, kappa)
        bs = [nd.b for _, _, nd in search.heap]
        assert root not in bs
        assert all(b[0] not in kappa for b in bs)
        assert len(bs) == cfg.planner.batch - 2  # minus kappa entries


class TestCacheIntegration:
    def test_costs_equal_recomputation(self, cfg):
        arms, starts, goals, hists = facing_scene()
        single = ScriptedPolicy(straight_plans)
        dual = ScriptedPolicy(dodge_plans)
        search = pl._Search(arms, starts, goals, hists, single, dual, cfg, 11,
                            frozenset())
        result = search.run()
        # Recompute the returned node's cost from scratch.
        conflict = find_first_collision(arms, starts, list(result.plans),
                                        delta_limit=DELTA)
        recomputed = node_cost(arms, starts, list(result.plans), goals,
                               delta_limit=DELTA, penalty=cfg.planner.collision_penalty,
                               collided=conflict is not None)
        if result.solved:
            assert result.stats["extraction_costs"][-1] == pytest.approx(recomputed)
