"""Best-first search over per-arm plan-index tuples.

Each arm starts with a batch of candidate delta-action plans sampled from
the single-arm model. Nodes pick one plan per arm; the earliest conflict of
the chosen combination triggers two successor strategies for each involved
arm: Rebranch swaps in existing alternatives, Repair samples fresh plans
from the pair-conditioned model. The frontier is ordered by a cost that
adds path smoothness, terminal goal residuals, and a flat collision
penalty. Search is deterministic given a seed; the wall-clock timeout is
optional and off by default.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from . import observation as obs
from .collision import CollisionCache, Conflict, WorldBounds, find_first_collision, rollout
from .config import RunConfig
from .diffusion import Policy
from .kinematics import EEPose, forward_kinematics, pos_distance, rot_distance
from .seeding import TAG_PLAN, substream


class PlanSet:
    """Growable per-arm candidate plans; indices are stable once assigned."""

    def __init__(self, plans):
        self.plans = [np.asarray(p, dtype=float) for p in plans]
        if not self.plans:
            raise ValueError("initial plan set must not be empty")

    def update(self, plan: np.ndarray) -> int:
        self.plans.append(np.asarray(plan, dtype=float))
        return len(self.plans) - 1

    def __len__(self) -> int:
        return len(self.plans)


@dataclass(frozen=True)
class SearchNode:
    b: tuple[int, ...]
    conflict_sets: tuple[frozenset, ...]
    cost: float
    seq: int


@dataclass
class PlannerResult:
    plans: tuple[np.ndarray, ...]
    t_star: int
    solved: bool
    stats: dict = field(default_factory=dict)


def plan_cost_terms(arm, start, plan, goal: EEPose, delta_limit: float) -> float:
    """Per-arm cost: summed step magnitudes plus terminal pose residuals."""
    plan = np.asarray(plan, dtype=float)
    traj = rollout(arm, start, plan, delta_limit)
    ee = forward_kinematics(arm, traj[-1])
    smoothness = float(np.sum(np.linalg.norm(plan, axis=1)))
    return smoothness + pos_distance(ee, goal) + rot_distance(ee, goal)


def node_cost(arms, start_configs, plans, goals, *, delta_limit: float,
              penalty: float, collided: bool) -> float:
    total = sum(plan_cost_terms(arm, q0, plan, goal, delta_limit)
                for arm, q0, plan, goal in zip(arms, start_configs, plans, goals))
    return total + (penalty if collided else 0.0)


def init_plans(single_policy: Policy, histories, batch: int, seed: int,
               delta_limit: float, bases=None, frozen=frozenset()) -> list[PlanSet]:
    """Sample each arm's candidate batch independently of the other arms.

    Frozen arms (already at their goals) hold a single zero plan.
    """
    if bases is None:
        from .kinematics import IDENTITY_POSE
        bases = [IDENTITY_POSE] * len(histories)
    plan_sets = []
    horizon = single_policy.pred_horizon
    dof = single_policy.action_dim
    for i, (history, base) in enumerate(zip(histories, bases)):
        if i in frozen:
            plan_sets.append(PlanSet([np.zeros((horizon, dof))]))
            continue
        rng = substream(seed, TAG_PLAN, 0, i)
        samples = single_policy.sample_plans(obs.single_conditioning(history, base),
                                             batch, rng, delta_limit)
        plan_sets.append(PlanSet(list(samples)))
    return plan_sets


class _Search:
    def __init__(self, arms, start_configs, goals, histories, single_policy: Policy,
                 dual_policy: Policy | None, cfg: RunConfig, seed: int, frozen,
                 audit: bool = False):
        self.arms = list(arms)
        self.starts = [np.asarray(q, dtype=float) for q in start_configs]
        self.goals = list(goals)
        self.histories = list(histories)
        self.cfg = cfg
        self.single = single_policy
        self.dual = dual_policy
        self.frozen = frozenset(frozen)
        self.n = len(self.arms)
        self.delta = cfg.controller.delta_limit
        self.bounds = WorldBounds(cfg.world.x_min, cfg.world.x_max, cfg.world.y_min,
                                  cfg.world.y_max)
        self.penalty = cfg.planner.collision_penalty
        self.cache = CollisionCache()
        self.plan_sets = init_plans(single_policy, histories, cfg.planner.batch, seed,
                                    self.delta, [arm.base for arm in self.arms],
                                    self.frozen)
        self.repair_rng = substream(seed, TAG_PLAN, 1)
        self.heap: list[tuple[float, int, SearchNode]] = []
        self.visited: set[tuple[int, ...]] = set()
        # Tuples ever inserted. Cost depends only on the tuple, so dropping
        # re-pushes from sibling expansions loses nothing but heap churn.
        self.pushed: set[tuple[int, ...]] = set()
        self.state_cache: dict = {}
        self.seq = 0
        self.audit = audit
        self.arm_terms: dict[tuple[int, int], float] = {}
        self.stats = {"expansions": 0, "generated": 0, "repairs": 0, "rebranches": 0,
                      "repair_plans": 0, "extraction_costs": [], "expanded_tuples": [],
                      "solved": False}
        if audit:
            self.stats["frontier_min_after"] = []
            self.stats["expanded_kappa"] = []

    # -- plumbing -----------------------------------------------------------

    def plans_for(self, b):
        return tuple(self.plan_sets[i].plans[bi] for i, bi in enumerate(b))

    def conflict_for(self, b) -> Conflict | None:
        return find_first_collision(self.arms, self.starts, self.plans_for(b),
                                    cache=self.cache, plan_indices=b,
                                    delta_limit=self.delta, bounds=self.bounds,
                                    state_cache=self.state_cache)

    def cost_for(self, b, collided: bool) -> float:
        total = 0.0
        for i, bi in enumerate(b):
            key = (i, bi)
            if key not in self.arm_terms:
                self.arm_terms[key] = plan_cost_terms(
                    self.arms[i], self.starts[i], self.plan_sets[i].plans[bi],
                    self.goals[i], self.delta)
            total += self.arm_terms[key]
        return total + (self.penalty if collided else 0.0)

    def push(self, b, conflict_sets):
        if b in self.pushed:
            return
        self.pushed.add(b)
        conflict = self.conflict_for(b)
        cost = self.cost_for(b, conflict is not None)
        node = SearchNode(b, conflict_sets, cost, self.seq)
        self.seq += 1
        self.stats["generated"] += 1
        heapq.heappush(self.heap, (cost, node.seq, node))

    def pop(self) -> SearchNode | None:
        while self.heap:
            _, _, node = heapq.heappop(self.heap)
            if node.b not in self.visited:
                return node
        return None

    # -- successor generation -------------------------------------------------

    def rebranch(self, node: SearchNode, ego: int, kappa: frozenset):
        self.stats["rebranches"] += 1
        sets = list(node.conflict_sets)
        sets[ego] = kappa
        sets = tuple(sets)
        for m in range(len(self.plan_sets[ego])):
            if m in kappa:
                continue
            b = tuple(m if i == ego else bi for i, bi in enumerate(node.b))
            self.push(b, sets)

    def repair(self, node: SearchNode, ego: int, other: int, kappa: frozenset):
        if self.dual is None or ego in self.frozen:
            return
        self.stats["repairs"] += 1
        paired = obs.build_paired(self.histories[ego], self.histories[other],
                                  self.arms[ego].base, self.arms[other].base)
        samples = self.dual.sample_plans(obs.flatten(paired), self.cfg.planner.batch,
                                         self.repair_rng, self.delta)
        sets = list(node.conflict_sets)
        sets[ego] = kappa
        sets = tuple(sets)
        for plan in samples:
            idx = self.plan_sets[ego].update(plan)
            self.stats["repair_plans"] += 1
            b = tuple(idx if i == ego else bi for i, bi in enumerate(node.b))
            self.push(b, sets)

    # -- main loop ------------------------------------------------------------

    def run(self) -> PlannerResult:
        deadline = None
        if self.cfg.planner.timeout_s is not None:
            deadline = time.monotonic() + self.cfg.planner.timeout_s
        horizon = self.single.pred_horizon

        root = tuple(0 for _ in range(self.n))
        self.push(root, tuple(frozenset() for _ in range(self.n)))

        result: PlannerResult | None = None
        while self.heap:
            if self.stats["expansions"] >= self.cfg.planner.max_expansions:
                break
            if deadline is not None and time.monotonic() >= deadline:
                break
            node = self.pop()
            if node is None:
                break
            self.visited.add(node.b)
            self.stats["expansions"] += 1
            self.stats["extraction_costs"].append(node.cost)
            self.stats["expanded_tuples"].append(node.b)
            if self.audit:
                rest = [c for c, _, nd in self.heap if nd.b not in self.visited]
                self.stats["frontier_min_after"].append(min(rest) if rest else None)
                self.stats["expanded_kappa"].append(node.conflict_sets)
            conflict = self.conflict_for(node.b)
            if conflict is None:
                self.stats["solved"] = True
                result = PlannerResult(self.plans_for(node.b), horizon, True)
                break
            i, j, t_hat = conflict.arm_i, conflict.arm_j, conflict.time
            kappa_i = node.conflict_sets[i] | {node.b[i]}
            self.rebranch(node, i, kappa_i)
            if not conflict.is_self:
                self.repair(node, i, j, kappa_i)
                kappa_j = node.conflict_sets[j] | {node.b[j]}
                self.rebranch(node, j, kappa_j)
                self.repair(node, j, i, kappa_j)

        if result is None:
            result = self._best_effort(horizon)
        result.stats = dict(self.stats)
        result.stats["cache_hits"] = self.cache.hits
        result.stats["cache_evals"] = self.cache.evals
        result.stats["plan_set_sizes"] = [len(ps) for ps in self.plan_sets]
        return result

    def _best_effort(self, horizon: int) -> PlannerResult:
        """Timeout or exhaustion: return the cheapest known node, with its own
        first-conflict time as the safe-execution prefix (floored at one)."""
        node = self.pop()
        if node is None:
            # Frontier exhausted: resort to the cheapest expanded node.
            best_b = min(self.visited,
                         key=lambda b: (self.cost_for(b, self.conflict_for(b) is not None), b))
            conflict = self.conflict_for(best_b)
            plans = self.plans_for(best_b)
        else:
            conflict = self.conflict_for(node.b)
            plans = self.plans_for(node.b)
        if conflict is None:
            self.stats["solved"] = True
            return PlannerResult(plans, horizon, True)
        return PlannerResult(plans, max(1, conflict.time), False)


def dgmap_search(arms, start_configs, goals, histories, single_policy: Policy,
                 dual_policy: Policy | None, cfg: RunConfig, seed: int,
                 frozen=frozenset(), audit: bool = False) -> PlannerResult:
    """Plan one horizon for every arm; best-effort on budget exhaustion."""
    search = _Search(arms, start_configs, goals, histories, single_policy,
                     dual_policy, cfg, seed, frozen, audit)
    return search.run()
