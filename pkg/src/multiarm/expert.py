"""Expert demonstration planners.

Bidirectional RRT (connect variant) in single-arm or stacked dual-arm joint
space, with shortcut smoothing, plus goal-pose to goal-config resolution by
random restarts of damped Jacobian-transpose descent. Paths are arrays of
waypoints whose consecutive rows differ by at most `resolution` per joint,
so expert steps convert to clamp-free delta actions.
"""

from __future__ import annotations

import math

import numpy as np

from . import kinematics as kin
from .collision import DEFAULT_BOUNDS, WorldBounds, arms_collide, is_free
from .kinematics import ArmModel, EEPose, wrap_angle


def steps_between(a: np.ndarray, b: np.ndarray, resolution: float) -> np.ndarray:
    """Waypoints from a to b (exclusive of a), max-norm spacing <= resolution."""
    gap = float(np.max(np.abs(b - a)))
    n = max(1, int(math.ceil(gap / resolution)))
    ts = np.arange(1, n + 1) / n
    return a[None, :] + ts[:, None] * (b - a)[None, :]


def _segment_valid(a: np.ndarray, b: np.ndarray, is_valid, resolution: float) -> bool:
    prev = a
    for w in steps_between(a, b, resolution):
        if not is_valid(0.5 * (prev + w)) or not is_valid(w):
            return False
        prev = w
    return True


class _Tree:
    def __init__(self, root: np.ndarray):
        self.nodes = [np.asarray(root, dtype=float)]
        self.parents = [-1]

    def nearest(self, target: np.ndarray) -> int:
        stack = np.stack(self.nodes)
        return int(np.argmin(np.sum((stack - target) ** 2, axis=1)))

    def add(self, config: np.ndarray, parent: int) -> int:
        self.nodes.append(config)
        self.parents.append(parent)
        return len(self.nodes) - 1

    def path_to_root(self, idx: int) -> list[np.ndarray]:
        path = []
        while idx != -1:
            path.append(self.nodes[idx])
            idx = self.parents[idx]
        return path


def _extend(tree: _Tree, target: np.ndarray, is_valid, resolution: float):
    """One steer step toward target: returns (status, node_index)."""
    near_idx = tree.nearest(target)
    near = tree.nodes[near_idx]
    diff = target - near
    gap = float(np.max(np.abs(diff)))
    if gap <= 1e-12:
        return "reached", near_idx
    scale = min(1.0, resolution / gap)
    new = near + scale * diff
    if not is_valid(0.5 * (near + new)) or not is_valid(new):
        return "trapped", near_idx
    idx = tree.add(new, near_idx)
    return ("reached" if scale >= 1.0 else "advanced"), idx


def _connect(tree: _Tree, target: np.ndarray, is_valid, resolution: float):
    status = "advanced"
    idx = -1
    while status == "advanced":
        status, idx = _extend(tree, target, is_valid, resolution)
    return status, idx


def _shortcut(path: np.ndarray, is_valid, resolution: float, attempts: int,
              rng: np.random.Generator) -> np.ndarray:
    """Random shortcut smoothing; every replacement segment is re-validated."""
    pts = [np.asarray(w, dtype=float) for w in path]
    for _ in range(attempts):
        if len(pts) < 3:
            break
        i = int(rng.integers(0, len(pts) - 2))
        j = int(rng.integers(i + 2, len(pts)))
        old_len = sum(float(np.linalg.norm(pts[k + 1] - pts[k])) for k in range(i, j))
        if float(np.linalg.norm(pts[j] - pts[i])) >= old_len - 1e-12:
            continue
        if not _segment_valid(pts[i], pts[j], is_valid, resolution):
            continue
        mids = steps_between(pts[i], pts[j], resolution)
        pts = pts[: i + 1] + [w for w in mids] + pts[j + 1:]
    return np.stack(pts)


def birrt_plan(start: np.ndarray, goal: np.ndarray, is_valid, rng: np.random.Generator,
               bounds_lo: np.ndarray, bounds_hi: np.ndarray, resolution: float,
               max_iters: int = 4000, shortcut_attempts: int = 100) -> np.ndarray | None:
    """RRT-connect between start and goal. Returns waypoints (W, d) or None.

    Invalid endpoints are a caller bug, not a planning failure.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if not is_valid(start) or not is_valid(goal):
        raise ValueError("birrt endpoints must satisfy the validity predicate")
    if float(np.max(np.abs(goal - start))) <= 1e-12:
        return start[None, :]

    tree_a, tree_b = _Tree(start), _Tree(goal)
    forward = True  # tree_a grows from start when True
    for _ in range(max_iters):
        sample = rng.uniform(bounds_lo, bounds_hi)
        status, new_idx = _extend(tree_a, sample, is_valid, resolution)
        if status != "trapped":
            status_b, meet_idx = _connect(tree_b, tree_a.nodes[new_idx], is_valid, resolution)
            if status_b == "reached":
                part_a = tree_a.path_to_root(new_idx)[::-1]
                part_b = tree_b.path_to_root(meet_idx)
                path = part_a + part_b if forward else part_b[::-1] + part_a[::-1]
                raw = np.stack(path)
                smoothed = _shortcut(raw, is_valid, resolution, shortcut_attempts, rng)
                return smoothed
        tree_a, tree_b = tree_b, tree_a
        forward = not forward
    return None


def single_arm_validity(arm: ArmModel, bounds: WorldBounds = DEFAULT_BOUNDS):
    return lambda q: is_free(arm, q, bounds)


def dual_arm_validity(arm_a: ArmModel, arm_b: ArmModel, bounds: WorldBounds = DEFAULT_BOUNDS):
    da = arm_a.dof

    def valid(q):
        qa, qb = q[:da], q[da:]
        return (is_free(arm_a, qa, bounds) and is_free(arm_b, qb, bounds)
                and not arms_collide(arm_a, qa, arm_b, qb))

    return valid


def dual_birrt_plan(arm_a: ArmModel, arm_b: ArmModel, starts, goals,
                    rng: np.random.Generator, resolution: float,
                    bounds: WorldBounds = DEFAULT_BOUNDS, max_iters: int = 4000,
                    shortcut_attempts: int = 100) -> np.ndarray | None:
    """Joint-space RRT-connect for a pair; waypoints stack [q_a | q_b]."""
    start = np.concatenate([starts[0], starts[1]])
    goal = np.concatenate([goals[0], goals[1]])
    lo = np.concatenate([arm_a.lower_limits, arm_b.lower_limits])
    hi = np.concatenate([arm_a.upper_limits, arm_b.upper_limits])
    return birrt_plan(start, goal, dual_arm_validity(arm_a, arm_b, bounds), rng,
                      lo, hi, resolution, max_iters, shortcut_attempts)


def _pose_jacobian(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Planar Jacobian of (x, y, theta) wrt joint angles, shape (3, d)."""
    verts = kin.link_vertices(arm, q)
    tip = verts[-1]
    jac = np.ones((3, arm.dof))
    rel = tip[None, :] - verts[:-1]
    jac[0] = -rel[:, 1]
    jac[1] = rel[:, 0]
    return jac


def sample_goal_config(arm: ArmModel, goal_pose: EEPose, rng: np.random.Generator,
                       pos_tol: float = 0.03, rot_tol: float = 0.1,
                       bounds: WorldBounds = DEFAULT_BOUNDS,
                       max_restarts: int = 50, iters: int = 200) -> np.ndarray | None:
    """Collision-free config realizing goal_pose within (pos_tol, rot_tol).

    Random restarts with damped Jacobian-transpose descent on the pose
    residual; None when the budget runs out (e.g. unreachable goals).
    """
    if float(np.linalg.norm(goal_pose.position - arm.base.xy)) > arm.total_length + pos_tol:
        return None
    rot_weight = 0.3
    for _ in range(max_restarts):
        q = rng.uniform(arm.lower_limits, arm.upper_limits)
        step_scale = 0.8
        prev_norm = np.inf
        for _ in range(iters):
            ee = kin.forward_kinematics(arm, q)
            r_pos = goal_pose.position - ee.position
            r_rot = float(wrap_angle(goal_pose.orientation - ee.orientation))
            if (np.linalg.norm(r_pos) <= 0.5 * pos_tol and abs(r_rot) <= 0.5 * rot_tol
                    and is_free(arm, q, bounds)):
                return q
            residual = np.array([r_pos[0], r_pos[1], rot_weight * r_rot])
            norm = float(np.linalg.norm(residual))
            if norm > prev_norm:
                step_scale = max(step_scale * 0.5, 0.01)
            prev_norm = norm
            step = step_scale * (_pose_jacobian(arm, q).T @ residual)
            biggest = float(np.max(np.abs(step)))
            if biggest > 0.2:
                step *= 0.2 / biggest
            if biggest < 1e-10:
                break
            q = np.clip(q + step, arm.lower_limits, arm.upper_limits)
    return None
