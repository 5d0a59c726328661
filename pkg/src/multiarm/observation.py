"""Observation frames, stacked histories, and paired two-arm observations.

A frame is a flat float vector; the layout is generated by `frame_layout`
and used everywhere, so field widths follow the arm's joint count with no
magic numbers. Histories stack the last T_o frames oldest-first. Paired
rows put the other arm's transformed frame before the ego frame.
"""

from __future__ import annotations

import numpy as np

from . import kinematics as kin
from .kinematics import ArmModel, BasePose, EEPose


def frame_layout(dof: int) -> list[tuple[str, int, int]]:
    """(field, start, stop) slots covering the frame vector with no gaps."""
    slots = []
    cursor = 0

    def add(name: str, width: int):
        nonlocal cursor
        slots.append((name, cursor, cursor + width))
        cursor += width

    add("joint_angles", dof)
    add("ee_pose", 3)
    add("goal_pose", 3)
    add("link_endpoints", 2 * (dof + 1))
    add("base_pose", 3)
    return slots


def frame_width(dof: int) -> int:
    return frame_layout(dof)[-1][2]


def slot(dof: int, name: str) -> slice:
    for field, start, stop in frame_layout(dof):
        if field == name:
            return slice(start, stop)
    raise KeyError(name)


def dof_from_width(width: int) -> int:
    dof, rem = divmod(width - 11, 3)
    if rem != 0 or dof < 1:
        raise ValueError(f"{width} is not a valid frame width")
    return dof


def build_frame(arm: ArmModel, q: np.ndarray, goal: EEPose) -> np.ndarray:
    """Single observation frame for one arm, all quantities world-frame."""
    frame = np.empty(frame_width(arm.dof))
    ee = kin.forward_kinematics(arm, q)
    frame[slot(arm.dof, "joint_angles")] = q
    frame[slot(arm.dof, "ee_pose")] = ee.as_array()
    frame[slot(arm.dof, "goal_pose")] = goal.as_array()
    frame[slot(arm.dof, "link_endpoints")] = kin.link_vertices(arm, q).reshape(-1)
    frame[slot(arm.dof, "base_pose")] = arm.base.as_array()
    return frame


def transform_to_frame(target_base: BasePose, source_base: BasePose,
                       frame: np.ndarray) -> np.ndarray:
    """Re-express a frame's pose-like fields from source_base coordinates
    into target_base coordinates. Joint angles are frame-independent and
    pass through unchanged."""
    frame = np.asarray(frame, dtype=float)
    dof = dof_from_width(frame.shape[0])
    g = kin.frame_map(target_base, source_base)
    out = frame.copy()

    for name in ("ee_pose", "goal_pose", "base_pose"):
        s = slot(dof, name)
        out[s.start:s.start + 2] = kin.apply_to_points(g, frame[s.start:s.start + 2])
        out[s.start + 2] = kin.apply_to_angles(g, frame[s.start + 2])

    s = slot(dof, "link_endpoints")
    pts = frame[s].reshape(-1, 2)
    out[s] = kin.apply_to_points(g, pts).reshape(-1)
    return out


def build_history(frames, t_o: int) -> np.ndarray:
    """Last t_o frames oldest-first, front-padded by repeating the earliest."""
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not frames:
        raise ValueError("history needs at least one frame")
    if len(frames) >= t_o:
        window = frames[-t_o:]
    else:
        window = [frames[0]] * (t_o - len(frames)) + frames
    return np.stack(window, axis=0)


def build_paired(ego_hist: np.ndarray, other_hist: np.ndarray,
                 ego_base: BasePose, other_base: BasePose) -> np.ndarray:
    """Rowwise [transformed-other ++ ego] observation, shape (T_o, 2w)."""
    if ego_hist.shape != other_hist.shape:
        raise ValueError("history shapes must match")
    rows = []
    for other_frame, ego_frame in zip(other_hist, ego_hist):
        moved = transform_to_frame(ego_base, other_base, other_frame)
        rows.append(np.concatenate([moved, ego_frame]))
    return np.stack(rows, axis=0)


def flatten(history: np.ndarray) -> np.ndarray:
    """Conditioning vector: rows concatenated oldest-first."""
    return np.asarray(history, dtype=float).reshape(-1)


# ---------------------------------------------------------------------------
# Denoiser input assembly. Frames are stored world-frame; the models always
# see them canonicalized into the owning arm's base frame, which removes the
# base-pose factor from what the networks must learn. The paired transform
# then maps other-local coordinates into the ego frame.
# ---------------------------------------------------------------------------

def egocentric_history(history: np.ndarray, base: BasePose) -> np.ndarray:
    """Re-express every frame of a world-frame history in `base` coordinates."""
    return np.stack([transform_to_frame(base, kin.IDENTITY_POSE, row)
                     for row in np.asarray(history, dtype=float)], axis=0)


def single_conditioning(history: np.ndarray, base: BasePose) -> np.ndarray:
    """Conditioning vector for the single-arm model."""
    return flatten(egocentric_history(history, base))


def paired_conditioning(ego_hist: np.ndarray, other_hist: np.ndarray,
                        ego_base: BasePose, other_base: BasePose) -> np.ndarray:
    """Conditioning vector for the pair model: [other-in-ego ++ ego-in-ego]."""
    paired = build_paired(egocentric_history(ego_hist, ego_base),
                          egocentric_history(other_hist, other_base),
                          ego_base, other_base)
    return flatten(paired)


def layout_table(dof: int, t_o: int) -> str:
    """Human-readable slot table for one frame plus history/paired widths."""
    lines = [f"frame width (dof={dof}): {frame_width(dof)}"]
    for name, start, stop in frame_layout(dof):
        lines.append(f"  [{start:3d}:{stop:3d}] {name}")
    w = frame_width(dof)
    lines.append(f"single conditioning width (T_o={t_o}): {t_o * w}")
    lines.append(f"paired row width: {2 * w}")
    lines.append(f"paired conditioning width (T_o={t_o}): {t_o * 2 * w}")
    return "\n".join(lines)
