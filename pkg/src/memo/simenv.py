"""Deterministic kinematic tabletop world.

No forces or friction: skills update poses directly, collisions are checked
against world-axis-aligned bounding boxes of (possibly rotated) boxes swept
along straight segments, and released objects settle straight down onto
their highest support.  Identical call sequences from identical resets
produce bit-identical serialized worlds.

Worlds, tasks, goal predicates, and teacher scripts are loaded from YAML
task files (see ``assets/tasks/``).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from . import dsl

GRASP_TOLERANCE = 0.03   # max gripper-to-object distance for grasp()
GRIPPER_HALF = 0.01      # half-extent of the gripper collision box
ON_TOLERANCE = 0.02      # max bottom-to-top gap for the "is on" relation
HINGE_OPEN_THRESHOLD = 0.7     # rad
PRISMATIC_OPEN_THRESHOLD = 0.04  # m
CLOSED_THRESHOLD = 0.05  # rad or m


class SimError(Exception):
    pass


class UnknownCheckpointError(SimError):
    pass


class UnknownPredicateError(SimError):
    pass


# ---------------------------------------------------------------------------
# SE(3) helpers (xyz + roll/pitch/yaw, R = Rz(yaw) @ Ry(pitch) @ Rx(roll))


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def rpy_from_matrix(r: np.ndarray) -> tuple:
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(r[2, 0]) < 1.0 - 1e-9:
        roll = math.atan2(r[2, 1], r[2, 2])
        yaw = math.atan2(r[1, 0], r[0, 0])
    else:  # gimbal lock
        roll = math.atan2(-r[1, 2], r[1, 1])
        yaw = 0.0
    return (roll, pitch, yaw)


def pose_matrix(pose: Sequence[float]) -> tuple:
    """(R, t) for an xyz+rpy pose."""
    return rotation_matrix(pose[3], pose[4], pose[5]), np.array(pose[:3], dtype=float)


def matrix_pose(r: np.ndarray, t: np.ndarray) -> tuple:
    # +0.0 folds -0.0 into 0.0 so rendered poses stay canonical
    return tuple(float(v) + 0.0 if v != 0 else 0.0 for v in t) + tuple(
        v if v != 0 else 0.0 for v in rpy_from_matrix(r)
    )


def compose(a: tuple, b: tuple) -> tuple:
    """(Ra, ta) ∘ (Rb, tb)."""
    ra, ta = a
    rb, tb = b
    return ra @ rb, ra @ tb + ta


def invert(a: tuple) -> tuple:
    r, t = a
    return r.T, -(r.T @ t)


def axis_angle_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


# ---------------------------------------------------------------------------
# World state


@dataclass
class ObjectBody:
    label: str
    cls: str
    pose: tuple  # xyz + rpy
    dims: tuple  # full extents (dx, dy, dz)
    graspable: bool = False
    container: bool = False
    interior_floor: float = 0.0  # height of a container's inner floor above its bottom


@dataclass
class Joint:
    name: str
    type: str  # "hinge" | "prismatic"
    parent: str
    handle: str
    moving: tuple  # labels rigidly attached to the joint
    axis: tuple
    anchor: tuple  # point on the joint axis, world frame (at position 0)
    range: tuple  # (lo, hi)
    position: float = 0.0
    base_poses: dict = field(default_factory=dict)  # label -> pose at position 0


@dataclass
class Gripper:
    pose: tuple = (0.0, 0.0, 0.3, 0.0, 0.0, 0.0)
    open: bool = True
    held: Optional[str] = None
    grasp_offset: Optional[tuple] = None  # held pose = gripper ∘ offset, as xyz+rpy


@dataclass(frozen=True)
class StepOutcome:
    ok: bool
    violation: Optional[str] = None  # table_collision | object_collision |
    #   grasp_out_of_reach | nothing_held | joint_limit
    detail: str = ""


@dataclass(frozen=True)
class StepRecord:
    call_text: str
    ok: bool
    violation: Optional[str] = None
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "call": self.call_text,
            "ok": self.ok,
            "violation": self.violation,
            "detail": self.detail,
        }


def _aabb(pose: Sequence[float], dims: Sequence[float]) -> tuple:
    """World-axis-aligned bounds of a rotated box: |R| @ half-extents."""
    r, t = pose_matrix(pose)
    half = np.abs(r) @ (np.asarray(dims, dtype=float) / 2.0)
    return t - half, t + half


def _segment_hits_box(p0: np.ndarray, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    """Slab test: does segment p0->p1 intersect the box [lo, hi]?"""
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-12:
            if p0[i] < lo[i] or p0[i] > hi[i]:
                return False
        else:
            t1 = (lo[i] - p0[i]) / d[i]
            t2 = (hi[i] - p0[i]) / d[i]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


class World:
    def __init__(self, objects: Sequence[ObjectBody], joints: Sequence[Joint], table_height: float = 0.0):
        self.objects: dict = {o.label: o for o in objects}
        self.joints: list = list(joints)
        self.gripper = Gripper()
        self.table_height = table_height
        self._checkpoints: dict = {}
        self._next_checkpoint = 1
        for joint in self.joints:
            if not joint.base_poses:
                joint.base_poses = {
                    label: self.objects[label].pose for label in joint.moving
                }
            self._apply_joint(joint)

    # -- checkpointing -----------------------------------------------------

    def checkpoint(self) -> int:
        cp = self._next_checkpoint
        self._next_checkpoint += 1
        self._checkpoints[cp] = copy.deepcopy(
            (self.objects, self.joints, self.gripper)
        )
        return cp

    def restore(self, cp: int) -> None:
        if cp not in self._checkpoints:
            raise UnknownCheckpointError(f"unknown checkpoint {cp}")
        self.objects, self.joints, self.gripper = copy.deepcopy(self._checkpoints[cp])

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "table_height": self.table_height,
            "objects": {
                label: {
                    "class": o.cls,
                    "pose": list(o.pose),
                    "dims": list(o.dims),
                    "graspable": o.graspable,
                    "container": o.container,
                }
                for label, o in sorted(self.objects.items())
            },
            "joints": [
                {"name": j.name, "type": j.type, "position": j.position}
                for j in self.joints
            ],
            "gripper": {
                "pose": list(self.gripper.pose),
                "open": self.gripper.open,
                "held": self.gripper.held,
            },
        }

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    # -- kinematics --------------------------------------------------------

    def _apply_joint(self, joint: Joint) -> None:
        anchor = np.asarray(joint.anchor, dtype=float)
        for label in joint.moving:
            base_r, base_t = pose_matrix(joint.base_poses[label])
            if joint.type == "hinge":
                rot = axis_angle_matrix(joint.axis, joint.position)
                t = anchor + rot @ (base_t - anchor)
                r = rot @ base_r
            else:  # prismatic
                t = base_t + joint.position * np.asarray(joint.axis, dtype=float)
                r = base_r
            self.objects[label].pose = matrix_pose(r, t)

    def _joint_for_handle(self, label: str) -> Optional[Joint]:
        for joint in self.joints:
            if joint.handle == label or label in joint.moving:
                return joint
        return None

    def _attach_held(self) -> None:
        g = self.gripper
        if g.held is None:
            return
        obj = self.objects[g.held]
        r, t = compose(pose_matrix(g.pose), pose_matrix(g.grasp_offset))
        obj.pose = matrix_pose(r, t)

    def _sweep(self, target: np.ndarray) -> Optional[StepOutcome]:
        """Collision check for moving the gripper point to ``target``."""
        p0 = np.array(self.gripper.pose[:3])
        p1 = target
        if min(p0[2], p1[2]) - GRIPPER_HALF < self.table_height:
            return StepOutcome(False, "table_collision", "end-effector swept below the table")
        held = self.gripper.held
        pad = np.full(3, GRIPPER_HALF)
        for label, obj in sorted(self.objects.items()):
            if label == held:
                continue
            lo, hi = _aabb(obj.pose, obj.dims)
            lo, hi = lo - pad, hi + pad
            if (np.all(p1 >= lo) and np.all(p1 <= hi)) or (
                np.all(p0 >= lo) and np.all(p0 <= hi)
            ):
                # Endpoint inside this object's bounds: an intentional
                # approach (grasping it, reaching into a container) or a
                # retreat from current contact; it does not block.
                continue
            if _segment_hits_box(p0, p1, lo, hi):
                return StepOutcome(False, "object_collision", f"path blocked by {label!r}")
        return None

    def _settle(self, label: str) -> None:
        """Drop a released object straight down onto its highest support."""
        obj = self.objects[label]
        lo, hi = _aabb(obj.pose, obj.dims)
        x, y = obj.pose[0], obj.pose[1]
        support = self.table_height
        for other_label, other in sorted(self.objects.items()):
            if other_label == label or other_label == self.gripper.held:
                continue
            olo, ohi = _aabb(other.pose, other.dims)
            if not (olo[0] <= x <= ohi[0] and olo[1] <= y <= ohi[1]):
                continue
            if other.container and lo[2] < ohi[2] - 1e-9:
                # Inside the container: rest on its interior floor.
                support = max(support, olo[2] + other.interior_floor)
            elif ohi[2] <= obj.pose[2] + 1e-9:
                support = max(support, ohi[2])
        half_z = (hi[2] - lo[2]) / 2.0
        p = list(obj.pose)
        p[2] = support + half_z
        obj.pose = tuple(p)

    # -- skills ------------------------------------------------------------

    def step_skill(self, call: dsl.SkillCall) -> StepOutcome:
        """Execute one validated skill call.  A violation leaves the world
        exactly as it was before the call."""
        name = call.name
        if name == "move_to":
            return self._do_move(call.args[0].xyzrpy)
        if name == "move_delta":
            dx, dy, dz = (a.value for a in call.args)
            p = self.gripper.pose
            return self._do_move((p[0] + dx, p[1] + dy, p[2] + dz, p[3], p[4], p[5]))
        if name == "set_yaw":
            p = self.gripper.pose
            self.gripper.pose = (p[0], p[1], p[2], p[3], p[4], call.args[0].value)
            self._attach_held()
            return StepOutcome(True)
        if name == "open_gripper":
            return self._do_release()
        if name == "close_gripper":
            self.gripper.open = False
            return StepOutcome(True)
        if name == "release":
            return self._do_release()
        if name == "grasp":
            return self._do_grasp(call.args[0].value)
        if name == "rotate_joint":
            return self._do_rotate_joint(call.args[0].value, call.args[1].value)
        return StepOutcome(False, "object_collision", f"skill {name!r} is not executable")

    def _do_move(self, target_pose: tuple) -> StepOutcome:
        target = np.array(target_pose[:3], dtype=float)
        hit = self._sweep(target)
        if hit is not None:
            return hit
        self.gripper.pose = tuple(float(v) for v in target_pose)
        self._attach_held()
        return StepOutcome(True)

    def _do_release(self) -> StepOutcome:
        held = self.gripper.held
        self.gripper.open = True
        self.gripper.held = None
        self.gripper.grasp_offset = None
        constrained = held is not None and any(
            held in j.moving for j in self.joints
        )
        if held is not None and not constrained:
            self._settle(held)
        return StepOutcome(True)

    def _do_grasp(self, label: str) -> StepOutcome:
        if label not in self.objects:
            return StepOutcome(False, "grasp_out_of_reach", f"no object labeled {label!r}")
        obj = self.objects[label]
        if not obj.graspable:
            return StepOutcome(False, "grasp_out_of_reach", f"{label!r} is not graspable")
        dist = float(
            np.linalg.norm(np.array(obj.pose[:3]) - np.array(self.gripper.pose[:3]))
        )
        if dist > GRASP_TOLERANCE:
            return StepOutcome(
                False,
                "grasp_out_of_reach",
                f"{label!r} is {dist:.3f} m away (tolerance {GRASP_TOLERANCE} m)",
            )
        self.gripper.open = False
        self.gripper.held = label
        offset = compose(invert(pose_matrix(self.gripper.pose)), pose_matrix(obj.pose))
        self.gripper.grasp_offset = matrix_pose(*offset)
        return StepOutcome(True)

    def _do_rotate_joint(self, label: str, delta: float) -> StepOutcome:
        joint = self._joint_for_handle(label)
        if joint is None:
            return StepOutcome(
                False, "nothing_held", f"{label!r} has no articulated joint attached"
            )
        if self.gripper.held != joint.handle:
            return StepOutcome(
                False,
                "nothing_held",
                f"gripper must be holding {joint.handle!r} to move joint {joint.name!r}",
            )
        new_pos = joint.position + delta
        lo, hi = joint.range
        if new_pos < lo - 1e-9 or new_pos > hi + 1e-9:
            return StepOutcome(
                False,
                "joint_limit",
                f"joint {joint.name!r} position {new_pos:.3f} outside range [{lo}, {hi}]",
            )
        joint.position = new_pos
        self._apply_joint(joint)
        # The gripper tracks the handle it is holding.
        handle_pose = pose_matrix(self.objects[joint.handle].pose)
        grip = compose(handle_pose, invert(pose_matrix(self.gripper.grasp_offset)))
        self.gripper.pose = matrix_pose(*grip)
        return StepOutcome(True)

    def run_program(
        self,
        program: dsl.SkillProgram,
        on_step: Optional[Callable] = None,
    ) -> list:
        """Execute calls in order, aborting after the first violation.
        Returns the list of :class:`StepRecord`."""
        trace = []
        for call in program.calls:
            outcome = self.step_skill(call)
            record = StepRecord(
                dsl.render(dsl.SkillProgram((call,))),
                outcome.ok,
                outcome.violation,
                outcome.detail,
            )
            trace.append(record)
            if on_step is not None:
                on_step(record)
            if not outcome.ok:
                break
        return trace

    # -- scene graph -------------------------------------------------------

    def scene_graph(self) -> "SceneGraph":
        return SceneGraph(self)


class SceneGraph:
    """Labeled nodes (object poses) plus natural-language relation edges,
    regenerated from geometry at construction."""

    def __init__(self, world: World):
        # Snapshot: an observation must not change under later execution.
        frozen = World.__new__(World)
        frozen.objects = copy.deepcopy(world.objects)
        frozen.joints = copy.deepcopy(world.joints)
        frozen.gripper = copy.deepcopy(world.gripper)
        frozen.table_height = world.table_height
        frozen._checkpoints = {}
        frozen._next_checkpoint = 1
        world = frozen
        self.world = world
        self.nodes = [
            {"label": label, "pose": list(obj.pose), "class": obj.cls}
            for label, obj in sorted(world.objects.items())
        ]
        self.edges = self._relations(world)

    @staticmethod
    def _relations(world: World) -> list:
        edges = []
        held = world.gripper.held
        items = sorted(world.objects.items())
        for label, obj in items:
            if label == held:
                continue
            lo, hi = _aabb(obj.pose, obj.dims)
            for other_label, other in items:
                if other_label == label or other_label == held:
                    continue
                olo, ohi = _aabb(other.pose, other.dims)
                xy_inside = (
                    olo[0] <= obj.pose[0] <= ohi[0] and olo[1] <= obj.pose[1] <= ohi[1]
                )
                if not xy_inside:
                    continue
                if other.container and lo[2] >= olo[2] - 1e-9 and hi[2] <= ohi[2] + 1e-9:
                    edges.append({"subject": label, "relation": "is inside", "object": other_label})
                elif abs(lo[2] - ohi[2]) <= ON_TOLERANCE:
                    edges.append({"subject": label, "relation": "is on", "object": other_label})
        for joint in world.joints:
            threshold = (
                HINGE_OPEN_THRESHOLD if joint.type == "hinge" else PRISMATIC_OPEN_THRESHOLD
            )
            if abs(joint.position) >= threshold:
                state = "is open"
            elif abs(joint.position) <= CLOSED_THRESHOLD:
                state = "is closed"
            else:
                state = "is partly open"
            door = next(
                (l for l in joint.moving if l != joint.handle), joint.moving[0]
            )
            edges.append({"subject": door, "relation": state, "object": joint.parent})
        if held is not None:
            edges.append({"subject": "gripper", "relation": "is holding", "object": held})
        return edges

    # templatize/embedding interface
    def labels(self):
        return [n["label"] for n in self.nodes]

    def pose_of(self, label: str):
        return tuple(self.world.objects[label].pose)

    def dims_of(self, label: str):
        return tuple(self.world.objects[label].dims)

    def digest(self) -> str:
        """Canonical text form, embedded as the optional scene key."""
        parts = [
            "{}@({})".format(
                n["label"], ",".join(f"{v:.3f}" for v in n["pose"])
            )
            for n in self.nodes
        ]
        rels = sorted(
            f"{e['subject']} {e['relation']} {e['object']}" for e in self.edges
        )
        return "; ".join(parts + rels)

    def render(self) -> str:
        """Readable scene description for policy prompts."""
        lines = ["Scene objects:"]
        for n in self.nodes:
            obj = self.world.objects[n["label"]]
            pose_txt = ",".join(dsl._fmt_num(v) for v in obj.pose)
            dims_txt = ",".join(dsl._fmt_num(v) for v in obj.dims)
            grasp = " graspable" if obj.graspable else ""
            lines.append(
                f'- "{n["label"]}" ({obj.cls}){grasp} pose({pose_txt}) dims({dims_txt})'
            )
        if self.edges:
            lines.append("Relations:")
            for e in self.edges:
                lines.append(f"- the {e['subject']} {e['relation']} the {e['object']}".rstrip())
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Goal predicates


def eval_predicate(pred: dict, world: World) -> bool:
    if len(pred) != 1:
        raise UnknownPredicateError(f"predicate must have exactly one key: {pred}")
    (name, arg), = pred.items()
    if name == "all":
        return all(eval_predicate(p, world) for p in arg)
    if name == "any":
        return any(eval_predicate(p, world) for p in arg)
    if name == "not":
        return not eval_predicate(arg, world)
    if name in ("on", "inside", "above"):
        a, b = world.objects.get(arg["a"]), world.objects.get(arg["b"])
        if a is None or b is None:
            raise UnknownPredicateError(f"unknown object in predicate {pred}")
        alo, ahi = _aabb(a.pose, a.dims)
        blo, bhi = _aabb(b.pose, b.dims)
        xy = bool(blo[0] <= a.pose[0] <= bhi[0] and blo[1] <= a.pose[1] <= bhi[1])
        if name == "on":
            return (
                xy
                and bool(abs(alo[2] - bhi[2]) <= ON_TOLERANCE)
                and world.gripper.held != arg["a"]
            )
        if name == "inside":
            return xy and bool(alo[2] >= blo[2] - 1e-9) and bool(ahi[2] <= bhi[2] + 1e-9)
        return xy and bool(alo[2] >= bhi[2] - 1e-9)  # above
    if name in ("joint_open", "joint_closed"):
        joint = next((j for j in world.joints if j.name == arg["joint"]), None)
        if joint is None:
            raise UnknownPredicateError(f"unknown joint {arg['joint']!r}")
        threshold = (
            HINGE_OPEN_THRESHOLD if joint.type == "hinge" else PRISMATIC_OPEN_THRESHOLD
        )
        if name == "joint_open":
            return abs(joint.position) >= threshold
        return abs(joint.position) <= CLOSED_THRESHOLD
    if name == "held":
        return world.gripper.held == arg["a"]
    if name == "not_held":
        return world.gripper.held != arg["a"]
    if name == "on_table":
        obj = world.objects.get(arg["a"])
        if obj is None:
            raise UnknownPredicateError(f"unknown object in predicate {pred}")
        if world.gripper.held == arg["a"]:
            return False
        lo, _hi = _aabb(obj.pose, obj.dims)
        if abs(lo[2] - world.table_height) > ON_TOLERANCE:
            return False
        for other_label, other in world.objects.items():
            if other.container and other_label != arg["a"]:
                olo, ohi = _aabb(other.pose, other.dims)
                if olo[0] <= obj.pose[0] <= ohi[0] and olo[1] <= obj.pose[1] <= ohi[1]:
                    return False
        return True
    if name == "tilted":
        obj = world.objects.get(arg["a"])
        if obj is None:
            raise UnknownPredicateError(f"unknown object in predicate {pred}")
        tilt = max(abs(obj.pose[3]), abs(obj.pose[4]))
        return tilt >= float(arg.get("min_abs", 1.5))
    if name == "near":
        obj = world.objects.get(arg["a"])
        if obj is None:
            raise UnknownPredicateError(f"unknown object in predicate {pred}")
        target = np.asarray(arg["pos"], dtype=float)
        tol = float(arg.get("tol", 0.05))
        return float(np.linalg.norm(np.array(obj.pose[:3]) - target)) <= tol
    raise UnknownPredicateError(f"unknown predicate {name!r}")


# ---------------------------------------------------------------------------
# Task specs


@dataclass
class SubtaskSpec:
    name: str
    action: str
    objects: tuple
    goal: dict


@dataclass
class TeacherTrigger:
    when: dict  # {violation: kind} | {missing_call: skill} | {always: true}
    text: str
    subtask: Optional[str] = None
    max_fires: int = 1


@dataclass
class TaskSpec:
    name: str
    command: str
    category: str  # LH | CR | SR | TR
    table_height: float
    objects: list
    joints: list
    subtasks: list  # of SubtaskSpec
    goal: dict
    teacher: list  # of TeacherTrigger
    gripper_pose: Optional[tuple] = None

    def subtask(self, name: str) -> SubtaskSpec:
        for s in self.subtasks:
            if s.name == name:
                return s
        raise UnknownPredicateError(f"task {self.name!r} has no subtask named {name!r}")


def _full_pose(values) -> tuple:
    pose = tuple(float(v) for v in values)
    if len(pose) == 3:
        pose = pose + (0.0, 0.0, 0.0)
    if len(pose) != 6:
        raise SimError(f"pose must have 3 or 6 values, got {len(pose)}")
    return pose


def load_task(path) -> TaskSpec:
    data = yaml.safe_load(Path(path).read_text())
    objects = [
        ObjectBody(
            label=o["label"],
            cls=o.get("class", "object"),
            pose=_full_pose(o["pose"]),
            dims=tuple(float(v) for v in o["dims"]),
            graspable=bool(o.get("graspable", False)),
            container=bool(o.get("container", False)),
            interior_floor=float(o.get("interior_floor", 0.01)),
        )
        for o in data.get("objects", [])
    ]
    joints = [
        Joint(
            name=j["name"],
            type=j["type"],
            parent=j["parent"],
            handle=j["handle"],
            moving=tuple(j["moving"]),
            axis=tuple(float(v) for v in j["axis"]),
            anchor=tuple(float(v) for v in j["anchor"]),
            range=tuple(float(v) for v in j["range"]),
            position=float(j.get("position", 0.0)),
        )
        for j in data.get("joints", [])
    ]
    subtasks = [
        SubtaskSpec(
            name=s["name"],
            action=s["action"],
            objects=tuple(s.get("objects", [])),
            goal=s["goal"],
        )
        for s in data.get("subtasks", [])
    ]
    teacher = [
        TeacherTrigger(
            when=t["when"],
            text=t["text"],
            subtask=t.get("subtask"),
            max_fires=int(t.get("max_fires", 1)),
        )
        for t in data.get("teacher", [])
    ]
    return TaskSpec(
        name=data["name"],
        command=data.get("command", data["name"]),
        category=data.get("category", "SR"),
        table_height=float(data.get("table_height", 0.0)),
        objects=objects,
        joints=joints,
        subtasks=subtasks,
        goal=data["goal"],
        teacher=teacher,
        gripper_pose=(
            _full_pose(data["gripper_pose"]) if data.get("gripper_pose") else None
        ),
    )


def reset(spec: TaskSpec) -> World:
    """Fresh world in the task's exact initial state."""
    world = World(copy.deepcopy(spec.objects), copy.deepcopy(spec.joints), spec.table_height)
    if spec.gripper_pose is not None:
        world.gripper.pose = spec.gripper_pose
    return world


def check_success(spec: TaskSpec, world: World) -> bool:
    return eval_predicate(spec.goal, world)


def check_subtask(spec: TaskSpec, name: str, world: World) -> bool:
    return eval_predicate(spec.subtask(name).goal, world)


DEFAULT_TASK_DIR = Path(__file__).parent / "assets" / "tasks"


def list_tasks(task_dir=None) -> list:
    task_dir = Path(task_dir) if task_dir else DEFAULT_TASK_DIR
    return sorted(load_task(p).name for p in task_dir.glob("*.yaml"))


def find_task(name: str, task_dir=None) -> TaskSpec:
    task_dir = Path(task_dir) if task_dir else DEFAULT_TASK_DIR
    for p in sorted(task_dir.glob("*.yaml")):
        spec = load_task(p)
        if spec.name == name:
            return spec
    raise SimError(f"unknown task {name!r}; available: {list_tasks(task_dir)}")


# ---------------------------------------------------------------------------
# Scripted teacher


class ScriptedTeacher:
    """Deterministic stand-in for a human observer.  The first matching,
    un-exhausted trigger fires; counters persist across attempts."""

    def __init__(self, triggers: Sequence[TeacherTrigger]):
        self.triggers = list(triggers)
        self._fires = [0] * len(self.triggers)

    def wants_interrupt(self) -> bool:
        return False

    def verdict(self, subtask_name: str, computed_ok: bool) -> bool:
        return computed_ok

    def feedback(
        self,
        subtask_name: str,
        trace: Sequence[StepRecord],
        program: Optional[dsl.SkillProgram],
        subtask_ok: bool,
    ) -> Optional[str]:
        if subtask_ok:
            return None
        called = {c.name for c in program.calls} if program is not None else set()
        for i, trig in enumerate(self.triggers):
            if self._fires[i] >= trig.max_fires:
                continue
            if trig.subtask is not None and trig.subtask != subtask_name:
                continue
            if self._matches(trig.when, trace, called):
                self._fires[i] += 1
                return trig.text
        return None

    @staticmethod
    def _matches(when: dict, trace, called: set) -> bool:
        if "violation" in when:
            return any(r.violation == when["violation"] for r in trace)
        if "missing_call" in when:
            return when["missing_call"] not in called
        if "always" in when:
            return bool(when["always"])
        raise SimError(f"unknown teacher trigger condition {when}")
