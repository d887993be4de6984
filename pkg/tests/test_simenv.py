"""Kinematic world: SE(3) helpers, collision sweeps, joints, predicates."""

import math

import numpy as np
import pytest

from memo import dsl, simenv
from memo.simenv import (
    GRASP_TOLERANCE,
    Joint,
    ObjectBody,
    SceneGraph,
    World,
    eval_predicate,
    rotation_matrix,
    rpy_from_matrix,
)


def body(label, pose, dims, **kw):
    return ObjectBody(label=label, cls=kw.pop("cls", "object"), pose=pose, dims=dims, **kw)


def test_rotation_matrix_matches_manual_composition():
    # oracle: R = Rz @ Ry @ Rx built from first principles
    r, p, y = 0.3, -0.7, 1.1
    cz, sz = math.cos(y), math.sin(y)
    cy, sy = math.cos(p), math.sin(p)
    cx, sx = math.cos(r), math.sin(r)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    assert np.allclose(rotation_matrix(r, p, y), rz @ ry @ rx)


def test_rpy_round_trip():
    for rpy in [(0.3, -0.7, 1.1), (0.0, 0.0, 0.0), (-1.2, 0.4, 2.9)]:
        back = rpy_from_matrix(rotation_matrix(*rpy))
        assert np.allclose(back, rpy, atol=1e-9)


def test_aabb_of_rotated_box():
    # a 0.2x0.02x0.2 slab yawed 90 degrees swaps x/y extents
    from memo.simenv import _aabb

    lo, hi = _aabb((0, 0, 0, 0, 0, math.pi / 2), (0.2, 0.02, 0.2))
    assert hi[0] - lo[0] == pytest.approx(0.02, abs=1e-9)
    assert hi[1] - lo[1] == pytest.approx(0.2, abs=1e-9)


def test_move_below_table_is_violation_and_leaves_world_unchanged():
    w = World([], [])
    before = w.serialize()
    out = w.step_skill(dsl.parse("move_to(pose(0.1,0.1,-0.05,0.0,0.0,0.0))").calls[0])
    assert not out.ok
    assert out.violation == "table_collision"
    assert w.serialize() == before


def test_path_blocked_by_object():
    wall = body("wall", (0.5, 0.0, 0.25, 0.0, 0.0, 0.0), (0.05, 1.0, 0.5))
    w = World([wall], [])
    out = w.step_skill(dsl.parse("move_to(pose(1.0,0.0,0.2,0.0,0.0,0.0))").calls[0])
    assert out.violation == "object_collision"
    assert "wall" in out.detail


def test_destination_inside_target_does_not_block():
    box = body("box", (0.5, 0.0, 0.1, 0.0, 0.0, 0.0), (0.2, 0.2, 0.2))
    w = World([box], [])
    out = w.step_skill(dsl.parse("move_to(pose(0.5,0.0,0.1,0.0,0.0,0.0))").calls[0])
    assert out.ok


def test_leaving_contact_does_not_block():
    box = body("box", (0.5, 0.0, 0.1, 0.0, 0.0, 0.0), (0.2, 0.2, 0.2))
    w = World([box], [])
    assert w.step_skill(dsl.parse("move_to(pose(0.5,0.0,0.1,0.0,0.0,0.0))").calls[0]).ok
    out = w.step_skill(dsl.parse("move_to(pose(0.5,0.0,0.5,0.0,0.0,0.0))").calls[0])
    assert out.ok


def test_grasp_tolerance_boundary():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    w = World([cup], [])
    w.gripper.pose = (0.3, 0.0, 0.05 + GRASP_TOLERANCE + 0.001, 0.0, 0.0, 0.0)
    out = w.step_skill(dsl.parse('grasp("cup")').calls[0])
    assert out.violation == "grasp_out_of_reach"
    w.gripper.pose = (0.3, 0.0, 0.05 + GRASP_TOLERANCE - 0.001, 0.0, 0.0, 0.0)
    assert w.step_skill(dsl.parse('grasp("cup")').calls[0]).ok
    assert w.gripper.held == "cup"


def test_grasp_non_graspable_rejected():
    slab = body("slab", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.5, 0.5, 0.1))
    w = World([slab], [])
    w.gripper.pose = (0.3, 0.0, 0.05, 0.0, 0.0, 0.0)
    assert w.step_skill(dsl.parse('grasp("slab")').calls[0]).violation == "grasp_out_of_reach"


def test_held_object_tracks_gripper_and_settles_on_release():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    block = body("block", (0.6, 0.2, 0.1, 0.0, 0.0, 0.0), (0.3, 0.3, 0.2))
    w = World([cup, block], [])
    for text in [
        "move_to(pose(0.3,0.0,0.05,0.0,0.0,0.0))",
        'grasp("cup")',
        "move_to(pose(0.6,0.2,0.5,0.0,0.0,0.0))",
    ]:
        assert w.step_skill(dsl.parse(text).calls[0]).ok
    assert w.objects["cup"].pose[:3] == (0.6, 0.2, 0.5)
    assert w.step_skill(dsl.parse("release()").calls[0]).ok
    # settles onto the block top (z = 0.2) plus half its own height
    assert w.objects["cup"].pose[2] == pytest.approx(0.25)
    assert eval_predicate({"on": {"a": "cup", "b": "block"}}, w)


def test_release_into_container_rests_on_interior_floor():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    bin_ = body("bin", (0.7, 0.0, 0.15, 0.0, 0.0, 0.0), (0.3, 0.3, 0.3),
                container=True, interior_floor=0.02)
    w = World([cup, bin_], [])
    for text in [
        "move_to(pose(0.3,0.0,0.05,0.0,0.0,0.0))",
        'grasp("cup")',
        "move_to(pose(0.3,0.0,0.6,0.0,0.0,0.0))",
        "move_to(pose(0.7,0.0,0.6,0.0,0.0,0.0))",
        "move_to(pose(0.7,0.0,0.25,0.0,0.0,0.0))",
        "release()",
    ]:
        assert w.step_skill(dsl.parse(text).calls[0]).ok, text
    assert w.objects["cup"].pose[2] == pytest.approx(0.07)  # floor 0.02 + half 0.05
    assert eval_predicate({"inside": {"a": "cup", "b": "bin"}}, w)


def test_set_yaw_rotates_held_object():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    w = World([cup], [])
    w.gripper.pose = (0.3, 0.0, 0.05, 0.0, 0.0, 0.0)
    assert w.step_skill(dsl.parse('grasp("cup")').calls[0]).ok
    assert w.step_skill(dsl.parse("set_yaw(1.5)").calls[0]).ok
    assert w.objects["cup"].pose[5] == pytest.approx(1.5)


def hinge_world():
    door = body("door", (0.5, 0.0, 0.2, 0.0, 0.0, 0.0), (0.3, 0.02, 0.4), cls="door")
    handle = body("handle", (0.36, -0.03, 0.35, 0.0, 0.0, 0.0), (0.03, 0.03, 0.06),
                  cls="handle", graspable=True)
    joint = Joint(
        name="door joint", type="hinge", parent="door", handle="handle",
        moving=("door", "handle"), axis=(0.0, 0.0, 1.0), anchor=(0.65, 0.0, 0.2),
        range=(0.0, 1.6),
    )
    return World([door, handle], [joint])


def test_rotate_joint_requires_holding_the_handle():
    w = hinge_world()
    out = w.step_skill(dsl.parse('rotate_joint("handle", 1.0)').calls[0])
    assert out.violation == "nothing_held"


def test_rotate_joint_respects_limits():
    w = hinge_world()
    w.gripper.pose = w.objects["handle"].pose
    assert w.step_skill(dsl.parse('grasp("handle")').calls[0]).ok
    out = w.step_skill(dsl.parse('rotate_joint("handle", 2.5)').calls[0])
    assert out.violation == "joint_limit"
    assert w.joints[0].position == 0.0  # violation left the joint unchanged


def test_rotate_joint_moves_handle_and_gripper_together():
    w = hinge_world()
    w.gripper.pose = w.objects["handle"].pose
    assert w.step_skill(dsl.parse('grasp("handle")').calls[0]).ok
    assert w.step_skill(dsl.parse('rotate_joint("handle", 1.2)').calls[0]).ok
    assert w.joints[0].position == pytest.approx(1.2)
    assert w.gripper.pose[:3] == pytest.approx(w.objects["handle"].pose[:3])
    assert eval_predicate({"joint_open": {"joint": "door joint"}}, w)
    # releasing a joint-mounted handle must not drop it to the table
    handle_pose = w.objects["handle"].pose
    assert w.step_skill(dsl.parse("release()").calls[0]).ok
    assert w.objects["handle"].pose == handle_pose


def test_checkpoint_restore_round_trip():
    w = hinge_world()
    cp = w.checkpoint()
    before = w.serialize()
    w.gripper.pose = w.objects["handle"].pose
    w.step_skill(dsl.parse('grasp("handle")').calls[0])
    w.step_skill(dsl.parse('rotate_joint("handle", 1.2)').calls[0])
    assert w.serialize() != before
    w.restore(cp)
    assert w.serialize() == before


def test_run_program_aborts_after_violation():
    wall = body("wall", (0.5, 0.0, 0.25, 0.0, 0.0, 0.0), (0.05, 1.0, 0.5))
    w = World([wall], [])
    prog = dsl.parse(
        "move_to(pose(1.0,0.0,0.2,0.0,0.0,0.0));\nmove_to(pose(0.1,0.0,0.2,0.0,0.0,0.0))"
    )
    trace = w.run_program(prog)
    assert len(trace) == 1
    assert not trace[0].ok


def test_execution_is_deterministic():
    results = []
    for _ in range(2):
        spec = simenv.find_task("make toast")
        w = simenv.reset(spec)
        w.run_program(dsl.parse(
            'move_to(pose(0.55,0.06,0.31,0.0,0.0,0.0));\ngrasp("toaster handle");\n'
            'rotate_joint("toaster handle", 1.2);\nrelease()'
        ))
        results.append(w.serialize())
    assert results[0] == results[1]


def test_predicates_on_table_and_held_and_near():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    w = World([cup], [])
    assert eval_predicate({"on_table": {"a": "cup"}}, w)
    assert eval_predicate({"not_held": {"a": "cup"}}, w)
    assert eval_predicate({"near": {"a": "cup", "pos": [0.3, 0.0, 0.05]}}, w)
    w.gripper.pose = (0.3, 0.0, 0.05, 0.0, 0.0, 0.0)
    w.step_skill(dsl.parse('grasp("cup")').calls[0])
    assert eval_predicate({"held": {"a": "cup"}}, w)
    assert not eval_predicate({"on_table": {"a": "cup"}}, w)


def test_tilted_predicate():
    can = body("can", (0.3, 0.0, 0.06, 2.0, 0.0, 0.0), (0.06, 0.06, 0.12))
    w = World([can], [])
    assert eval_predicate({"tilted": {"a": "can"}}, w)
    assert not eval_predicate({"tilted": {"a": "can", "min_abs": 2.5}}, w)


def test_unknown_predicate_raises():
    w = World([], [])
    with pytest.raises(simenv.UnknownPredicateError):
        eval_predicate({"levitating": {"a": "x"}}, w)
    with pytest.raises(simenv.UnknownPredicateError):
        eval_predicate({"on": {"a": "ghost", "b": "ghost"}}, w)


def test_scene_graph_is_a_snapshot():
    cup = body("cup", (0.3, 0.0, 0.05, 0.0, 0.0, 0.0), (0.06, 0.06, 0.1), graspable=True)
    w = World([cup], [])
    scene = SceneGraph(w)
    before = scene.pose_of("cup")
    w.gripper.pose = (0.3, 0.0, 0.05, 0.0, 0.0, 0.0)
    w.step_skill(dsl.parse('grasp("cup")').calls[0])
    w.step_skill(dsl.parse("move_to(pose(0.6,0.3,0.4,0.0,0.0,0.0))").calls[0])
    assert scene.pose_of("cup") == before


def test_scene_graph_relations_and_digest():
    spec = simenv.find_task("make toast")
    w = simenv.reset(spec)
    scene = w.scene_graph()
    rendered = scene.render()
    assert '"toaster door"' in rendered
    assert "is closed" in scene.digest()
    assert scene.digest() == w.scene_graph().digest()


def test_find_task_unknown_name_lists_tasks():
    with pytest.raises(simenv.SimError) as err:
        simenv.find_task("no such task")
    assert "make toast" in str(err.value)


def test_scripted_teacher_fires_on_missing_call_with_cap():
    spec = simenv.find_task("make toast")
    teacher = simenv.ScriptedTeacher(spec.teacher)
    prog = dsl.parse("move_to(pose(0.55,0.06,0.31,0.0,0.0,0.0))")
    text = teacher.feedback("open the toaster door", [], prog, False)
    assert "rotate the door open" in text
    assert teacher.feedback("open the toaster door", [], prog, False) is not None
    assert teacher.feedback("open the toaster door", [], prog, False) is None  # max_fires=2
    # a program that does rotate the joint does not trigger it
    teacher2 = simenv.ScriptedTeacher(spec.teacher)
    good = dsl.parse('rotate_joint("toaster handle", 1.2)')
    assert teacher2.feedback("open the toaster door", [], good, False) is None
