import numpy as np
import pytest

from humi.geom import Pose, PoseTrajectory, rotation_error
from humi.ik import (
    IkTargets,
    IkTaskWeights,
    scale_pelvis_height,
    scale_pelvis_height_trajectory,
    solve,
    solve_step,
    solve_trajectory,
)
from humi.robot import (
    JointState,
    collision_distances,
    forward_kinematics,
    joint_limit_violations,
    load_model,
    toy_humanoid,
)

from test_robot import SINGLE_Z


@pytest.fixture(scope="module")
def model():
    return toy_humanoid()


def feasible_random_state(model, rng, margin=0.03):
    """Random in-limit, collision-clear state (rejection sampled)."""
    lo, hi = model.limits_arrays()
    while True:
        q = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo))
        state = JointState(Pose(rng.normal(size=3) * 0.2, np.array([1.0, 0, 0, 0])), q)
        if all(c >= margin for _, c in collision_distances(model, state)):
            return state


class TestScalePelvisHeight:
    def base_targets(self):
        return IkTargets(
            {
                "pelvis": Pose(np.array([0.1, -0.2, 0.95]), np.array([0.9, 0.1, 0.3, 0.2])),
                "left_gripper": Pose(np.array([0.4, 0.3, 0.8]), np.array([1.0, 0, 0, 0])),
            }
        )

    def test_unit_ratio_identity(self):
        targets = self.base_targets()
        out = scale_pelvis_height(targets, 1.7, 1.7)
        np.testing.assert_array_equal(out.targets["pelvis"].translation, targets.targets["pelvis"].translation)

    def test_paper_ratio(self):
        out = scale_pelvis_height(self.base_targets(), 1.75, 1.30)
        assert out.targets["pelvis"].translation[2] == pytest.approx(0.95 * 130 / 175, abs=1e-12)
        # x, y and rotation untouched
        np.testing.assert_array_equal(out.targets["pelvis"].translation[:2], [0.1, -0.2])

    def test_gripper_bit_identical(self):
        targets = self.base_targets()
        out = scale_pelvis_height(targets, 1.75, 1.30)
        assert out.targets["left_gripper"] is targets.targets["left_gripper"]

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale_pelvis_height(self.base_targets(), 0.0, 1.3)
        with pytest.raises(ValueError):
            scale_pelvis_height(self.base_targets(), 1.7, -1.0)

    def test_linear_in_pelvis_z(self):
        targets = self.base_targets()
        z1 = scale_pelvis_height(targets, 2.0, 1.0).targets["pelvis"].translation[2]
        z2 = scale_pelvis_height(targets, 4.0, 1.0).targets["pelvis"].translation[2]
        assert z1 == pytest.approx(2 * z2, abs=1e-12)

    def test_trajectory_variant(self):
        times = [0.0, 1.0]
        poses = [Pose(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0, 0, 0]))] * 2
        traj = PoseTrajectory.from_samples("pelvis", zip(times, poses))
        out = scale_pelvis_height_trajectory(traj, 2.0, 1.0)
        np.testing.assert_allclose(out.translations[:, 2], 0.5)


class TestSolveStep:
    def test_zero_residual_zero_step(self, model):
        state = model.zero_state()
        fk = forward_kinematics(model, state)
        targets = IkTargets(dict(fk), rest_posture=model.zero_state())
        out = solve_step(model, state, targets, IkTaskWeights(posture=0.0, collision=0.0))
        assert np.max(np.abs(out.q - state.q)) < 1e-12
        assert np.linalg.norm(out.base_pose.translation - state.base_pose.translation) < 1e-12

    def test_huge_damping_freezes(self, model):
        state = model.zero_state()
        targets = IkTargets(
            {"left_gripper": Pose(np.array([0.5, 0.3, 0.2]), np.array([1.0, 0, 0, 0]))},
            rest_posture=model.zero_state(),
        )
        out = solve_step(model, state, targets, IkTaskWeights(damping=1e12))
        assert np.max(np.abs(out.q - state.q)) < 1e-10

    def test_matches_scalar_dls_closed_form(self):
        single = load_model(SINGLE_Z)
        damping = 1e-3
        weights = IkTaskWeights(
            position=1.0, rotation=0.0, posture=0.0, collision=0.0,
            damping=damping, lock_base=True,
        )
        angle = 0.1
        target = forward_kinematics(single, JointState(Pose.identity(), [angle]))["tip"]
        state = single.zero_state()
        out = solve_step(single, state, IkTargets({"tip": target}, rest_posture=single.zero_state()), weights)
        # J = (0,1,0), r = (cos a - 1, sin a, 0) -> dq = sin(a)/(1 + damping)
        expected = np.sin(angle) / (1.0 + damping)
        assert out.q[0] == pytest.approx(expected, abs=1e-12)


class TestSolve:
    def test_reachable_targets_converge(self, model):
        rng = np.random.default_rng(42)
        for _ in range(5):
            goal = feasible_random_state(model, rng)
            targets = IkTargets(dict(forward_kinematics(model, goal)))
            q0 = JointState(
                Pose(goal.base_pose.translation + rng.normal(size=3) * 0.05, goal.base_pose.rotation),
                goal.q + rng.uniform(-0.2, 0.2, size=model.joint_count),
            )
            sol = solve(model, q0, targets, IkTaskWeights())
            assert sol.converged, f"residuals {sol.residuals}"
            assert max(p for p, _ in sol.residuals.values()) < 1e-3
            assert max(r for _, r in sol.residuals.values()) < 1e-2

    def test_converged_respects_limits_and_collisions(self, model):
        rng = np.random.default_rng(7)
        goal = feasible_random_state(model, rng)
        targets = IkTargets(dict(forward_kinematics(model, goal)))
        sol = solve(model, goal, targets, IkTaskWeights())
        assert sol.converged
        assert joint_limit_violations(model, sol.state) == []
        assert all(c >= 0 for _, c in collision_distances(model, sol.state))

    def test_out_of_reach_reported_not_thrown(self, model):
        # feet pinned in place, pelvis commanded 10 m underground: the legs
        # fold until the knees/hips saturate and the rest is reported as
        # residual, never raised
        fk0 = forward_kinematics(model, model.zero_state())
        targets = IkTargets(
            {
                "pelvis": Pose(np.array([0.0, 0.0, -10.0]), np.array([1.0, 0, 0, 0])),
                "left_foot": fk0["left_foot"],
                "right_foot": fk0["right_foot"],
            }
        )
        sol = solve(model, model.zero_state(), targets, IkTaskWeights(), max_iters=80)
        assert not sol.converged
        assert sol.limit_flags  # folded legs saturate
        pos_residual = sol.residuals["pelvis"][0]
        assert pos_residual < 10.0  # bounded, not exploding

    def test_single_iteration_budget(self, model):
        targets = IkTargets({"pelvis": Pose(np.array([0.0, 0.0, 0.1]), np.array([1.0, 0, 0, 0]))})
        sol = solve(model, model.zero_state(), targets, IkTaskWeights(), tol=(10.0, 10.0), max_iters=1)
        assert sol.iterations == 1
        assert sol.converged

    def test_posture_weight_pulls_toward_rest(self):
        single = load_model(SINGLE_Z)
        target = forward_kinematics(single, JointState(Pose.identity(), [0.8]))["tip"]
        targets = IkTargets({"tip": target}, rest_posture=single.zero_state())
        finals = []
        for w_posture in [0.0, 0.2, 0.5, 1.0, 2.0]:
            weights = IkTaskWeights(
                position=1.0, rotation=0.0, posture=w_posture, collision=0.0, lock_base=True
            )
            state = single.zero_state()
            for _ in range(400):
                state = solve_step(single, state, targets, weights)
            finals.append(abs(float(state.q[0])))
        assert all(a > b for a, b in zip(finals, finals[1:])), finals


class TestSolveTrajectory:
    def fk_replay_trajectories(self, model, q_of_t, times):
        frames = {name: [] for name in model.keyframes}
        for t in times:
            fk = forward_kinematics(model, q_of_t(t))
            for name, pose in fk.items():
                frames[name].append((t, pose))
        return {
            name: PoseTrajectory.from_samples(name, samples, rate_hint=50.0)
            for name, samples in frames.items()
        }

    def test_static_targets_settle(self, model):
        state = model.zero_state()
        trajs = self.fk_replay_trajectories(model, lambda t: state, [0.0, 1.0])
        joint_traj, report = solve_trajectory(model, trajs, IkTaskWeights(), rate=50.0)
        assert len(joint_traj) == 51
        assert report.not_converged == []
        assert np.max(np.abs(joint_traj.q[1:] - joint_traj.q[1])) < 1e-9

    def test_feasible_fixture_clean_report(self, model):
        amp = 0.4
        left = model.joint_names().index("left_shoulder_pitch")
        right = model.joint_names().index("right_shoulder_pitch")

        def q_of_t(t):
            q = np.zeros(model.joint_count)
            q[left] = amp * np.sin(2 * np.pi * 0.5 * t)
            q[right] = -amp * np.sin(2 * np.pi * 0.5 * t)
            return JointState(Pose.identity(), q)

        times = np.linspace(0.0, 2.0, 101)
        trajs = self.fk_replay_trajectories(model, q_of_t, times)
        joint_traj, report = solve_trajectory(model, trajs, IkTaskWeights(), rate=50.0)
        assert report.clean, report.to_dict()

    def test_warm_start_step_clamp(self, model):
        weights = IkTaskWeights(max_step=0.1)
        idx = model.joint_names().index("left_shoulder_pitch")

        def q_of_t(t):
            q = np.zeros(model.joint_count)
            q[idx] = 0.5 * np.sin(2 * np.pi * 0.25 * t)
            return JointState(Pose.identity(), q)

        times = np.linspace(0.0, 2.0, 101)
        trajs = self.fk_replay_trajectories(model, q_of_t, times)
        joint_traj, _ = solve_trajectory(model, trajs, weights, rate=50.0)
        dq = np.abs(np.diff(joint_traj.q, axis=0)).max(axis=1)
        assert np.all(dq <= weights.max_step + 1e-9)

    def test_out_of_reach_segment_flagged(self, model):
        pelvis = PoseTrajectory.from_samples(
            "pelvis",
            [(0.0, Pose.identity()), (2.0, Pose.identity())],
        )
        far = Pose(np.array([6.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
        near = forward_kinematics(model, model.zero_state())["left_gripper"]
        gripper = PoseTrajectory.from_samples(
            "left_gripper", [(0.0, near), (0.9, near), (1.1, far), (2.0, far)]
        )
        _, report = solve_trajectory(
            model,
            {"pelvis": pelvis, "left_gripper": gripper},
            IkTaskWeights(),
            rate=10.0,
            max_iters=40,
        )
        assert report.not_converged
        assert all(i >= 10 for i in report.not_converged)  # only the far segment

    def test_empty_overlap_rejected(self, model):
        a = PoseTrajectory.from_samples("pelvis", [(0.0, Pose.identity()), (1.0, Pose.identity())])
        b = PoseTrajectory.from_samples(
            "left_gripper", [(2.0, Pose.identity()), (3.0, Pose.identity())]
        )
        with pytest.raises(ValueError, match="common time span"):
            solve_trajectory(model, {"pelvis": a, "left_gripper": b}, IkTaskWeights(), rate=50.0)
