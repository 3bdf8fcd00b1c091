# tests/test_agent.py
import math
import numpy as np
import pytest
from dataclasses import replace
from typing import Optional
from app.core.config import ConfigError
from app.core.schemas import AgentConfig, CameraConfig, Episode, PerceptionConfig, Prompt, RunConfig, WorldParams
from app.core.world import (
    HELD, ActionKind, AgentState, Rect, ReceptacleInstance, STOP, TURN_LEFT, Scene, Wall, render,
)
from app.core.perception import LabelMap, Perception, TaskClasses
from app.core.navigation import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, astar, back_project, follow_path
from app.core.agent import (
    FsmPhase, FsmState, GazeMemory, NavMemory, Observation, PlaceMemory, ReplaySkill, ScriptedGazeSkill,
    ScriptedNavSkill, ScriptedPlaceSkill, SkillContext, SkillOutcome, SkillStatus, build_skills, finish_skill,
    gaze_skill_action, high_level_step, load_replay, nav_skill_action, place_skill_action, run_skill,
)
from app.core.episode import EpisodeEnv, run_episode
from tests.helpers import box_room


STOPPED = SkillOutcome(SkillStatus.STOPPED, 1)


def _obs(scene, agent: AgentState) -> Observation:
    frame = render(scene, agent)
    return Observation(frame=frame, labels=LabelMap.from_image(frame.class_map), pose=agent.base,
                       holding=agent.gripper_holding is not None,
                       arm_extension=agent.arm_extension, arm_lift=agent.arm_lift)


"""--------------------高层状态机--------------------"""
def test_fsm_happy_path():
    s = FsmState()
    s = high_level_step(s, STOPPED, holding=False)
    assert s.phase == FsmPhase.GAZE
    s = high_level_step(s, STOPPED, holding=True)
    assert s.phase == FsmPhase.NAV_TO_REC
    s = high_level_step(s, STOPPED, holding=True)
    assert s.phase == FsmPhase.PLACE
    s = high_level_step(s, STOPPED, holding=False)
    assert s.phase == FsmPhase.DONE and s.retry_count == 0


def test_fsm_retries_navigation_after_failed_pick():
    s = high_level_step(FsmState(FsmPhase.GAZE), STOPPED, holding=False)
    assert s == FsmState(FsmPhase.NAV_TO_OBJ, retry_count=1)


def test_fsm_without_retry_loop_moves_on():
    s = high_level_step(FsmState(FsmPhase.GAZE), STOPPED, holding=False, retry_loop=False)
    assert s == FsmState(FsmPhase.NAV_TO_REC, retry_count=0)


@pytest.mark.parametrize("phase", [FsmPhase.NAV_TO_OBJ, FsmPhase.GAZE, FsmPhase.NAV_TO_REC, FsmPhase.PLACE])
def test_fsm_budget_exhaustion_ends_episode(phase):
    s = high_level_step(FsmState(phase, retry_count=2), STOPPED, holding=True, episode_budget_exhausted=True)
    assert s == FsmState(FsmPhase.DONE, retry_count=2)


@pytest.mark.parametrize("phase", [FsmPhase.NAV_TO_OBJ, FsmPhase.GAZE, FsmPhase.NAV_TO_REC, FsmPhase.PLACE])
@pytest.mark.parametrize("holding", [True, False])
def test_skill_budget_exhaustion_moves_on_like_stop(phase, holding):
    s = finish_skill(FsmState(phase, retry_count=1), SkillOutcome(SkillStatus.BUDGET_EXHAUSTED, 500), budget=500)
    assert s.steps_in_skill == 500
    exhausted = high_level_step(s, SkillOutcome(SkillStatus.BUDGET_EXHAUSTED, 500), holding=holding)
    stopped = high_level_step(s, SkillOutcome(SkillStatus.STOPPED, 12), holding=holding)
    assert exhausted == stopped
    assert exhausted.steps_in_skill == 0


def test_finish_skill_rejects_steps_over_budget():
    with pytest.raises(ValueError):
        finish_skill(FsmState(), SkillOutcome(SkillStatus.STOPPED, 51), budget=50)


def test_fsm_done_is_terminal():
    with pytest.raises(ValueError):
        high_level_step(FsmState(FsmPhase.DONE), STOPPED, holding=False)


def test_skill_outcome_needs_a_step():
    with pytest.raises(ValueError):
        SkillOutcome(SkillStatus.STOPPED, 0)


"""--------------------技能调度--------------------"""
class _CountingEnv:
    def __init__(self):
        self.applied = []

    def observe(self):
        return None

    def apply(self, action):
        self.applied.append(action)


def test_run_skill_counts_stop_as_a_step():
    skill = ReplaySkill([[{"kind": "Forward"}, {"kind": "TurnLeft"}]])
    skill.reset(None)
    env = _CountingEnv()
    outcome = run_skill(skill, env, budget=10)
    assert outcome == SkillOutcome(SkillStatus.STOPPED, 3)
    assert [a.kind for a in env.applied] == [ActionKind.FORWARD, ActionKind.TURN_LEFT, ActionKind.STOP]


def test_run_skill_budget_exhausted():
    skill = ReplaySkill([[{"kind": "Forward"}] * 5])
    skill.reset(None)
    outcome = run_skill(skill, _CountingEnv(), budget=3)
    assert outcome == SkillOutcome(SkillStatus.BUDGET_EXHAUSTED, 3)
    with pytest.raises(ValueError):
        run_skill(skill, _CountingEnv(), budget=0)


def test_replay_skill_advances_per_reset_and_stops_when_exhausted():
    skill = ReplaySkill([[{"kind": "Manip", "d_ext": 0.1}], []])
    skill.reset(None)
    first = skill.act(None)
    assert first.kind == ActionKind.MANIP and first.d_ext == pytest.approx(0.1)
    assert skill.act(None) == STOP
    skill.reset(None)
    assert skill.act(None) == STOP
    skill.reset(None)
    assert skill.act(None) == STOP


def test_load_replay_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_replay(tmp_path / "missing.json")


def test_build_skills_replay_mode_requires_a_source():
    with pytest.raises(ConfigError):
        build_skills(AgentConfig(skill_mode="replay"))
    skills = build_skills(AgentConfig(skill_mode="replay"), 4, replay={"4": {"Gaze": [[{"kind": "Snap"}]]}})
    assert set(skills) == {FsmPhase.NAV_TO_OBJ, FsmPhase.GAZE, FsmPhase.NAV_TO_REC, FsmPhase.PLACE}
    assert all(isinstance(s, ReplaySkill) for s in skills.values())


"""--------------------回合中的重试--------------------"""
def _replay_skills(k: int):
    return {
        FsmPhase.NAV_TO_OBJ: ReplaySkill([[]] * (k + 1)),
        FsmPhase.GAZE: ReplaySkill([[]] * k + [[{"kind": "Snap"}]]),
        FsmPhase.NAV_TO_REC: ReplaySkill([[]]),
        FsmPhase.PLACE: ReplaySkill([[]]),
    }


@pytest.mark.parametrize("k", [0, 1, 3])
def test_failed_picks_are_retried(adjacent_episode, gt_config, k):
    result, trace = run_episode(adjacent_episode, gt_config, skills=_replay_skills(k))
    assert trace.phases_entered.count("NavToObj") == k + 1
    assert trace.phases_entered.count("Gaze") == k + 1
    assert "Place" in trace.phases_entered
    assert result.retry_count == k
    assert result.steps_used == 2 * (k + 1) + 1 + 2


def test_without_retry_loop_a_failed_pick_is_final(adjacent_episode, gt_config):
    cfg = gt_config.model_copy(update={"agent": AgentConfig(retry_loop=False)})
    result, trace = run_episode(adjacent_episode, cfg, skills=_replay_skills(2))
    assert trace.phases_entered == ["NavToObj", "Gaze", "NavToRec", "Place"]
    assert not result.flags.pick
    assert result.retry_count == 0


def test_episode_budget_cuts_the_running_skill(adjacent_episode, gt_config):
    episode = adjacent_episode.model_copy(update={"step_budget": 3})
    skills = _replay_skills(0)
    skills[FsmPhase.NAV_TO_OBJ] = ReplaySkill([[{"kind": "TurnLeft"}] * 10])
    result, trace = run_episode(episode, gt_config, skills=skills)
    assert result.steps_used == 3
    assert trace.phases_entered == ["NavToObj"]
    assert trace.checkpoints[-1].cut
    assert result.flags.as_tuple() == (False, False, False, False)
    assert result.failure_cause == "DidNotStartPlace"


def test_scripted_episode_is_deterministic(adjacent_episode, gt_config):
    a, _ = run_episode(adjacent_episode, gt_config, master_seed=3)
    b, _ = run_episode(adjacent_episode, gt_config, master_seed=3)
    assert a.model_dump() == b.model_dump()
    assert a.steps_used <= adjacent_episode.step_budget


"""--------------------技能策略--------------------"""
def test_gaze_snaps_when_close_and_aligned(room):
    memory = GazeMemory()
    obs = _obs(room, AgentState(2.5, 2.5, 0.0))
    assert gaze_skill_action(obs, memory, 30).kind == ActionKind.SNAP
    assert gaze_skill_action(obs, memory, 30) == STOP


def test_gaze_rotates_when_target_not_visible(room):
    action = gaze_skill_action(_obs(room, AgentState(2.5, 2.5, math.pi)), GazeMemory(), 30)
    assert action.kind == ActionKind.MANIP
    assert action.d_theta == pytest.approx(math.radians(15.0))


def test_nav_stops_next_to_visible_target(room):
    action = nav_skill_action(_obs(room, AgentState(2.5, 2.5, 0.0)), NavMemory(), 30)
    assert action == STOP


def test_nav_spins_first_when_target_unseen(room):
    memory = NavMemory()
    action = nav_skill_action(_obs(room, AgentState(2.5, 2.5, math.pi)), memory, 30)
    assert action == TURN_LEFT
    assert memory.grid is not None and memory.spin_left == memory.spin_turns - 1


def test_place_stops_when_nothing_is_held(room):
    assert place_skill_action(_obs(room, AgentState(2.5, 2.5, 0.0)), PlaceMemory(goal_receptacle=10)) == STOP


def test_place_turns_toward_goal_surface_first(room):
    # 桌子在右后方
    agent = AgentState(2.3, 3.5, -0.9, gripper_holding=3)
    room.object(3).resting_on = HELD
    action = place_skill_action(_obs(room, agent), PlaceMemory(goal_receptacle=10))
    assert action.kind == ActionKind.MANIP
    assert action.d_theta != 0.0 and action.d_base == 0.0


"""--------------------栅格与A*--------------------"""
def test_astar_open_grid_takes_diagonal():
    passable = np.ones((10, 10), dtype=bool)
    path = astar(passable, (0, 0), lambda c: c == (9, 9), lambda c: 0.0)
    assert path[0] == (0, 0) and path[-1] == (9, 9)
    assert len(path) == 10


def test_astar_detours_around_wall_and_reports_unreachable():
    passable = np.ones((7, 7), dtype=bool)
    passable[3, :6] = False
    path = astar(passable, (0, 0), lambda c: c == (6, 0), lambda c: 0.0)
    assert path is not None and all(passable[c] for c in path)
    assert any(c[1] == 6 for c in path)
    passable[3, 6] = False
    assert astar(passable, (0, 0), lambda c: c == (6, 0), lambda c: 0.0) is None


def test_astar_does_not_cut_corners():
    passable = np.ones((3, 3), dtype=bool)
    passable[1, 0] = passable[0, 1] = False
    assert astar(passable, (0, 0), lambda c: c == (1, 1), lambda c: 0.0) is None


def test_grid_keeps_occupied_cells():
    grid = OccupancyGrid((0.0, 0.0), size=4.0, resolution=0.5)
    assert grid.n == 8
    assert grid.to_cell(0.1, 0.1) == (4, 4)
    assert grid.to_world((4, 4)) == pytest.approx((0.25, 0.25))
    grid.mark_occupied(np.array([0.1]), np.array([0.1]))
    grid.mark_free(np.array([0.1, 0.6]), np.array([0.1, 0.1]))
    assert grid.cells[4, 4] == OCCUPIED and grid.cells[5, 4] == FREE
    assert grid.cells[0, 0] == UNKNOWN
    assert not grid.passable(0.5)[5, 5]


def test_frontier_borders_unknown_space():
    grid = OccupancyGrid((0.0, 0.0), size=2.0, resolution=0.5)
    grid.cells[:2, :] = FREE
    frontier = grid.frontier()
    assert frontier[1].all() and not frontier[0].any()


def test_back_project_recovers_wall_position():
    scene = box_room()
    scene.receptacles, scene.objects = [], []
    cam = CameraConfig()
    frame = render(scene, AgentState(4.95, 3.0, 0.0), cam)
    X, _, Z = back_project(frame.depth_map, (4.95, 3.0, 0.0), cam)
    assert X[32, 64] == pytest.approx(5.95, abs=0.02)
    assert 0.0 < Z[32, 64] < 2.5


def test_follow_path_returns_none_at_the_end():
    grid = OccupancyGrid((0.0, 0.0), size=4.0, resolution=0.5)
    here = grid.to_cell(0.1, 0.1)
    assert follow_path(grid, [here], (0.1, 0.1, 0.0)) == (None, 0.0)
    waypoint, err = follow_path(grid, [here, (here[0] + 1, here[1])], (0.1, 0.1, 0.0))
    assert waypoint == pytest.approx((0.75, 0.25)) and abs(err) < math.radians(30)


"""--------------------闭环技能--------------------"""
class _SkillEnv(EpisodeEnv):
    """回合环境, 额外记下Release时夹爪的位置"""
    gripper_at_release = None

    def apply(self, action):
        if action.kind == ActionKind.RELEASE:
            self.gripper_at_release = self.agent.gripper_position(self.cfg.world)
        super().apply(action)


def _skill_env(scene: Scene, start, prompt: Prompt, holding: Optional[int] = None) -> _SkillEnv:
    if holding is not None:
        scene.object(holding).resting_on = HELD
    episode = Episode(episode_id=0, scene_seed=0, prompt=prompt, agent_start=start, step_budget=500)
    cfg = RunConfig(perception=PerceptionConfig(mode="ground_truth"))
    rng = np.random.default_rng(0)
    env = _SkillEnv(scene, episode, cfg, Perception(cfg.perception, TaskClasses.from_prompt(prompt), rng, rng), rng)
    env.agent = replace(env.agent, gripper_holding=holding)
    return env


def _run(skill, env: _SkillEnv, phase: FsmPhase, target_class: int, budget: int = 500):
    env.phase = phase
    skill.reset(SkillContext(phase, target_class, env.cfg.camera, env.cfg.world, env.cfg.agent))
    return run_skill(skill, env, budget)


@pytest.mark.parametrize("theta", [0.0, 0.35, -0.35])
def test_gaze_skill_picks_object_half_a_meter_ahead(room, theta):
    env = _skill_env(room, (2.7, 2.5, theta), Prompt(object=30, start_receptacle=10, goal_receptacle=14))
    outcome = _run(ScriptedGazeSkill(), env, FsmPhase.GAZE, 30)
    assert outcome.status == SkillStatus.STOPPED
    kinds = [s.action["kind"] for s in env.trace.steps]
    assert kinds[-2:] == ["Snap", "Stop"]
    assert env.agent.gripper_holding == 3
    assert room.object(3).resting_on == HELD


def test_place_skill_releases_over_the_table_from_a_low_height(room):
    env = _skill_env(room, (2.3, 2.5, 0.0), Prompt(object=30, start_receptacle=14, goal_receptacle=10), holding=3)
    outcome = _run(ScriptedPlaceSkill(), env, FsmPhase.PLACE, 10)
    assert outcome.status == SkillStatus.STOPPED
    assert env.trace.released
    gx, gy, _ = env.gripper_at_release
    assert room.receptacle(1).footprint.contains(gx, gy)
    assert env.outcome.drop_height <= 0.1
    assert env.outcome.impact_class == 10 and env.outcome.stable
    assert env.trace.placement.on_goal_receptacle


def test_place_target_stays_fixed_once_aligned(room):
    env = _skill_env(room, (2.3, 2.5, 0.0), Prompt(object=30, start_receptacle=14, goal_receptacle=10), holding=3)
    skill = ScriptedPlaceSkill()
    env.phase = FsmPhase.PLACE
    skill.reset(SkillContext(FsmPhase.PLACE, 10, env.cfg.camera, env.cfg.world, env.cfg.agent))
    targets = []
    for _ in range(60):
        action = skill.act(env.observe())
        env.apply(action)
        if skill.memory.stage not in ("locate", "align"):
            targets.append(skill.memory.target)
        if action == STOP:
            break
    assert targets and all(t == targets[0] for t in targets)


def _maze_room(seed: int) -> Scene:
    """8x6的房间: 一条低矮长沙发把房间隔开, 只在一端留出通道; 架子在沙发另一侧, 越过沙发可以看见"""
    rng = np.random.default_rng(seed)
    t = 0.1
    walls = [Wall(0.0, 0.0, 8.0, 0.0, t), Wall(0.0, 6.0, 8.0, 6.0, t),
             Wall(0.0, 0.0, 0.0, 6.0, t), Wall(8.0, 0.0, 8.0, 6.0, t)]
    barrier = Rect(3.0, 1.4, 3.5, 5.95) if rng.integers(2) == 0 else Rect(3.0, 0.05, 3.5, 4.6)
    y0 = float(rng.uniform(1.5, 3.5))
    receptacles = [
        ReceptacleInstance(id=1, class_id=16, footprint=barrier, surface_height=0.4),
        ReceptacleInstance(id=2, class_id=14, footprint=Rect(6.8, y0, 7.4, y0 + 1.0), surface_height=1.1),
    ]
    return Scene(bounds=Rect(0.0, 0.0, 8.0, 6.0), walls=walls, receptacles=receptacles, objects=[], rng_seed=seed)


def _optimal_steps(scene: Scene, start, goal: Rect, radius: float, params: WorldParams = WorldParams()) -> int:
    """真值栅格上的A*最短路径长度, 换算成前进步数"""
    grid = OccupancyGrid(scene.bounds.center, size=max(scene.bounds.width, scene.bounds.depth) + 1.0, resolution=0.1)
    boxes = [w.box for w in scene.walls] + [r.footprint for r in scene.receptacles]
    for i in range(grid.n):
        for j in range(grid.n):
            if any(b.contains(*grid.to_world((i, j))) for b in boxes):
                grid.cells[i, j] = OCCUPIED
    path = astar(grid.passable(params.agent_radius), grid.to_cell(start[0], start[1]),
                 is_goal=lambda c: goal.distance(*grid.to_world(c)) <= radius, heuristic=lambda c: 0.0)
    length = sum(math.dist(a, b) for a, b in zip(path, path[1:])) * grid.resolution
    return math.ceil(length / params.forward_step)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_nav_skill_on_seeded_maze_is_within_twice_the_optimal_path(seed):
    scene = _maze_room(seed)
    shelf = scene.receptacle(2).footprint
    start = (0.6, 3.0, 0.0)
    optimal = _optimal_steps(scene, start, shelf, radius=1.0)
    env = _skill_env(scene, start, Prompt(object=30, start_receptacle=16, goal_receptacle=14))
    outcome = _run(ScriptedNavSkill(), env, FsmPhase.NAV_TO_REC, 14, budget=2 * optimal)
    assert outcome.status == SkillStatus.STOPPED
    assert shelf.distance(env.agent.x, env.agent.y) <= 1.0
