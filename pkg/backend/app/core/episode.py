# app/core/episode.py
import time
import logging
import numpy as np
from dataclasses import replace
from typing import Optional, Dict, Tuple
from .schemas import RunConfig, Episode, EpisodeResult, DetectorProfile
from .world import (
    AgentState, Action, EventKind, PlacementOutcome, Scene, generate_scene, render, step_world
)
from .perception import Perception, TaskClasses
from .rewards import RewardTracker, Transition, goal_distance, goal_view_fraction, placement_events
from .agent import (
    FsmPhase, FsmState, Observation, Skill, SkillContext, SkillStatus,
    build_skills, finish_skill, high_level_step, run_skill
)
from .evaluation import (
    EpisodeTrace, StepRecord, Checkpoint, PlacementSummary,
    check_nav_to_obj, check_pick, check_nav_to_rec, check_place,
    episode_flags, classify_place_failure,
)


logger = logging.getLogger(__name__)


def episode_seed(master_seed: int, episode_id: int) -> int:
    return master_seed ^ episode_id


def episode_rngs(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """每个回合独立的三条随机流: 世界(Snap失败注入)、任务专用检测器、开放词汇检测器"""
    world, taskspec, openvocab = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(world), np.random.default_rng(taskspec), np.random.default_rng(openvocab)


class EpisodeEnv:
    """一个回合的环境句柄: 执行动作、渲染画面、记录轨迹与放置阶段的奖励"""

    def __init__(
            self, scene: Scene, episode: Episode, cfg: RunConfig, perception: Perception,
            rng_world: np.random.Generator
    ):
        self.scene = scene
        self.episode = episode
        self.cfg = cfg
        self.perception = perception
        self.rng_world = rng_world
        x, y, theta = episode.agent_start
        self.agent = AgentState(x=x, y=y, theta=theta)
        self.budget = min(episode.step_budget, cfg.agent.episode_step_budget)
        self.steps = 0
        self.phase = FsmPhase.NAV_TO_OBJ
        self.outcome: Optional[PlacementOutcome] = None
        self.rewards = RewardTracker(cfg.reward)
        self.trace = EpisodeTrace(
            episode_id=episode.episode_id, goal_object=episode.prompt.object,
            goal_receptacle=episode.prompt.goal_receptacle,
        )
        self._refresh()

    @property
    def remaining(self) -> int:
        return self.budget - self.steps

    def _refresh(self):
        self.frame = render(self.scene, self.agent, self.cfg.camera)
        self.labels = self.perception(self.frame)

    def observe(self) -> Observation:
        return Observation(
            frame=self.frame, labels=self.labels, pose=self.agent.base,
            holding=self.agent.gripper_holding is not None,
            arm_extension=self.agent.arm_extension, arm_lift=self.agent.arm_lift,
        )

    def begin_place(self):
        """放置阶段开始: 记录游走锚点与初始目标距离"""
        self.agent = replace(self.agent, start_base=(self.agent.x, self.agent.y))
        goal = self.episode.prompt.goal_receptacle
        self.rewards.start(goal_distance(self.scene, self.agent, goal, self.cfg.world))

    def apply(self, action: Action) -> None:
        prev = self.agent
        self.agent, events = step_world(
            self.scene, prev, action, self.cfg.world, self.cfg.camera,
            rng=self.rng_world, snap_class=self.episode.prompt.object,
        )
        self.steps += 1
        self._refresh()

        sparse = shaped = 0.0
        if self.phase == FsmPhase.PLACE and self.rewards.started:
            sparse, shaped = self._place_rewards(prev, events)

        self.trace.steps.append(StepRecord(
            step=self.steps, phase=self.phase.value, action=action.to_dict(),
            events=[e.kind.value for e in events], blocked_fraction=self.frame.blocked_fraction,
            base=self.agent.base, sparse_reward=sparse, shaped_reward=shaped,
        ))

        for event in events:
            if event.kind == EventKind.RELEASED:
                self._record_release(event.outcome)

    def _place_rewards(self, prev: AgentState, events) -> Tuple[float, float]:
        goal = self.episode.prompt.goal_receptacle
        d = goal_distance(self.scene, self.agent, goal, self.cfg.world)
        p = goal_view_fraction(self.frame, goal)
        release = next((e.outcome for e in events if e.kind == EventKind.RELEASED), None)
        per_step = placement_events(release, self.scene, goal) if release else [frozenset()]

        sparse, shaped = self.rewards.step(Transition(prev, self.agent, d, p, self.frame.blocked_fraction, per_step[0]))
        # 释放后的稳定观察步只计奖励, 不占用步数预算
        for settle_events in per_step[1:]:
            s, r = self.rewards.step(Transition(self.agent, self.agent, d, p, self.frame.blocked_fraction, settle_events))
            sparse += s
            shaped += r
        return sparse, shaped

    def _record_release(self, outcome: PlacementOutcome):
        """是否命中目标家具按落地时接触的支撑面判断, 之后滚落属于放置不稳定"""
        self.outcome = outcome
        self.trace.released = True
        self.trace.placement = PlacementSummary(
            support_class=outcome.support_class,
            on_goal_receptacle=outcome.impact_class == self.episode.prompt.goal_receptacle,
            stable=outcome.stable, drop_height=outcome.drop_height,
        )


def _checkpoint(env: EpisodeEnv, phase: FsmPhase) -> bool:
    ep, agent, scene = env.episode, env.agent, env.scene
    radius = env.cfg.task.nav_success_radius
    if phase == FsmPhase.NAV_TO_OBJ:
        return check_nav_to_obj(agent, scene, ep, env.frame, radius)
    if phase == FsmPhase.GAZE:
        return check_pick(agent, scene, ep)
    if phase == FsmPhase.NAV_TO_REC:
        return check_nav_to_rec(agent, scene, ep, radius)
    return check_place(env.outcome, ep)


def _target_class(episode: Episode, phase: FsmPhase) -> int:
    if phase in (FsmPhase.NAV_TO_OBJ, FsmPhase.GAZE):
        return episode.prompt.object
    return episode.prompt.goal_receptacle


def run_episode(
        episode: Episode, cfg: RunConfig, master_seed: int = 0,
        profiles: Optional[Dict[str, DetectorProfile]] = None,
        skills: Optional[Dict[FsmPhase, Skill]] = None, replay: Optional[Dict] = None
) -> Tuple[EpisodeResult, EpisodeTrace]:
    """执行一个完整回合: 高层状态机依次调度四个技能, 结束后计算子任务标记与失败原因"""
    start = time.perf_counter()
    rng_world, rng_taskspec, rng_openvocab = episode_rngs(episode_seed(master_seed, episode.episode_id))
    scene = generate_scene(episode.scene_seed, cfg.scene, episode.prompt)
    perception = Perception(cfg.perception, TaskClasses.from_prompt(episode.prompt), rng_taskspec, rng_openvocab, profiles)
    env = EpisodeEnv(scene, episode, cfg, perception, rng_world)
    skills = skills or build_skills(cfg.agent, episode.episode_id, replay)

    state = FsmState()
    while state.phase != FsmPhase.DONE:
        if env.remaining <= 0:
            break
        env.phase = state.phase
        env.trace.phases_entered.append(state.phase.value)
        if state.phase == FsmPhase.PLACE:
            env.begin_place()
        skill = skills[state.phase]
        skill.reset(SkillContext(state.phase, _target_class(episode, state.phase), cfg.camera, cfg.world, cfg.agent))
        budget = min(cfg.agent.skill_step_budget, env.remaining)
        outcome = run_skill(skill, env, budget)
        state = finish_skill(state, outcome, budget)
        cut = env.remaining <= 0 and outcome.status == SkillStatus.BUDGET_EXHAUSTED
        env.trace.checkpoints.append(Checkpoint(state.phase.value, env.steps, _checkpoint(env, state.phase), cut))
        logger.debug(f"回合 {episode.episode_id}: {state.phase.value} 结束 ({outcome.status.value}, {outcome.steps_used} 步)")
        state = high_level_step(
            state, outcome, env.agent.gripper_holding is not None,
            retry_loop=cfg.agent.retry_loop, episode_budget_exhausted=env.remaining <= 0,
        )

    flags = episode_flags(env.trace)
    cause = classify_place_failure(env.trace, cfg.reward.block_fraction_threshold)
    result = EpisodeResult(
        episode_id=episode.episode_id, flags=flags, failure_cause=cause.value, steps_used=env.steps,
        sparse_reward=env.rewards.sparse_total, shaped_reward=env.rewards.shaped_total,
        retry_count=state.retry_count, wall_time=time.perf_counter() - start,
    )
    return result, env.trace
