import re

import numpy as np
import pytest

from gairl.envs import MOUNTAIN_CAR, EnvConfig, make_env
from gairl.imagination import (Imagination, ImaginationConfig,
                               RewardMlpSettings, StateGanSettings,
                               StateMlpSettings)
from gairl.memory import GairlMemory
from gairl.orchestrator import (GairlRun, PhaseSchedule, RunRecorder,
                                check_convergence, train_rainbow)
from gairl.rainbow import AgentConfig, RainbowAgent


def tiny_agent_config(**overrides) -> AgentConfig:
    defaults = dict(hidden_layers=(16, 16), batch_size=32, buffer_capacity=512,
                    epsilon_decay_start=50, epsilon_decay_steps=500,
                    target_sync_period=100)
    defaults.update(overrides)
    return AgentConfig(**defaults)


def tiny_imagination_config(**overrides) -> ImaginationConfig:
    defaults = dict(state_model_kind="mlp",
                    state_mlp=StateMlpSettings(hidden=(32, 32)),
                    state_gan=StateGanSettings(generator_hidden=(32, 32),
                                               critic_hidden=(32, 32)),
                    reward_mlp=RewardMlpSettings(hidden=(16, 16)),
                    batch_size=32, metric_every=100, rollout_step_cap=60)
    defaults.update(overrides)
    return ImaginationConfig(**defaults)


def build_session(seed=0, schedule=None, *, imagination=True, threshold=-1e9,
                  min_episodes=100, window=100, max_steps=80,
                  store_transitions=True, agent_config=None):
    streams = [np.random.default_rng(c)
               for c in np.random.SeedSequence(seed).spawn(5)]
    env = make_env(EnvConfig(MOUNTAIN_CAR, max_episode_steps=max_steps))
    agent = RainbowAgent(agent_config or tiny_agent_config(), 2, 2, streams[1])
    memory = GairlMemory(20_000, 2, streams[2])
    schedule = schedule or PhaseSchedule(rho1=300, rho2=150, rho3=200,
                                         max_iterations=2)
    im = None
    if imagination and not schedule.baseline:
        im = Imagination(tiny_imagination_config(), 2, 2, streams[3])
    return GairlRun(env=env, agent=agent, memory=memory, imagination=im,
                    schedule=schedule, convergence_threshold=threshold,
                    convergence_window=window,
                    convergence_min_episodes=min_episodes,
                    env_rng=streams[0], rollout_rng=streams[4],
                    imagination_rng=streams[3],
                    recorder=RunRecorder(),
                    store_transitions=store_transitions, variant="test",
                    seed=seed)


class TestConvergenceCheck:
    def test_needs_min_episodes(self):
        assert not check_convergence([0.0] * 99, threshold=-10.0)
        assert check_convergence([0.0] * 100, threshold=-10.0)

    def test_threshold_on_window_mean(self):
        returns = [-1000.0] * 100 + [-150.0] * 100
        assert check_convergence(returns, threshold=-200.0)
        assert not check_convergence(returns, threshold=-100.0)

    def test_window_excludes_old_episodes(self):
        returns = [-10_000.0] * 500 + [-100.0] * 100
        assert check_convergence(returns, threshold=-200.0)


class TestPhaseStructure:
    def test_full_loop_and_trace_grammar(self):
        session = build_session(seed=1)
        report = session.run()
        trace = " ".join(report.phase_trace)
        assert re.fullmatch(r"(mfp( itp ibp)?)( mfp( itp ibp)?)*", trace)
        assert report.phase_trace == ["mfp", "itp", "ibp", "mfp", "itp", "ibp"]
        assert not report.converged
        assert report.real_steps_to_convergence is None

    def test_real_step_accounting(self):
        session = build_session(seed=2)
        report = session.run()
        # ITP/IBP contribute nothing to the real-step counter
        assert report.total_real_steps == 2 * 300
        assert report.total_global_steps == 2 * (300 + 200)

    def test_memory_isolated_from_ibp(self):
        session = build_session(seed=3,
                                schedule=PhaseSchedule(rho1=250, rho2=100,
                                                       rho3=150,
                                                       max_iterations=1))
        sizes = []
        original_run_ibp = session.run_ibp

        def spying_ibp(budget):
            sizes.append(len(session.memory.train) + len(session.memory.test))
            out = original_run_ibp(budget)
            sizes.append(len(session.memory.train) + len(session.memory.test))
            return out

        session.run_ibp = spying_ibp
        session.run()
        assert sizes[0] == sizes[1]

    def test_memory_receives_mfp_transitions(self):
        session = build_session(seed=4)
        session.run()
        assert len(session.memory.train) + len(session.memory.test) >= 600

    def test_max_iterations_zero(self):
        session = build_session(seed=5, schedule=PhaseSchedule(
            rho1=100, rho2=50, rho3=50, max_iterations=0))
        report = session.run()
        assert not report.converged
        assert report.total_real_steps == 0
        assert report.phase_trace == []

    def test_baseline_schedule_skips_imagination(self):
        session = build_session(seed=6, schedule=PhaseSchedule(
            rho1=200, rho2=0, rho3=0, max_iterations=3))
        report = session.run()
        assert report.phase_trace == ["mfp", "mfp", "mfp"]
        assert report.total_real_steps == 600

    def test_early_convergence_skips_itp_ibp(self):
        # an always-true criterion converges inside the first MFP: the
        # imagination is never trained
        session = build_session(seed=7, threshold=-1e9, min_episodes=3,
                                window=3, max_steps=40)
        report = session.run()
        assert report.converged
        assert report.phase_trace == ["mfp"]
        assert session.imagination is not None
        assert not session.imagination.trained
        assert report.real_steps_to_convergence <= 300

    def test_partial_final_mfp_counts_steps_exactly(self):
        session = build_session(seed=8, threshold=-1e9, min_episodes=2,
                                window=2, max_steps=35)
        report = session.run()
        assert report.converged
        # convergence at the second episode boundary, inside the first MFP
        assert report.real_steps_to_convergence == report.total_real_steps
        assert report.real_steps_to_convergence < 300

    def test_imagined_episode_rows_logged(self):
        session = build_session(seed=9)
        session.run()
        phases = {row["phase"] for row in session.recorder.episodes}
        assert phases == {"mfp", "ibp"}
        ibp_rows = [r for r in session.recorder.episodes if r["phase"] == "ibp"]
        mfp_real_steps = {r["real_step"] for r in ibp_rows}
        assert mfp_real_steps <= {300, 600}  # frozen during IBP

    def test_imagination_metrics_logged(self):
        session = build_session(seed=10)
        session.run()
        # two 150-step ITPs, cadence 100 on the cumulative counter
        steps = [row["itp_step"] for row in session.recorder.imagination_log]
        assert steps == [100, 200, 300]


class TestAgentPathIdentity:
    def test_same_callback_path_in_both_phases(self):
        # count agent interactions per phase: identical per-step pattern
        session = build_session(seed=11)
        counts = {"mfp": {"observe": 0, "select": 0, "train": 0},
                  "ibp": {"observe": 0, "select": 0, "train": 0}}
        phase = {"current": None}

        agent = session.agent
        orig_observe, orig_select, orig_train = (agent.observe,
                                                 agent.select_action,
                                                 agent.train_step)
        orig_mfp, orig_ibp = session.run_mfp, session.run_ibp

        def run_mfp(budget):
            phase["current"] = "mfp"
            return orig_mfp(budget)

        def run_ibp(budget):
            phase["current"] = "ibp"
            return orig_ibp(budget)

        agent.observe = lambda t: (counts[phase["current"]].__setitem__(
            "observe", counts[phase["current"]]["observe"] + 1), orig_observe(t))[1]
        agent.select_action = lambda *a, **k: (counts[phase["current"]].__setitem__(
            "select", counts[phase["current"]]["select"] + 1),
            orig_select(*a, **k))[1]
        agent.train_step = lambda *a, **k: (counts[phase["current"]].__setitem__(
            "train", counts[phase["current"]]["train"] + 1),
            orig_train(*a, **k))[1]
        session.run_mfp = run_mfp
        session.run_ibp = run_ibp
        session.run()

        # one select + one observe per step in both phases
        assert counts["mfp"]["observe"] == counts["mfp"]["select"] == 600
        assert counts["ibp"]["observe"] == counts["ibp"]["select"] == 400
        # training fires on the shared global-step cadence in both phases
        assert counts["mfp"]["train"] > 0 and counts["ibp"]["train"] > 0
        total_expected = (600 + 400) // 4 - 32 // 4  # buffer warm-up offset
        assert counts["mfp"]["train"] + counts["ibp"]["train"] >= total_expected - 2


class TestBaselineEquivalence:
    def _fresh(self, seed, store_transitions):
        return build_session(
            seed=seed,
            schedule=PhaseSchedule(rho1=400, rho2=0, rho3=0, max_iterations=3),
            store_transitions=store_transitions, max_steps=60)

    def _standalone(self, seed, steps):
        streams = [np.random.default_rng(c)
                   for c in np.random.SeedSequence(seed).spawn(5)]
        env = make_env(EnvConfig(MOUNTAIN_CAR, max_episode_steps=60))
        agent = RainbowAgent(tiny_agent_config(), 2, 2, streams[1])
        returns = train_rainbow(agent, env, streams[0], steps)
        return agent, returns

    def test_bit_identical_to_standalone_rainbow(self):
        session = self._fresh(seed=21, store_transitions=False)
        report = session.run()
        standalone_agent, returns = self._standalone(21, 1200)
        assert report.total_real_steps == 1200
        mfp_returns = [r["return_raw"] for r in session.recorder.episodes]
        assert mfp_returns == returns
        for a, b in zip(session.agent.online.params(),
                        standalone_agent.online.params()):
            np.testing.assert_array_equal(a, b)

    def test_memory_writes_do_not_perturb_agent(self):
        # the memory consumes its own stream: agent trajectory is unchanged
        with_writes = self._fresh(seed=22, store_transitions=True)
        with_writes.run()
        without = self._fresh(seed=22, store_transitions=False)
        without.run()
        for a, b in zip(with_writes.agent.online.params(),
                        without.agent.online.params()):
            np.testing.assert_array_equal(a, b)


class TestWgangpVariantSmoke:
    def test_wgangp_imagination_loop_runs(self):
        streams = [np.random.default_rng(c)
                   for c in np.random.SeedSequence(33).spawn(5)]
        env = make_env(EnvConfig(MOUNTAIN_CAR, max_episode_steps=60))
        agent = RainbowAgent(tiny_agent_config(), 2, 2, streams[1])
        memory = GairlMemory(20_000, 2, streams[2])
        im = Imagination(tiny_imagination_config(state_model_kind="wgangp"),
                         2, 2, streams[3])
        session = GairlRun(env=env, agent=agent, memory=memory, imagination=im,
                           schedule=PhaseSchedule(rho1=200, rho2=60, rho3=120,
                                                  max_iterations=1),
                           convergence_threshold=-1e9, env_rng=streams[0],
                           rollout_rng=streams[4], imagination_rng=streams[3],
                           store_transitions=True, variant="gairl_wgangp")
        report = session.run()
        assert report.phase_trace == ["mfp", "itp", "ibp"]
        assert im.trained
