use std::sync::{Arc, Mutex};

use todsim_core::agents::{Agent, AgentError, DecodeConfig, NoisyAgent, Observation, Role, ScriptedAssistant, ScriptedUser};
use todsim_core::dialogue::{serialize_call, Speaker};
use todsim_core::fixture::World;
use todsim_core::metrics::{calls_per_dialogue, task_success_rate};
use todsim_core::orchestrator::{rollout_seed, SimConfig, Simulator};
use todsim_core::{ApiCall, Episode};

fn episodes(rollouts: &[todsim_core::orchestrator::Rollout]) -> Vec<Episode> {
    rollouts.iter().map(|r| r.episode.clone()).collect()
}

#[test]
fn oracle_pair_makes_one_successful_call_per_dialogue() {
    let world = World::in_domain();
    let goals = world.goals(4, 1);
    let table = world.table(&goals, 1);
    let book = Arc::new(world.phrasebook());
    let (user, asst) = (ScriptedUser::new(book.clone()), ScriptedAssistant::new(book));
    let domains = world.domain_map();
    let sim = Simulator::new(&user, &asst, &table, &domains);
    let cfg = SimConfig {
        rollouts_per_goal: 3,
        schema_aware: true,
        ..SimConfig::default()
    };
    let eps = episodes(&sim.run_batch(&goals, &cfg));
    assert_eq!(eps.len(), goals.len() * 3);
    assert_eq!(task_success_rate(&eps).unwrap(), 1.0);
    assert_eq!(calls_per_dialogue(&eps).unwrap(), 1.0);
    for ep in &eps {
        ep.validate().unwrap();
        assert_eq!(ep.turns.last().unwrap().text, "[DONE]");
        assert_eq!(ep.domain, domains[ep.goal.intent()]);
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let world = World::holdout();
    let goals = world.goals(3, 2);
    let table = world.table(&goals, 2);
    let book = Arc::new(world.phrasebook());
    let (user, asst) = (ScriptedUser::new(book.clone()), ScriptedAssistant::new(book));
    let domains = world.domain_map();
    let sim = Simulator::new(&user, &asst, &table, &domains);
    let cfg = SimConfig {
        rollouts_per_goal: 4,
        schema_aware: true,
        decode: DecodeConfig::nucleus(0.9, 77),
        ..SimConfig::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| episodes(&sim.run_batch(&goals, &cfg)))
    };
    let one = run(1);
    assert_eq!(one, run(4));
    let lines: Vec<String> = sim.run_batch(&goals, &cfg).iter().map(|r| r.progress_line()).collect();
    assert_eq!(lines[5], format!("1\t1\ttrue\t{}", one[5].turns.len()));
    assert_ne!(rollout_seed(77, 0, 1), rollout_seed(77, 1, 0));
}

#[test]
fn user_noise_lowers_success() {
    let world = World::in_domain();
    let goals = world.goals(5, 3);
    let table = world.table(&goals, 3);
    let book = Arc::new(world.phrasebook());
    let asst = ScriptedAssistant::new(book.clone());
    let domains = world.domain_map();
    let cfg = SimConfig {
        rollouts_per_goal: 2,
        schema_aware: true,
        ..SimConfig::default()
    };
    let tsr = |eps: f64| {
        let user = NoisyAgent::new(Arc::new(ScriptedUser::new(book.clone())), eps);
        let sim = Simulator::new(&user, &asst, &table, &domains);
        task_success_rate(&episodes(&sim.run_batch(&goals, &cfg))).unwrap()
    };
    let (clean, noisy, all) = (tsr(0.0), tsr(0.5), tsr(1.0));
    assert_eq!(clean, 1.0);
    assert!(noisy < clean && noisy > 0.0, "{noisy}");
    assert_eq!(all, 0.0);
}

/// Records every observation an agent receives.
struct Spy<A> {
    inner: A,
    seen: Mutex<Vec<Observation>>,
}

impl<A: Agent> Agent for Spy<A> {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        self.seen.lock().unwrap().push(obs.clone());
        self.inner.act(obs)
    }
}

#[test]
fn schema_agnostic_assistant_never_sees_the_goal() {
    let world = World::in_domain();
    let goals = world.goals(2, 4);
    let table = world.table(&goals, 4);
    let book = Arc::new(world.phrasebook());
    let user = ScriptedUser::new(book.clone());
    let asst = Spy {
        inner: ScriptedAssistant::new(book),
        seen: Mutex::new(Vec::new()),
    };
    let domains = world.domain_map();
    let sim = Simulator::new(&user, &asst, &table, &domains);
    let cfg = SimConfig {
        rollouts_per_goal: 1,
        ..SimConfig::default()
    };
    for goal in &goals {
        let needle = serialize_call(goal);
        let (_, err) = sim.run_dialogue(goal, &cfg, 9);
        assert!(err.is_none());
        for obs in asst.seen.lock().unwrap().drain(..) {
            assert_eq!(obs.role, Role::Assistant);
            assert!(obs.grounding.is_none());
            for t in obs.history.iter().filter(|t| t.speaker != Speaker::AssistantCall) {
                assert!(!t.text.contains(&needle));
            }
        }
    }
}

/// Fails from its `n`-th call on.
struct Flaky<A> {
    inner: A,
    left: Mutex<usize>,
}

impl<A: Agent> Agent for Flaky<A> {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        let mut left = self.left.lock().unwrap();
        if *left == 0 {
            return Err(AgentError::Unavailable("gone".into()));
        }
        *left -= 1;
        self.inner.act(obs)
    }
}

#[test]
fn agent_failure_drops_the_partial_round() {
    let world = World::in_domain();
    let goal = ApiCall::new("BuyBusTicket", [("bus_origin", "Reno"), ("bus_destination", "Omaha"), ("bus_date", "March 9")]).unwrap();
    let table = world.table(std::slice::from_ref(&goal), 1);
    let book = Arc::new(world.phrasebook());
    let user = ScriptedUser::new(book.clone()).with_reveal_k(1);
    let asst = Flaky {
        inner: ScriptedAssistant::new(book),
        left: Mutex::new(1),
    };
    let domains = world.domain_map();
    let sim = Simulator::new(&user, &asst, &table, &domains);
    let cfg = SimConfig {
        schema_aware: true,
        ..SimConfig::default()
    };
    let (ep, err) = sim.run_dialogue(&goal, &cfg, 1);
    assert!(matches!(err, Some(AgentError::Unavailable(_))));
    assert_eq!(ep.turns.len(), 2);
    assert!(!ep.success);
    ep.validate().unwrap();
}

struct Silent;

impl Agent for Silent {
    fn act(&self, _: &Observation) -> Result<String, AgentError> {
        Ok(String::new())
    }
}

#[test]
fn dialogues_stop_at_max_rounds() {
    let world = World::in_domain();
    let goals = world.goals(1, 5);
    let table = world.table(&goals, 5);
    let user = ScriptedUser::new(Arc::new(world.phrasebook()));
    let domains = world.domain_map();
    let sim = Simulator::new(&user, &Silent, &table, &domains);
    let cfg = SimConfig {
        max_rounds: 4,
        ..SimConfig::default()
    };
    let (ep, _) = sim.run_dialogue(&goals[0], &cfg, 3);
    assert_eq!(ep.turns.len(), 8);
    assert!(!ep.success);
}
