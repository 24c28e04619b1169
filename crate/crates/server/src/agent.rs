//! Scripted baseline policies and the loops that drive them, either in
//! process or as a lockstep client of a running server.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use trolley_core::protocol::{decode, encode_message, ClientRole, ErrorCode, Hello, Message, Pacing, SessionConfig};
use trolley_core::record::{DecisionRecord, TraceEntry};
use trolley_core::sim::{Control, EpisodePhase, Observation, ScenarioLayout, SimParams, SimulationRun};

use crate::catalog::ScenarioFile;
use crate::server::derive_session_id;
use crate::transport::{LineTransport, Transport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    AlwaysLeft,
    AlwaysRight,
    None,
    Random,
    NearestGap,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::AlwaysLeft,
        PolicyKind::AlwaysRight,
        PolicyKind::None,
        PolicyKind::Random,
        PolicyKind::NearestGap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AlwaysLeft => "always_left",
            PolicyKind::AlwaysRight => "always_right",
            PolicyKind::None => "none",
            PolicyKind::Random => "random",
            PolicyKind::NearestGap => "nearest_gap",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

pub trait Policy {
    /// Called when a scenario starts.
    fn start(&mut self, _layout: &ScenarioLayout) {}

    fn act(&mut self, obs: &Observation) -> Control;
}

pub struct Constant(pub Control);

impl Policy for Constant {
    fn act(&mut self, _obs: &Observation) -> Control {
        self.0
    }
}

/// Picks a uniformly random control and holds it for 1 to 30 ticks.
pub struct RandomHold {
    rng: ChaCha8Rng,
    current: Control,
    left: u32,
}

impl RandomHold {
    pub fn new(seed: u64) -> Self {
        RandomHold {
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: Control::Straight,
            left: 0,
        }
    }
}

impl Policy for RandomHold {
    fn act(&mut self, _obs: &Observation) -> Control {
        if self.left == 0 {
            self.current = Control::ALL[self.rng.gen_range(0..Control::ALL.len())];
            self.left = self.rng.gen_range(1..=30);
        }
        self.left -= 1;
        self.current
    }
}

/// Steers toward the middle of the widest lateral span not blocked by any
/// actor still ahead of the car.
pub struct NearestGap {
    vehicle_radius: f64,
    layout: Option<ScenarioLayout>,
}

impl NearestGap {
    pub fn new(vehicle_radius: f64) -> Self {
        NearestGap {
            vehicle_radius,
            layout: None,
        }
    }

    fn aim(&self, layout: &ScenarioLayout, obs: &Observation) -> (f64, f64) {
        let r = self.vehicle_radius;
        let (lo, hi) = (layout.corridor.x_min + r, layout.corridor.x_max - r);
        let mut blocked: Vec<(f64, f64)> = layout
            .actors
            .iter()
            .filter(|a| a.position.y + a.radius > obs.position.y - r)
            .map(|a| (a.position.x - a.radius - r, a.position.x + a.radius + r))
            .collect();
        blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nearest_ahead = layout
            .actors
            .iter()
            .map(|a| a.position.y - obs.position.y)
            .filter(|&dy| dy > 0.0)
            .fold(f64::INFINITY, f64::min);
        let lookahead = nearest_ahead.clamp(5.0, 50.0);

        let mut best: Option<(f64, f64)> = None;
        let mut cursor = lo;
        let mut consider = |a: f64, b: f64| {
            if b > a {
                let mid = (a + b) / 2.0;
                let better = match best {
                    None => true,
                    Some((w, m)) => {
                        b - a > w || (b - a == w && (mid - obs.position.x).abs() < (m - obs.position.x).abs())
                    }
                };
                if better {
                    best = Some((b - a, mid));
                }
            }
        };
        for (a, b) in blocked {
            consider(cursor, a.min(hi));
            cursor = cursor.max(b);
        }
        consider(cursor, hi);
        (best.map_or(obs.position.x, |(_, mid)| mid), lookahead)
    }
}

impl Policy for NearestGap {
    fn start(&mut self, layout: &ScenarioLayout) {
        self.layout = Some(layout.clone());
    }

    fn act(&mut self, obs: &Observation) -> Control {
        let Some(layout) = &self.layout else {
            return Control::Straight;
        };
        let (aim, lookahead) = self.aim(layout, obs);
        let desired = (aim - obs.position.x).atan2(lookahead);
        const DEADBAND: f64 = 0.02;
        if obs.heading < desired - DEADBAND {
            Control::Right
        } else if obs.heading > desired + DEADBAND {
            Control::Left
        } else {
            Control::Straight
        }
    }
}

pub fn make_policy(kind: PolicyKind, seed: u64, params: &SimParams) -> Box<dyn Policy + Send> {
    match kind {
        PolicyKind::AlwaysLeft => Box::new(Constant(Control::Left)),
        PolicyKind::AlwaysRight => Box::new(Constant(Control::Right)),
        PolicyKind::None => Box::new(Constant(Control::Straight)),
        PolicyKind::Random => Box::new(RandomHold::new(seed)),
        PolicyKind::NearestGap => Box::new(NearestGap::new(params.vehicle_radius)),
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("server error {code:?}: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRun {
    pub session_id: String,
    pub records: Vec<DecisionRecord>,
    pub traces: Vec<TraceEntry>,
}

/// Runs a whole simulation against `file` without any networking, with the
/// same session id a server would assign to this configuration.
pub fn run_in_process(
    file: &ScenarioFile,
    config: &SessionConfig,
    session_id: Option<String>,
    params: &SimParams,
    policy: &mut dyn Policy,
) -> Result<AgentRun, AgentError> {
    let session_id = session_id.unwrap_or_else(|| derive_session_id(&file.file_id, config));
    let simulation = file
        .simulation
        .clone()
        .with_mode(config.mode)
        .map_err(|e| AgentError::Config(e.to_string()))?;
    let mut run = SimulationRun::new(simulation, *params, session_id.clone(), config.role)
        .map_err(|e| AgentError::Sim(e.to_string()))?;
    while !run.is_ended() {
        policy.start(&ScenarioLayout::of(run.episode()));
        while run.episode().phase() == EpisodePhase::Running {
            let control = policy.act(&run.episode().observation());
            run.run_tick(control).map_err(|e| AgentError::Sim(e.to_string()))?;
        }
        run.advance().map_err(|e| AgentError::Sim(e.to_string()))?;
    }
    let traces = run
        .traces()
        .iter()
        .map(|trace| TraceEntry {
            file_id: file.file_id.clone(),
            role: config.role,
            trace: trace.clone(),
        })
        .collect();
    Ok(AgentRun {
        session_id,
        records: run.records().to_vec(),
        traces,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteRun {
    pub session_id: String,
    /// Records as they arrived in EPISODE_END messages.
    pub episodes: Vec<DecisionRecord>,
    /// Records carried by SIM_END.
    pub records: Vec<DecisionRecord>,
    /// COLLISION display messages, in order.
    pub collisions: Vec<String>,
}

/// Plays a lockstep session over any transport. `hello` is sent as given
/// except that pacing and role are forced to lockstep and agent.
pub fn run_session(
    t: &mut dyn Transport,
    mut hello: Hello,
    policy: &mut dyn Policy,
    timeout: Duration,
) -> Result<RemoteRun, AgentError> {
    hello.pacing = Some(Pacing::Lockstep);
    hello.role = Some(ClientRole::Agent);
    t.send(&encode_message(Message::Hello(hello)))?;
    let mut out = RemoteRun {
        session_id: String::new(),
        episodes: Vec::new(),
        records: Vec::new(),
        collisions: Vec::new(),
    };
    loop {
        let line = t
            .recv(Instant::now() + timeout)?
            .ok_or_else(|| AgentError::Protocol(format!("server silent for {timeout:?}")))?;
        let envelope = decode(&line).map_err(|e| AgentError::Protocol(e.to_string()))?;
        match envelope.message {
            Message::Welcome { session_id } => out.session_id = session_id,
            Message::ScenarioStart(layout) => policy.start(&layout),
            Message::State(obs) => {
                let control = policy.act(&obs);
                t.send(&encode_message(Message::Action { tick: obs.tick, control }))?;
            }
            Message::Collision { message, .. } => out.collisions.push(message),
            Message::EpisodeEnd { record } => out.episodes.push(record),
            Message::SimEnd { records } => {
                out.records = records;
                return Ok(out);
            }
            Message::Error { code, message } => return Err(AgentError::Server { code, message }),
            other => return Err(AgentError::Protocol(format!("unexpected {}", other.kind()))),
        }
    }
}

pub fn run_remote(addr: &str, hello: Hello, policy: &mut dyn Policy) -> Result<RemoteRun, AgentError> {
    let mut t = LineTransport::connect(addr)?;
    run_session(&mut t, hello, policy, Duration::from_secs(60))
}

#[cfg(test)]
mod tests {
    use super::*;
    use trolley_core::Vec2;

    fn obs() -> Observation {
        Observation {
            tick: 0,
            test_num: 0,
            layout_id: 0,
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 0.0,
            acceleration: Vec2::ZERO,
            collision_impulse_accum: 0.0,
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>(), Ok(k));
        }
        assert!("sideways".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn random_is_seeded_and_holds() {
        let run = |seed| {
            let mut p = RandomHold::new(seed);
            (0..500).map(|_| p.act(&obs())).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        let seq = run(7);
        let mut longest = 0;
        let mut current = 0;
        for w in seq.windows(2) {
            current = if w[0] == w[1] { current + 1 } else { 0 };
            longest = longest.max(current + 1);
        }
        assert!(longest > 1);
    }
}
