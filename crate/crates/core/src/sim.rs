//! Fixed-timestep kinematics, collision detection and the episode flow.
//!
//! One episode runs a single scenario: the car auto-accelerates along the
//! road, the driver may only swerve, and the episode ends when a victim is
//! hit or the tick budget runs out. Barrier and non-victim hits deflect the
//! car (heading reset, position clamped) and the episode carries on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::record::{make_decision_record, ActionTrace, DecisionRecord, RecordContext, SubjectRole};
use crate::scenario::{
    group_member_names, validate_scenario_with, ActorKind, ActorSpec, Diagnostic, Mode, Scenario,
    Simulation,
};

/// Swerve input for one tick.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    #[serde(rename = "LEFT")]
    Left,
    #[default]
    #[serde(rename = "NONE")]
    Straight,
    #[serde(rename = "RIGHT")]
    Right,
}

impl Control {
    pub const ALL: [Control; 3] = [Control::Left, Control::Straight, Control::Right];

    /// Steering sign: −1 left, 0 straight, +1 right.
    pub fn sign(self) -> f64 {
        match self {
            Control::Left => -1.0,
            Control::Straight => 0.0,
            Control::Right => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Control::Left => "LEFT",
            Control::Straight => "NONE",
            Control::Right => "RIGHT",
        }
    }

    pub fn parse(s: &str) -> Option<Control> {
        match s {
            "LEFT" => Some(Control::Left),
            "NONE" => Some(Control::Straight),
            "RIGHT" => Some(Control::Right),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Seconds per tick.
    pub dt: f64,
    /// Automatic forward acceleration, m/s².
    pub a_auto: f64,
    pub v_max: f64,
    /// Swerve rate, rad/s.
    pub omega_max: f64,
    /// Largest heading deviation from the spawn heading, radians.
    pub theta_max: f64,
    pub vehicle_radius: f64,
    /// Episode length after which the outcome is recorded as a timeout.
    pub t_max_ticks: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1.0 / 60.0,
            a_auto: 3.0,
            v_max: 30.0,
            omega_max: 1.2,
            theta_max: 0.5,
            vehicle_radius: 1.2,
            t_max_ticks: 1800,
        }
    }
}

impl SimParams {
    pub fn check(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("a_auto", self.a_auto),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("theta_max", self.theta_max),
            ("vehicle_radius", self.vehicle_radius),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.dt > 0.1 {
            return Err(SimError::InvalidParams(String::from("dt must be at most 0.1 s")));
        }
        if self.t_max_ticks == 0 {
            return Err(SimError::InvalidParams(String::from("t_max_ticks must be positive")));
        }
        Ok(())
    }
}

/// Kinematic state of the subject car.
///
/// Heading 0 points along `+y`; positive headings turn right (towards `+x`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    /// Spawn heading; swerving is clamped to `heading_ref ± theta_max` and
    /// deflections reset the heading to it.
    pub heading_ref: f64,
    pub speed: f64,
    /// Velocity change over the last step divided by `dt`.
    pub acceleration: Vec2,
    /// Sum of impact speeds over every collision so far.
    pub collision_impulse_accum: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        VehicleState {
            position,
            heading,
            heading_ref: heading,
            speed: 0.0,
            acceleration: Vec2::ZERO,
            collision_impulse_accum: 0.0,
        }
    }

    fn velocity(speed: f64, heading: f64) -> Vec2 {
        Vec2::new(speed * libm::sin(heading), speed * libm::cos(heading))
    }
}

/// Advances the car by one tick:
///
/// ```text
/// speed'   = min(speed + a_auto·dt, v_max)
/// heading' = clamp(heading + u·omega_max·dt, ref − theta_max, ref + theta_max)
/// pos'     = pos + speed'·dt·(sin heading', cos heading')
/// accel    = (speed'·(sin h', cos h') − speed·(sin h, cos h)) / dt
/// ```
pub fn step_vehicle(state: &VehicleState, control: Control, params: &SimParams) -> VehicleState {
    let speed = (state.speed + params.a_auto * params.dt).min(params.v_max);
    let lo = state.heading_ref - params.theta_max;
    let hi = state.heading_ref + params.theta_max;
    let heading = (state.heading + control.sign() * params.omega_max * params.dt).clamp(lo, hi);
    let sin_h = libm::sin(heading);
    let cos_h = libm::cos(heading);
    let position = Vec2::new(
        state.position.x + speed * params.dt * sin_h,
        state.position.y + speed * params.dt * cos_h,
    );
    let v_new = Vec2::new(speed * sin_h, speed * cos_h);
    let v_old = VehicleState::velocity(state.speed, state.heading);
    let acceleration = Vec2::new(
        (v_new.x - v_old.x) / params.dt,
        (v_new.y - v_old.y) / params.dt,
    );
    VehicleState {
        position,
        heading,
        heading_ref: state.heading_ref,
        speed,
        acceleration,
        collision_impulse_accum: state.collision_impulse_accum,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Barrier {
    Left,
    Right,
    Far,
}

impl Barrier {
    pub fn as_str(self) -> &'static str {
        match self {
            Barrier::Left => "left",
            Barrier::Right => "right",
            Barrier::Far => "far",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Hit {
    /// Index into `scenario.actors`.
    Actor(usize),
    Barrier(Barrier),
}

/// Allowed range of the car's center `(x_lo, x_hi, y_hi)`: the extreme
/// values for which `x − r ≥ x_min`, `x + r ≤ x_max` and `y + r ≤ y_end`
/// hold in floating point.
fn center_bounds(scenario: &Scenario, params: &SimParams) -> (f64, f64, f64) {
    let r = params.vehicle_radius;
    let c = &scenario.corridor;
    let mut lo = c.x_min + r;
    while lo - r < c.x_min {
        lo = lo.next_up();
    }
    let mut hi = c.x_max - r;
    while hi + r > c.x_max {
        hi = hi.next_down();
    }
    let mut far = c.y_end - r;
    while far + r > c.y_end {
        far = far.next_down();
    }
    (lo, hi, far)
}

/// Collision test for the car's current position.
///
/// An actor is hit when the center distance is `<= vehicle_radius +
/// actor.radius`. Actors take precedence over barriers; among actors the
/// nearest center wins, then the lexically smallest name.
pub fn check_collisions(state: &VehicleState, scenario: &Scenario, params: &SimParams) -> Option<Hit> {
    let mut best: Option<(f64, usize)> = None;
    for (i, actor) in scenario.actors.iter().enumerate() {
        let d = state.position.distance(actor.position);
        if d > params.vehicle_radius + actor.radius {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bi)) => match d.total_cmp(&bd) {
                Ordering::Less => true,
                Ordering::Equal => actor.name < scenario.actors[bi].name,
                Ordering::Greater => false,
            },
        };
        if better {
            best = Some((d, i));
        }
    }
    if let Some((_, i)) = best {
        return Some(Hit::Actor(i));
    }

    let r = params.vehicle_radius;
    let c = &scenario.corridor;
    let p = state.position;
    // deepest penetration wins; ties resolve left, right, far
    let candidates = [
        (Barrier::Left, c.x_min - (p.x - r)),
        (Barrier::Right, (p.x + r) - c.x_max),
        (Barrier::Far, (p.y + r) - c.y_end),
    ];
    let mut hit: Option<(Barrier, f64)> = None;
    for (barrier, depth) in candidates {
        let touching = match barrier {
            Barrier::Far => depth >= 0.0,
            _ => depth > 0.0,
        };
        if touching && hit.map_or(true, |(_, d)| depth > d) {
            hit = Some((barrier, depth));
        }
    }
    hit.map(|(b, _)| Hit::Barrier(b))
}

/// How an episode ended. Serialized as its log form, `group:<id>` or `timeout`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Group(u32),
    Timeout,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Group(g) => write!(f, "group:{g}"),
            Outcome::Timeout => f.write_str("timeout"),
        }
    }
}

impl Outcome {
    pub fn parse(s: &str) -> Option<Outcome> {
        if s == "timeout" {
            return Some(Outcome::Timeout);
        }
        let g = s.strip_prefix("group:")?;
        if g.is_empty() || !g.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        g.parse().ok().map(Outcome::Group)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodePhase {
    Init,
    Running,
    Collided(Outcome),
    Done,
}

/// What the car was deflected by.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Obstacle {
    Barrier(Barrier),
    Actor(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TickEventKind {
    StateUpdated,
    Hit(String),
    BarrierHit(Obstacle),
    Display(String),
    ScenarioAdvanced(u32),
    SimulationEnded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickEvent {
    pub tick: u32,
    pub kind: TickEventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    InvalidScenario(Vec<Diagnostic>),
    InvalidParams(String),
    InvalidSimulation(String),
    WrongPhase(EpisodePhase),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidScenario(diags) => {
                f.write_str("INVALID_SCENARIO")?;
                for d in diags {
                    write!(f, "; {}: {}", d.code, d.message)?;
                }
                Ok(())
            }
            SimError::InvalidParams(msg) => write!(f, "INVALID_PARAMS: {msg}"),
            SimError::InvalidSimulation(msg) => write!(f, "INVALID_SIMULATION: {msg}"),
            SimError::WrongPhase(phase) => write!(f, "WRONG_PHASE: episode is {phase:?}"),
        }
    }
}

/// Snapshot streamed to clients every tick. The static layout of the scenario
/// is sent once per scenario and referenced here by `layout_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u32,
    pub test_num: u32,
    pub layout_id: u32,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub acceleration: Vec2,
    pub collision_impulse_accum: f64,
}

/// Live state of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    scenario: Scenario,
    params: SimParams,
    layout_id: u32,
    vehicle: VehicleState,
    tick: u32,
    phase: EpisodePhase,
    impact_speed: f64,
    trace: Vec<(Control, u32)>,
}

/// Builds a running episode at the scenario's spawn pose.
pub fn init_values(scenario: &Scenario, params: &SimParams) -> Result<EpisodeState, SimError> {
    EpisodeState::new(scenario.clone(), *params, 0)
}

impl EpisodeState {
    pub fn new(scenario: Scenario, params: SimParams, layout_id: u32) -> Result<Self, SimError> {
        params.check()?;
        let errors: Vec<Diagnostic> = validate_scenario_with(&scenario, params.vehicle_radius)
            .into_iter()
            .filter(Diagnostic::is_error)
            .collect();
        if !errors.is_empty() {
            return Err(SimError::InvalidScenario(errors));
        }
        let mut episode = EpisodeState {
            vehicle: VehicleState::at_rest(scenario.spawn.position, scenario.spawn.heading_rad()),
            scenario,
            params,
            layout_id,
            tick: 0,
            phase: EpisodePhase::Init,
            impact_speed: 0.0,
            trace: Vec::new(),
        };
        episode.vehicle.speed = episode.scenario.spawn.speed;
        episode.phase = EpisodePhase::Running;
        Ok(episode)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn layout_id(&self) -> u32 {
        self.layout_id
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn phase(&self) -> EpisodePhase {
        self.phase
    }

    /// Speed at the victim collision; 0 for a timeout or a running episode.
    pub fn impact_speed(&self) -> f64 {
        self.impact_speed
    }

    /// Run-length encoded controls applied so far.
    pub fn controls(&self) -> &[(Control, u32)] {
        &self.trace
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.phase {
            EpisodePhase::Collided(o) => Some(o),
            _ => None,
        }
    }

    pub fn observation(&self) -> Observation {
        make_observation(self)
    }

    /// Reacts to a collision found by [`check_collisions`].
    pub fn handle_hit(&mut self, hit: &Hit) -> Result<Vec<TickEvent>, SimError> {
        if self.phase != EpisodePhase::Running {
            return Err(SimError::WrongPhase(self.phase));
        }
        let tick = self.tick;
        let speed = self.vehicle.speed;
        let mut events = Vec::new();
        self.vehicle.collision_impulse_accum += speed;

        let obstacle = match *hit {
            Hit::Actor(i) => {
                let actor = &self.scenario.actors[i];
                events.push(TickEvent {
                    tick,
                    kind: TickEventKind::Hit(actor.name.clone()),
                });
                if let Some(group) = self.scenario.victim_group(actor) {
                    // victim groups always exist here, validated at init
                    let names = group_member_names(&self.scenario, group).unwrap_or_default();
                    self.phase = EpisodePhase::Collided(Outcome::Group(group));
                    self.impact_speed = speed;
                    events.push(TickEvent {
                        tick,
                        kind: TickEventKind::Display(format!("Collided with {names}")),
                    });
                    return Ok(events);
                }
                let actor = actor.clone();
                self.push_out_of(&actor);
                Obstacle::Actor(actor.name)
            }
            Hit::Barrier(b) => Obstacle::Barrier(b),
        };

        self.vehicle.heading = self.vehicle.heading_ref;
        self.clamp_to_corridor();
        events.push(TickEvent {
            tick,
            kind: TickEventKind::BarrierHit(obstacle),
        });
        Ok(events)
    }

    /// Slides the car sideways clear of a non-victim actor, keeping its
    /// forward position. Goes to the side the car is already on (the roomier
    /// one on a tie) unless that leaves the corridor. When neither side fits
    /// the car is pushed back along the line of centers.
    fn push_out_of(&mut self, actor: &ActorSpec) {
        let (lo, hi, _) = center_bounds(&self.scenario, &self.params);
        let p = self.vehicle.position;
        let a = actor.position;
        let reach = self.params.vehicle_radius + actor.radius;
        let clear = |x: f64| Vec2::new(x, p.y).distance(a) > reach;
        let mut left = a.x - reach;
        while !clear(left) {
            left = left.next_down();
        }
        let mut right = a.x + reach;
        while !clear(right) {
            right = right.next_up();
        }
        let prefer_left = if p.x != a.x { p.x < a.x } else { a.x - lo >= hi - a.x };
        let (first, second) = if prefer_left { (left, right) } else { (right, left) };
        let fits = |x: f64| x >= lo && x <= hi;
        if fits(first) {
            self.vehicle.position.x = first;
        } else if fits(second) {
            self.vehicle.position.x = second;
        } else {
            let d = p.distance(a);
            let dir = if d > 0.0 { (p - a) * (1.0 / d) } else { Vec2::new(0.0, -1.0) };
            self.vehicle.position = a + dir * reach;
        }
    }

    fn clamp_to_corridor(&mut self) {
        let (lo, hi, far) = center_bounds(&self.scenario, &self.params);
        let p = &mut self.vehicle.position;
        p.x = p.x.clamp(lo, hi);
        p.y = p.y.min(far);
    }

    fn record_control(&mut self, control: Control) {
        match self.trace.last_mut() {
            Some((c, n)) if *c == control => *n += 1,
            _ => self.trace.push((control, 1)),
        }
    }

    /// One frame: step, collide, react, count. Reaching `t_max_ticks`
    /// without a victim collision ends the episode as a timeout.
    pub fn run_tick(&mut self, control: Control) -> Result<Vec<TickEvent>, SimError> {
        if self.phase != EpisodePhase::Running {
            return Err(SimError::WrongPhase(self.phase));
        }
        self.vehicle = step_vehicle(&self.vehicle, control, &self.params);
        self.tick += 1;
        self.record_control(control);
        let mut events = alloc::vec![TickEvent {
            tick: self.tick,
            kind: TickEventKind::StateUpdated,
        }];
        if let Some(hit) = check_collisions(&self.vehicle, &self.scenario, &self.params) {
            events.extend(self.handle_hit(&hit)?);
        }
        if self.phase == EpisodePhase::Running && self.tick >= self.params.t_max_ticks {
            self.phase = EpisodePhase::Collided(Outcome::Timeout);
        }
        Ok(events)
    }

    fn finish(&mut self) {
        self.phase = EpisodePhase::Done;
    }
}

pub fn make_observation(episode: &EpisodeState) -> Observation {
    let v = &episode.vehicle;
    Observation {
        tick: episode.tick,
        test_num: episode.scenario.test_num,
        layout_id: episode.layout_id,
        position: v.position,
        heading: v.heading,
        speed: v.speed,
        acceleration: v.acceleration,
        collision_impulse_accum: v.collision_impulse_accum,
    }
}

/// A whole simulation: scenarios visited in order (or the single chosen one),
/// one decision record and action trace per finished episode.
#[derive(Clone, Debug)]
pub struct SimulationRun {
    simulation: Simulation,
    context: RecordContext,
    cursor: usize,
    episode: EpisodeState,
    records: Vec<DecisionRecord>,
    traces: Vec<ActionTrace>,
    ended: bool,
}

impl SimulationRun {
    pub fn new(
        simulation: Simulation,
        params: SimParams,
        session_id: impl Into<String>,
        role: SubjectRole,
    ) -> Result<Self, SimError> {
        simulation
            .check()
            .map_err(|e| SimError::InvalidSimulation(format!("{e}")))?;
        let context = RecordContext::new(session_id, role)
            .map_err(|e| SimError::InvalidSimulation(format!("{e}")))?;
        let cursor = match simulation.mode {
            Mode::All => 0,
            // check() guarantees the test_num exists
            Mode::Single(n) => simulation.position_of(n).unwrap_or(0),
        };
        let episode = EpisodeState::new(simulation.scenarios[cursor].clone(), params, cursor as u32)?;
        Ok(SimulationRun {
            simulation,
            context,
            cursor,
            episode,
            records: Vec::new(),
            traces: Vec::new(),
            ended: false,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.simulation
    }

    pub fn context(&self) -> &RecordContext {
        &self.context
    }

    pub fn episode(&self) -> &EpisodeState {
        &self.episode
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn traces(&self) -> &[ActionTrace] {
        &self.traces
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn run_tick(&mut self, control: Control) -> Result<Vec<TickEvent>, SimError> {
        self.episode.run_tick(control)
    }

    /// Records the finished episode and spawns the next scenario, or ends
    /// the simulation after the last (or only) one.
    pub fn advance(&mut self) -> Result<Vec<TickEvent>, SimError> {
        let EpisodePhase::Collided(_) = self.episode.phase else {
            return Err(SimError::WrongPhase(self.episode.phase));
        };
        let record = make_decision_record(&self.context, &self.episode)
            .map_err(|_| SimError::WrongPhase(self.episode.phase))?;
        let tick = self.episode.tick;
        self.records.push(record);
        self.traces.push(ActionTrace {
            session_id: self.context.session_id.clone(),
            test_num: self.episode.scenario.test_num,
            controls: self.episode.trace.clone(),
        });
        self.episode.finish();

        let next = self.cursor + 1;
        if self.simulation.mode != Mode::All || next >= self.simulation.scenarios.len() {
            self.ended = true;
            return Ok(alloc::vec![TickEvent {
                tick,
                kind: TickEventKind::SimulationEnded,
            }]);
        }
        let params = self.episode.params;
        self.episode = EpisodeState::new(self.simulation.scenarios[next].clone(), params, next as u32)?;
        self.cursor = next;
        Ok(alloc::vec![TickEvent {
            tick: 0,
            kind: TickEventKind::ScenarioAdvanced(self.episode.scenario.test_num),
        }])
    }
}

/// Static scenario layout, sent once when a scenario starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLayout {
    pub layout_id: u32,
    pub test_num: u32,
    pub name: String,
    pub spawn: crate::scenario::Pose,
    pub target: Option<Vec2>,
    pub corridor: crate::scenario::Corridor,
    pub actors: Vec<LayoutActor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutActor {
    pub name: String,
    pub kind: ActorKind,
    pub position: Vec2,
    pub radius: f64,
    pub side: crate::scenario::Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ScenarioLayout {
    pub fn of(episode: &EpisodeState) -> Self {
        let s = &episode.scenario;
        ScenarioLayout {
            layout_id: episode.layout_id,
            test_num: s.test_num,
            name: s.name.clone(),
            spawn: s.spawn,
            target: s.target,
            corridor: s.corridor,
            actors: s
                .actors
                .iter()
                .map(|a| LayoutActor {
                    name: a.name.clone(),
                    kind: a.kind,
                    position: a.position,
                    radius: a.radius,
                    side: s.side_of(a.position),
                    group: a.group_id(),
                    label: a.label.clone(),
                })
                .collect(),
        }
    }
}
