//! Scenario and actor types plus structural validation.
//!
//! A [`Scenario`] is one forced-choice dilemma: the subject car spawns on a
//! straight road inside an invisible corridor, victim groups stand on either
//! side of the road axis, and a target marker registers the scenario with
//! the recorder. A [`Simulation`] is the ordered list of scenarios to visit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

pub const DEFAULT_PEDESTRIAN_RADIUS: f64 = 0.3;
pub const DEFAULT_VEHICLE_ACTOR_RADIUS: f64 = 1.0;
pub const DEFAULT_PROP_RADIUS: f64 = 0.5;
/// Collider radius of the subject car, used when validating without explicit
/// simulation parameters.
pub const DEFAULT_SUBJECT_RADIUS: f64 = 1.2;
pub const MAX_ACTOR_RADIUS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unspecified,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unspecified => "unspecified",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "male" => Some(Gender::Male),
            "female" => Some(Gender::Female),
            "unspecified" => Some(Gender::Unspecified),
            _ => None,
        }
    }
}

/// Which side of the road axis something is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Side of `x` relative to the road axis at `axis_x`. A point exactly on
    /// the axis counts as right.
    pub fn of(x: f64, axis_x: f64) -> Side {
        if x < axis_x {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            _ => None,
        }
    }
}

/// Per-pedestrian victim data. The group size is not stored: it is always
/// derived from the scenario with [`Scenario::group_size`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VictimAttributes {
    pub age: u32,
    pub gender: Gender,
    pub group_id: u32,
    pub traits: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Pedestrian,
    Vehicle,
    Prop,
}

impl ActorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActorKind::Pedestrian => "pedestrian",
            ActorKind::Vehicle => "vehicle",
            ActorKind::Prop => "prop",
        }
    }

    pub fn default_radius(self) -> f64 {
        match self {
            ActorKind::Pedestrian => DEFAULT_PEDESTRIAN_RADIUS,
            ActorKind::Vehicle => DEFAULT_VEHICLE_ACTOR_RADIUS,
            ActorKind::Prop => DEFAULT_PROP_RADIUS,
        }
    }
}

/// Something the subject car can collide with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub kind: ActorKind,
    pub name: String,
    pub position: Vec2,
    pub radius: f64,
    /// Present for pedestrians only.
    pub attributes: Option<VictimAttributes>,
    /// Free-form kind label for vehicles and props, e.g. `cone`.
    pub label: Option<String>,
}

impl ActorSpec {
    pub fn pedestrian(name: impl Into<String>, position: Vec2, attributes: VictimAttributes) -> Self {
        ActorSpec {
            kind: ActorKind::Pedestrian,
            name: name.into(),
            position,
            radius: DEFAULT_PEDESTRIAN_RADIUS,
            attributes: Some(attributes),
            label: None,
        }
    }

    pub fn vehicle(name: impl Into<String>, position: Vec2, label: impl Into<String>) -> Self {
        ActorSpec {
            kind: ActorKind::Vehicle,
            name: name.into(),
            position,
            radius: DEFAULT_VEHICLE_ACTOR_RADIUS,
            attributes: None,
            label: Some(label.into()),
        }
    }

    pub fn prop(name: impl Into<String>, position: Vec2, label: impl Into<String>) -> Self {
        ActorSpec {
            kind: ActorKind::Prop,
            name: name.into(),
            position,
            radius: DEFAULT_PROP_RADIUS,
            attributes: None,
            label: Some(label.into()),
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    /// Group id for pedestrians, `None` for everything else.
    pub fn group_id(&self) -> Option<u32> {
        self.attributes.as_ref().map(|a| a.group_id)
    }
}

/// Invisible barriers: two side walls and a far wall across the road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub x_min: f64,
    pub x_max: f64,
    pub y_end: f64,
}

impl Corridor {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
}

/// Spawn pose of the subject car. The heading is kept in degrees, the unit of
/// the scenario file, so files round-trip exactly; the simulation converts
/// with [`Pose::heading_rad`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading_deg: f64,
    pub speed: f64,
}

impl Pose {
    pub fn heading_rad(&self) -> f64 {
        self.heading_deg.to_radians()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub test_num: u32,
    pub name: String,
    pub spawn: Pose,
    pub target: Option<Vec2>,
    pub corridor: Corridor,
    pub groups: BTreeMap<u32, Side>,
    pub actors: Vec<ActorSpec>,
}

impl Scenario {
    /// Side of the road axis (the line `x = spawn.x`) the point lies on.
    pub fn side_of(&self, position: Vec2) -> Side {
        Side::of(position.x, self.spawn.position.x)
    }

    pub fn actor(&self, name: &str) -> Option<&ActorSpec> {
        self.actors.iter().find(|a| a.name == name)
    }

    /// Pedestrians whose `group_id` is `group_id`, in declaration order.
    pub fn group_members(&self, group_id: u32) -> impl Iterator<Item = &ActorSpec> {
        self.actors
            .iter()
            .filter(move |a| a.kind == ActorKind::Pedestrian && a.group_id() == Some(group_id))
    }

    pub fn group_size(&self, group_id: u32) -> usize {
        self.group_members(group_id).count()
    }

    /// Group of the named actor if it is a pedestrian in a declared group.
    pub fn victim_group(&self, actor: &ActorSpec) -> Option<u32> {
        match actor.kind {
            ActorKind::Pedestrian => actor.group_id().filter(|g| self.groups.contains_key(g)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "test_num", rename_all = "lowercase")]
pub enum Mode {
    All,
    Single(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub scenarios: Vec<Scenario>,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimulationError {
    Empty,
    UnknownTestNum(u32),
}

impl fmt::Display for SimulationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimulationError::Empty => f.write_str("simulation has no scenarios"),
            SimulationError::UnknownTestNum(n) => write!(f, "no scenario with test_num {n}"),
        }
    }
}

impl Simulation {
    pub fn new(scenarios: Vec<Scenario>, mode: Mode) -> Result<Self, SimulationError> {
        let sim = Simulation { scenarios, mode };
        sim.check()?;
        Ok(sim)
    }

    pub fn check(&self) -> Result<(), SimulationError> {
        if self.scenarios.is_empty() {
            return Err(SimulationError::Empty);
        }
        if let Mode::Single(n) = self.mode {
            if self.scenario(n).is_none() {
                return Err(SimulationError::UnknownTestNum(n));
            }
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self, SimulationError> {
        self.mode = mode;
        self.check()?;
        Ok(self)
    }

    pub fn scenario(&self, test_num: u32) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.test_num == test_num)
    }

    pub fn position_of(&self, test_num: u32) -> Option<usize> {
        self.scenarios.iter().position(|s| s.test_num == test_num)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Error,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        }
    }
}

/// Diagnostic codes. Variants are declared in alphabetical order of their
/// code string so the derived ordering matches the printed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagnosticCode {
    BadCorridor,
    BadLabel,
    BadName,
    BadRadius,
    BadScenarioName,
    BadTrait,
    CorridorTooNarrow,
    DuplicateName,
    DuplicateTestNum,
    EmptySide(Side),
    MissingAttributes,
    MissingTarget,
    NegativeSpeed,
    NonFinite,
    SideMismatch,
    SpawnOutsideCorridor,
    UnexpectedAttributes,
    UnknownGroup,
    UnusedGroup,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::BadCorridor => "BAD_CORRIDOR",
            DiagnosticCode::BadLabel => "BAD_LABEL",
            DiagnosticCode::BadName => "BAD_NAME",
            DiagnosticCode::BadRadius => "BAD_RADIUS",
            DiagnosticCode::BadScenarioName => "BAD_SCENARIO_NAME",
            DiagnosticCode::BadTrait => "BAD_TRAIT",
            DiagnosticCode::CorridorTooNarrow => "CORRIDOR_TOO_NARROW",
            DiagnosticCode::DuplicateName => "DUPLICATE_NAME",
            DiagnosticCode::DuplicateTestNum => "DUPLICATE_TEST_NUM",
            DiagnosticCode::EmptySide(_) => "EMPTY_SIDE",
            DiagnosticCode::MissingAttributes => "MISSING_ATTRIBUTES",
            DiagnosticCode::MissingTarget => "MISSING_TARGET",
            DiagnosticCode::NegativeSpeed => "NEGATIVE_SPEED",
            DiagnosticCode::NonFinite => "NON_FINITE",
            DiagnosticCode::SideMismatch => "SIDE_MISMATCH",
            DiagnosticCode::SpawnOutsideCorridor => "SPAWN_OUTSIDE_CORRIDOR",
            DiagnosticCode::UnexpectedAttributes => "UNEXPECTED_ATTRIBUTES",
            DiagnosticCode::UnknownGroup => "UNKNOWN_GROUP",
            DiagnosticCode::UnusedGroup => "UNUSED_GROUP",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticCode::EmptySide(side) => write!(f, "EMPTY_SIDE({})", side.as_str()),
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// Actor the diagnostic is about, if any.
    pub actor: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(code: DiagnosticCode, actor: Option<&str>, message: String) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            actor: actor.map(ToString::to_string),
            message,
        }
    }

    fn warning(code: DiagnosticCode, actor: Option<&str>, message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, actor, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// Actor names, trait tokens and labels end up inside delimited log fields,
/// so each is restricted to a small character set.
pub fn is_valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub fn is_valid_trait(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

pub fn is_valid_label(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

pub fn is_valid_scenario_name(s: &str) -> bool {
    !s.chars().any(|c| c == '"' || c.is_control())
}

/// Validates with the default subject collider radius.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    validate_scenario_with(s, DEFAULT_SUBJECT_RADIUS)
}

/// Structural checks for one scenario. Returns no error-level diagnostics iff
/// the scenario can be simulated. Output is sorted by
/// (severity, code, actor name, message), so actor order never matters.
pub fn validate_scenario_with(s: &Scenario, vehicle_radius: f64) -> Vec<Diagnostic> {
    use DiagnosticCode as C;
    let mut out = Vec::new();

    if !is_valid_scenario_name(&s.name) {
        out.push(Diagnostic::error(
            C::BadScenarioName,
            None,
            String::from("scenario name must not contain quotes or control characters"),
        ));
    }
    if s.target.is_none() {
        out.push(Diagnostic::error(
            C::MissingTarget,
            None,
            String::from("scenario has no target marker"),
        ));
    }

    let c = &s.corridor;
    let spawn = &s.spawn;
    let finite_layout = spawn.position.is_finite()
        && spawn.heading_deg.is_finite()
        && spawn.speed.is_finite()
        && s.target.map_or(true, Vec2::is_finite)
        && c.x_min.is_finite()
        && c.x_max.is_finite()
        && c.y_end.is_finite();
    if !finite_layout {
        out.push(Diagnostic::error(
            C::NonFinite,
            None,
            String::from("spawn, target and corridor values must be finite"),
        ));
    } else {
        if spawn.speed < 0.0 {
            out.push(Diagnostic::error(
                C::NegativeSpeed,
                None,
                format!("spawn speed {} is negative", spawn.speed),
            ));
        }
        if c.x_min >= c.x_max {
            out.push(Diagnostic::error(
                C::BadCorridor,
                None,
                format!("corridor x_min {} must be below x_max {}", c.x_min, c.x_max),
            ));
        } else if c.width() < 2.0 * vehicle_radius {
            out.push(Diagnostic::error(
                C::CorridorTooNarrow,
                None,
                format!(
                    "corridor width {} is narrower than the car ({} m)",
                    c.width(),
                    2.0 * vehicle_radius
                ),
            ));
        } else {
            let p = spawn.position;
            let inside = p.x >= c.x_min + vehicle_radius
                && p.x <= c.x_max - vehicle_radius
                && p.y < c.y_end - vehicle_radius;
            if !inside {
                out.push(Diagnostic::error(
                    C::SpawnOutsideCorridor,
                    None,
                    format!("spawn ({}, {}) does not fit inside the corridor", p.x, p.y),
                ));
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut occupied = BTreeSet::new();
    let mut used_groups = BTreeSet::new();
    for actor in &s.actors {
        let name = Some(actor.name.as_str());
        if !seen.insert(actor.name.as_str()) {
            out.push(Diagnostic::error(
                C::DuplicateName,
                name,
                format!("actor name `{}` is used more than once", actor.name),
            ));
        }
        if !is_valid_name(&actor.name) {
            out.push(Diagnostic::error(
                C::BadName,
                name,
                format!("actor name `{}` must match [A-Za-z0-9_-]+", actor.name),
            ));
        }
        if !actor.position.is_finite() || !actor.radius.is_finite() {
            out.push(Diagnostic::error(
                C::NonFinite,
                name,
                String::from("actor position and radius must be finite"),
            ));
            continue;
        }
        if !(actor.radius > 0.0 && actor.radius <= MAX_ACTOR_RADIUS) {
            out.push(Diagnostic::error(
                C::BadRadius,
                name,
                format!("radius {} is outside (0, {}]", actor.radius, MAX_ACTOR_RADIUS),
            ));
        }
        let side = s.side_of(actor.position);
        occupied.insert(side);

        match (actor.kind, &actor.attributes) {
            (ActorKind::Pedestrian, None) => out.push(Diagnostic::error(
                C::MissingAttributes,
                name,
                String::from("pedestrian has no victim attributes"),
            )),
            (ActorKind::Pedestrian, Some(attrs)) => {
                used_groups.insert(attrs.group_id);
                match s.groups.get(&attrs.group_id) {
                    None => out.push(Diagnostic::error(
                        C::UnknownGroup,
                        name,
                        format!("group {} is not declared", attrs.group_id),
                    )),
                    Some(&declared) if declared != side => out.push(Diagnostic::warning(
                        C::SideMismatch,
                        name,
                        format!(
                            "pedestrian stands on the {} but group {} is declared {}",
                            side.as_str(),
                            attrs.group_id,
                            declared.as_str()
                        ),
                    )),
                    Some(_) => {}
                }
                for t in attrs.traits.iter().filter(|t| !is_valid_trait(t)) {
                    out.push(Diagnostic::error(
                        C::BadTrait,
                        name,
                        format!("trait `{t}` must match [a-z0-9_]+"),
                    ));
                }
            }
            (_, Some(_)) => out.push(Diagnostic::error(
                C::UnexpectedAttributes,
                name,
                format!("{} actors carry no victim attributes", actor.kind.as_str()),
            )),
            (_, None) => {}
        }
        if actor.kind != ActorKind::Pedestrian
            && !actor.label.as_deref().is_some_and(is_valid_label)
        {
            out.push(Diagnostic::error(
                C::BadLabel,
                name,
                String::from("vehicle and prop kinds must match [A-Za-z0-9_.-]+"),
            ));
        }
    }

    for side in [Side::Left, Side::Right] {
        if !occupied.contains(&side) {
            out.push(Diagnostic::warning(
                C::EmptySide(side),
                None,
                format!("no collidable actor on the {} side of the road", side.as_str()),
            ));
        }
    }
    for gid in s.groups.keys().filter(|g| !used_groups.contains(*g)) {
        out.push(Diagnostic::warning(
            C::UnusedGroup,
            None,
            format!("group {gid} has no members"),
        ));
    }

    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownGroup(pub u32);

impl fmt::Display for UnknownGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UNKNOWN_GROUP: group {} is not declared", self.0)
    }
}

/// Canonical delimited description of a victim group:
/// `name:age:gender:trait1,trait2` per member, members sorted by name and
/// joined with `|`.
pub fn group_member_names(s: &Scenario, group_id: u32) -> Result<String, UnknownGroup> {
    if !s.groups.contains_key(&group_id) {
        return Err(UnknownGroup(group_id));
    }
    let mut members: Vec<&ActorSpec> = s.group_members(group_id).collect();
    members.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = String::new();
    for (i, m) in members.iter().enumerate() {
        if i > 0 {
            out.push('|');
        }
        // group_members only yields pedestrians with attributes
        let attrs = m.attributes.as_ref().expect("pedestrian attributes");
        out.push_str(&m.name);
        out.push(':');
        out.push_str(&format!("{}", attrs.age));
        out.push(':');
        out.push_str(attrs.gender.as_str());
        out.push(':');
        out.push_str(&attrs.traits.join(","));
    }
    Ok(out)
}
