//! The `.trly` scenario language.
//!
//! Line oriented, one directive per line, `#` starts a comment:
//!
//! ```text
//! scenario 0 "two lanes"
//!   spawn x=0 y=0 heading_deg=0 speed=5
//!   target x=0 y=30
//!   corridor x_min=-5 x_max=5 y_end=80
//!   group id=0 side=left
//!   group id=1 side=right
//!   ped name=p1 group=0 x=-2 y=30 age=30 gender=female traits=pregnant
//!   ped name=p2 group=1 x=2 y=30 age=8 gender=male
//!   prop name=c1 x=4 y=12 kind=cone radius=0.4
//! end
//! ```
//!
//! The parser never stops at the first problem: every error in the file is
//! reported with its line and column.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use crate::geometry::Vec2;
use crate::scenario::{
    is_valid_label, is_valid_name, is_valid_scenario_name, is_valid_trait, validate_scenario_with,
    ActorKind, ActorSpec, Corridor, Diagnostic, DiagnosticCode, Gender, Mode, Pose, Scenario,
    Severity, Side, Simulation, VictimAttributes, DEFAULT_SUBJECT_RADIUS,
};

/// 1-based position in the source text; columns count characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
}

impl Default for SourceSpan {
    fn default() -> Self {
        SourceSpan::START
    }
}

impl SourceSpan {
    pub const START: SourceSpan = SourceSpan { line: 1, column: 1 };

    pub fn new(line: u32, column: u32) -> Self {
        SourceSpan { line, column }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParseErrorCode {
    Syntax,
    DuplicateName,
    MissingTarget,
    MissingSpawn,
    MissingCorridor,
    UnknownKey,
    BadNumber,
    UnterminatedScenario,
    /// A scenario-level invariant failed after the block parsed.
    Invalid(DiagnosticCode),
}

impl ParseErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorCode::Syntax => "SYNTAX",
            ParseErrorCode::DuplicateName => "DUPLICATE_NAME",
            ParseErrorCode::MissingTarget => "MISSING_TARGET",
            ParseErrorCode::MissingSpawn => "MISSING_SPAWN",
            ParseErrorCode::MissingCorridor => "MISSING_CORRIDOR",
            ParseErrorCode::UnknownKey => "UNKNOWN_KEY",
            ParseErrorCode::BadNumber => "BAD_NUMBER",
            ParseErrorCode::UnterminatedScenario => "UNTERMINATED_SCENARIO",
            ParseErrorCode::Invalid(code) => code.as_str(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub span: SourceSpan,
    pub code: ParseErrorCode,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.span.line,
            self.span.column,
            self.code.as_str(),
            self.message
        )
    }
}

/// Where each scenario and actor came from, for mapping lint diagnostics
/// back onto the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioSource {
    pub header: SourceSpan,
    pub end: SourceSpan,
    /// Parallel to `Scenario::actors`.
    pub actors: Vec<SourceSpan>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedSimulation {
    pub simulation: Simulation,
    pub sources: Vec<ScenarioSource>,
}

impl ParsedSimulation {
    /// Best span for a diagnostic on scenario `index`, optionally about a
    /// named actor.
    pub fn span_of(&self, index: usize, actor: Option<&str>) -> SourceSpan {
        let Some(src) = self.sources.get(index) else {
            return SourceSpan::START;
        };
        actor
            .and_then(|name| {
                let scenario = &self.simulation.scenarios[index];
                scenario.actors.iter().position(|a| a.name == name)
            })
            .and_then(|i| src.actors.get(i).copied())
            .unwrap_or(src.header)
    }
}

pub fn parse_simulation(text: &str) -> Result<Simulation, Vec<ParseError>> {
    parse_simulation_with_sources(text).map(|p| p.simulation)
}

/// Entry point for untrusted bytes: invalid UTF-8 is a syntax error at the
/// first offending byte.
pub fn parse_simulation_bytes(bytes: &[u8]) -> Result<Simulation, Vec<ParseError>> {
    match core::str::from_utf8(bytes) {
        Ok(text) => parse_simulation(text),
        Err(e) => {
            let prefix = core::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or("");
            let line = prefix.matches('\n').count() + 1;
            let column = prefix.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(alloc::vec![ParseError {
                span: SourceSpan::new(line as u32, column as u32),
                code: ParseErrorCode::Syntax,
                message: String::from("input is not valid UTF-8"),
            }])
        }
    }
}

pub fn parse_simulation_with_sources(text: &str) -> Result<ParsedSimulation, Vec<ParseError>> {
    let mut p = Parser::default();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        p.line(i as u32 + 1, line);
    }
    p.finish()
}

#[derive(Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    col: u32,
}

/// Splits a line into whitespace-separated tokens, dropping any `#` comment.
/// A token starting with `"` extends to the closing quote.
fn tokenize(line: &str) -> Result<Vec<Token<'_>>, (u32, &'static str)> {
    let mut tokens = Vec::new();
    let mut chars = line.char_indices().peekable();
    let mut col = 0u32;
    while let Some(&(start, c)) = chars.peek() {
        if c == ' ' || c == '\t' {
            chars.next();
            col += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let start_col = col + 1;
        let mut end = start;
        let mut in_quote = false;
        let mut first = true;
        while let Some(&(i, c)) = chars.peek() {
            if !in_quote && (c == ' ' || c == '\t' || c == '#') {
                break;
            }
            if c == '"' && (first || in_quote) {
                in_quote = !in_quote;
            }
            first = false;
            chars.next();
            col += 1;
            end = i + c.len_utf8();
        }
        if in_quote {
            return Err((start_col, "unterminated quoted string"));
        }
        tokens.push(Token {
            text: &line[start..end],
            col: start_col,
        });
    }
    Ok(tokens)
}

#[derive(Default)]
struct Block {
    header: SourceSpan,
    test_num: Option<u32>,
    name: String,
    spawn: Option<Pose>,
    spawn_seen: bool,
    target: Option<Vec2>,
    target_seen: bool,
    corridor: Option<Corridor>,
    corridor_seen: bool,
    groups: BTreeMap<u32, Side>,
    actors: Vec<ActorSpec>,
    actor_spans: Vec<SourceSpan>,
    names: BTreeSet<String>,
    broken: bool,
}

#[derive(Default)]
struct Parser {
    errors: Vec<ParseError>,
    block: Option<Block>,
    scenarios: Vec<Scenario>,
    sources: Vec<ScenarioSource>,
}

/// key=value arguments of one directive.
struct Args<'a> {
    line: u32,
    directive_col: u32,
    directive: &'a str,
    pairs: Vec<(&'a str, &'a str, u32)>,
    errors: Vec<ParseError>,
}

impl<'a> Args<'a> {
    fn new(line: u32, head: Token<'a>, rest: &[Token<'a>], allowed: &[&str]) -> Self {
        let mut args = Args {
            line,
            directive_col: head.col,
            directive: head.text,
            pairs: Vec::new(),
            errors: Vec::new(),
        };
        for tok in rest {
            let Some((key, value)) = tok.text.split_once('=') else {
                args.error(tok.col, ParseErrorCode::Syntax, format!("expected key=value, found `{}`", tok.text));
                continue;
            };
            if !allowed.contains(&key) {
                args.error(
                    tok.col,
                    ParseErrorCode::UnknownKey,
                    format!("`{}` does not take key `{key}`", head.text),
                );
            } else if args.pairs.iter().any(|(k, _, _)| *k == key) {
                args.error(tok.col, ParseErrorCode::Syntax, format!("key `{key}` given twice"));
            } else {
                args.pairs.push((key, value, tok.col));
            }
        }
        args
    }

    fn error(&mut self, col: u32, code: ParseErrorCode, message: String) {
        self.errors.push(ParseError {
            span: SourceSpan::new(self.line, col),
            code,
            message,
        });
    }

    fn raw(&mut self, key: &str, required: bool) -> Option<(&'a str, u32)> {
        let found = self.pairs.iter().find(|(k, _, _)| *k == key).map(|&(_, v, c)| (v, c));
        if found.is_none() && required {
            let msg = format!("`{}` requires `{key}=`", self.directive);
            self.error(self.directive_col, ParseErrorCode::Syntax, msg);
        }
        found
    }

    fn number(&mut self, key: &str, required: bool) -> Option<f64> {
        let (v, col) = self.raw(key, required)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                self.error(col, ParseErrorCode::BadNumber, format!("`{key}` needs a finite number, found `{v}`"));
                None
            }
        }
    }

    fn integer(&mut self, key: &str) -> Option<u32> {
        let (v, col) = self.raw(key, true)?;
        match parse_u32(v) {
            Some(n) => Some(n),
            None => {
                self.error(col, ParseErrorCode::BadNumber, format!("`{key}` needs an unsigned integer, found `{v}`"));
                None
            }
        }
    }

    fn word(&mut self, key: &str, valid: fn(&str) -> bool, what: &str) -> Option<&'a str> {
        let (v, col) = self.raw(key, true)?;
        if valid(v) {
            Some(v)
        } else {
            self.error(col, ParseErrorCode::Syntax, format!("`{key}` must be {what}, found `{v}`"));
            None
        }
    }

    fn choice<T>(&mut self, key: &str, parse: fn(&str) -> Option<T>, options: &str) -> Option<T> {
        let (v, col) = self.raw(key, true)?;
        let parsed = parse(v);
        if parsed.is_none() {
            self.error(col, ParseErrorCode::Syntax, format!("`{key}` must be one of {options}, found `{v}`"));
        }
        parsed
    }
}

fn parse_u32(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

const NAME_RULE: &str = "an identifier ([A-Za-z0-9_-]+)";
const LABEL_RULE: &str = "a kind label ([A-Za-z0-9_.-]+)";

impl Parser {
    fn error(&mut self, span: SourceSpan, code: ParseErrorCode, message: impl Into<String>) {
        self.errors.push(ParseError {
            span,
            code,
            message: message.into(),
        });
    }

    fn line(&mut self, n: u32, line: &str) {
        let tokens = match tokenize(line) {
            Ok(t) => t,
            Err((col, msg)) => {
                self.error(SourceSpan::new(n, col), ParseErrorCode::Syntax, msg);
                if let Some(b) = self.block.as_mut() {
                    b.broken = true;
                }
                return;
            }
        };
        let Some((&head, rest)) = tokens.split_first() else {
            return;
        };
        let span = SourceSpan::new(n, head.col);
        match head.text {
            "scenario" => self.open(span, rest),
            "end" => {
                if let Some(extra) = rest.first() {
                    self.error(SourceSpan::new(n, extra.col), ParseErrorCode::Syntax, "`end` takes no arguments");
                }
                match self.block.take() {
                    Some(block) => self.close(block, span),
                    None => self.error(span, ParseErrorCode::Syntax, "`end` without an open scenario"),
                }
            }
            "spawn" | "target" | "corridor" | "group" | "ped" | "vehicle" | "prop" => {
                if self.block.is_none() {
                    self.error(span, ParseErrorCode::Syntax, format!("`{}` outside a scenario block", head.text));
                    return;
                }
                let errors_before = self.errors.len();
                self.directive(n, head, rest);
                if self.errors.len() > errors_before {
                    if let Some(b) = self.block.as_mut() {
                        b.broken = true;
                    }
                }
            }
            other => {
                self.error(span, ParseErrorCode::Syntax, format!("unknown directive `{other}`"));
                if let Some(b) = self.block.as_mut() {
                    b.broken = true;
                }
            }
        }
    }

    fn open(&mut self, span: SourceSpan, rest: &[Token<'_>]) {
        if let Some(prev) = self.block.take() {
            self.error(
                prev.header,
                ParseErrorCode::UnterminatedScenario,
                "scenario is not closed with `end` before the next `scenario`",
            );
        }
        let mut block = Block {
            header: span,
            ..Block::default()
        };
        match rest {
            [num, name] => {
                block.test_num = parse_u32(num.text);
                if block.test_num.is_none() {
                    self.error(
                        SourceSpan::new(span.line, num.col),
                        ParseErrorCode::BadNumber,
                        format!("test number must be an unsigned integer, found `{}`", num.text),
                    );
                }
                let quoted = name
                    .text
                    .strip_prefix('"')
                    .and_then(|s| s.strip_suffix('"'))
                    .filter(|s| is_valid_scenario_name(s));
                match quoted {
                    Some(s) => block.name = s.to_string(),
                    None => self.error(
                        SourceSpan::new(span.line, name.col),
                        ParseErrorCode::Syntax,
                        "scenario name must be a double-quoted string without quotes or control characters",
                    ),
                }
            }
            _ => self.error(span, ParseErrorCode::Syntax, "expected `scenario <test_num> \"<name>\"`"),
        }
        block.broken = block.test_num.is_none() || self.errors.last().is_some_and(|e| e.span.line == span.line);
        self.block = Some(block);
    }

    fn directive(&mut self, n: u32, head: Token<'_>, rest: &[Token<'_>]) {
        let span = SourceSpan::new(n, head.col);
        let new_errors: Vec<ParseError>;
        // borrowck: the block is taken and put back around the argument parsing
        let mut block = self.block.take().expect("checked by caller");
        match head.text {
            "spawn" => {
                let mut a = Args::new(n, head, rest, &["x", "y", "heading_deg", "speed"]);
                let (x, y) = (a.number("x", true), a.number("y", true));
                let heading = a.number("heading_deg", true);
                let speed = a.number("speed", true);
                if block.spawn_seen {
                    a.error(head.col, ParseErrorCode::Syntax, String::from("`spawn` given twice"));
                }
                block.spawn_seen = true;
                if let (Some(x), Some(y), Some(heading_deg), Some(speed)) = (x, y, heading, speed) {
                    block.spawn = Some(Pose {
                        position: Vec2::new(x, y),
                        heading_deg,
                        speed,
                    });
                }
                new_errors = a.errors;
            }
            "target" => {
                let mut a = Args::new(n, head, rest, &["x", "y"]);
                let (x, y) = (a.number("x", true), a.number("y", true));
                if block.target_seen {
                    a.error(head.col, ParseErrorCode::Syntax, String::from("`target` given twice"));
                }
                block.target_seen = true;
                if let (Some(x), Some(y)) = (x, y) {
                    block.target = Some(Vec2::new(x, y));
                }
                new_errors = a.errors;
            }
            "corridor" => {
                let mut a = Args::new(n, head, rest, &["x_min", "x_max", "y_end"]);
                let x_min = a.number("x_min", true);
                let x_max = a.number("x_max", true);
                let y_end = a.number("y_end", true);
                if block.corridor_seen {
                    a.error(head.col, ParseErrorCode::Syntax, String::from("`corridor` given twice"));
                }
                block.corridor_seen = true;
                if let (Some(x_min), Some(x_max), Some(y_end)) = (x_min, x_max, y_end) {
                    block.corridor = Some(Corridor { x_min, x_max, y_end });
                }
                new_errors = a.errors;
            }
            "group" => {
                let mut a = Args::new(n, head, rest, &["id", "side"]);
                let id = a.integer("id");
                let side = a.choice("side", Side::parse, "left|right");
                if let (Some(id), Some(side)) = (id, side) {
                    if block.groups.insert(id, side).is_some() {
                        a.error(head.col, ParseErrorCode::Syntax, format!("group {id} declared twice"));
                    }
                }
                new_errors = a.errors;
            }
            "ped" => {
                let mut a = Args::new(
                    n,
                    head,
                    rest,
                    &["name", "group", "x", "y", "age", "gender", "traits", "radius"],
                );
                let name = a.word("name", is_valid_name, NAME_RULE);
                let group = a.integer("group");
                let (x, y) = (a.number("x", true), a.number("y", true));
                let age = a.integer("age");
                let gender = a.choice("gender", Gender::parse, "male|female|unspecified");
                let radius = a.number("radius", false);
                let mut traits = Some(Vec::new());
                if let Some((v, col)) = a.raw("traits", false) {
                    for t in v.split(',').filter(|t| !v.is_empty() || !t.is_empty()) {
                        if is_valid_trait(t) {
                            if let Some(ts) = traits.as_mut() {
                                ts.push(t.to_string());
                            }
                        } else {
                            a.error(col, ParseErrorCode::Syntax, format!("trait `{t}` must match [a-z0-9_]+"));
                            traits = None;
                        }
                    }
                }
                if let (Some(name), Some(group_id), Some(x), Some(y), Some(age), Some(gender), Some(traits)) =
                    (name, group, x, y, age, gender, traits)
                {
                    let actor = ActorSpec::pedestrian(
                        name,
                        Vec2::new(x, y),
                        VictimAttributes {
                            age,
                            gender,
                            group_id,
                        traits,
                        },
                    );
                    let actor = match radius {
                        Some(r) => actor.with_radius(r),
                        None => actor,
                    };
                    Self::add_actor(&mut block, &mut a, span, actor);
                }
                new_errors = a.errors;
            }
            kind @ ("vehicle" | "prop") => {
                let mut a = Args::new(n, head, rest, &["name", "x", "y", "kind", "radius"]);
                let name = a.word("name", is_valid_name, NAME_RULE);
                let (x, y) = (a.number("x", true), a.number("y", true));
                let label = a.word("kind", is_valid_label, LABEL_RULE);
                let radius = a.number("radius", false);
                if let (Some(name), Some(x), Some(y), Some(label)) = (name, x, y, label) {
                    let pos = Vec2::new(x, y);
                    let actor = if kind == "vehicle" {
                        ActorSpec::vehicle(name, pos, label)
                    } else {
                        ActorSpec::prop(name, pos, label)
                    };
                    let actor = match radius {
                        Some(r) => actor.with_radius(r),
                        None => actor,
                    };
                    Self::add_actor(&mut block, &mut a, span, actor);
                }
                new_errors = a.errors;
            }
            _ => unreachable!("directive list checked by caller"),
        }
        self.block = Some(block);
        self.errors.extend(new_errors);
    }

    fn add_actor(block: &mut Block, args: &mut Args<'_>, span: SourceSpan, actor: ActorSpec) {
        if !block.names.insert(actor.name.clone()) {
            args.error(
                span.column,
                ParseErrorCode::DuplicateName,
                format!("actor name `{}` already used in this scenario", actor.name),
            );
            return;
        }
        block.actors.push(actor);
        block.actor_spans.push(span);
    }

    fn close(&mut self, block: Block, end: SourceSpan) {
        let mut complete = true;
        if !block.spawn_seen {
            self.error(end, ParseErrorCode::MissingSpawn, "scenario has no `spawn` line");
            complete = false;
        }
        if !block.corridor_seen {
            self.error(end, ParseErrorCode::MissingCorridor, "scenario has no `corridor` line");
            complete = false;
        }
        if !block.target_seen {
            self.error(end, ParseErrorCode::MissingTarget, "scenario has no `target` line");
            complete = false;
        }
        if !complete || block.broken {
            return;
        }
        let (Some(test_num), Some(spawn), Some(corridor)) = (block.test_num, block.spawn, block.corridor) else {
            return;
        };
        let scenario = Scenario {
            test_num,
            name: block.name,
            spawn,
            target: block.target,
            corridor,
            groups: block.groups,
            actors: block.actors,
        };
        let mut ok = true;
        for d in validate_scenario_with(&scenario, DEFAULT_SUBJECT_RADIUS) {
            if !d.is_error() {
                continue;
            }
            ok = false;
            let span = d
                .actor
                .as_deref()
                .and_then(|name| scenario.actors.iter().position(|a| a.name == name))
                .map_or(block.header, |i| block.actor_spans[i]);
            let code = match d.code {
                DiagnosticCode::MissingTarget => ParseErrorCode::MissingTarget,
                DiagnosticCode::DuplicateName => ParseErrorCode::DuplicateName,
                other => ParseErrorCode::Invalid(other),
            };
            self.error(span, code, d.message);
        }
        if ok {
            self.scenarios.push(scenario);
            self.sources.push(ScenarioSource {
                header: block.header,
                end,
                actors: block.actor_spans,
            });
        }
    }

    fn finish(mut self) -> Result<ParsedSimulation, Vec<ParseError>> {
        if let Some(block) = self.block.take() {
            self.error(
                block.header,
                ParseErrorCode::UnterminatedScenario,
                "scenario is not closed with `end`",
            );
        }
        let mut seen = BTreeSet::new();
        for (s, src) in self.scenarios.iter().zip(&self.sources) {
            if !seen.insert(s.test_num) {
                self.errors.push(ParseError {
                    span: src.header,
                    code: ParseErrorCode::Invalid(DiagnosticCode::DuplicateTestNum),
                    message: format!("test number {} is used by an earlier scenario", s.test_num),
                });
            }
        }
        if self.errors.is_empty() && self.scenarios.is_empty() {
            self.error(SourceSpan::START, ParseErrorCode::Syntax, "file contains no scenario blocks");
        }
        if !self.errors.is_empty() {
            self.errors.sort_by_key(|e| e.span);
            return Err(self.errors);
        }
        Ok(ParsedSimulation {
            simulation: Simulation {
                scenarios: self.scenarios,
                mode: Mode::All,
            },
            sources: self.sources,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvalidSimulation(pub Vec<LintDiagnostic>);

impl fmt::Display for InvalidSimulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("INVALID_SIMULATION")?;
        for d in &self.0 {
            write!(f, "; scenario {}: {}: {}", d.test_num, d.diagnostic.code, d.diagnostic.message)?;
        }
        Ok(())
    }
}

/// Canonical text for a valid simulation. Numbers use the shortest decimal
/// that parses back to the same value, so `parse(serialize(sim)) == sim`.
/// The run mode is not part of the file format.
pub fn serialize_simulation(sim: &Simulation) -> Result<String, InvalidSimulation> {
    let errors: Vec<LintDiagnostic> = lint_simulation(sim)
        .into_iter()
        .filter(|d| d.diagnostic.is_error())
        .collect();
    if !errors.is_empty() || sim.scenarios.is_empty() {
        return Err(InvalidSimulation(errors));
    }
    let mut out = String::new();
    for (i, s) in sim.scenarios.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        // writing into a String cannot fail
        let _ = write_scenario(&mut out, s);
    }
    Ok(out)
}

fn write_scenario(out: &mut String, s: &Scenario) -> fmt::Result {
    writeln!(out, "scenario {} \"{}\"", s.test_num, s.name)?;
    let p = &s.spawn;
    writeln!(
        out,
        "  spawn x={} y={} heading_deg={} speed={}",
        p.position.x, p.position.y, p.heading_deg, p.speed
    )?;
    if let Some(t) = s.target {
        writeln!(out, "  target x={} y={}", t.x, t.y)?;
    }
    let c = &s.corridor;
    writeln!(out, "  corridor x_min={} x_max={} y_end={}", c.x_min, c.x_max, c.y_end)?;
    for (id, side) in &s.groups {
        writeln!(out, "  group id={id} side={}", side.as_str())?;
    }
    for a in &s.actors {
        match (a.kind, &a.attributes) {
            (ActorKind::Pedestrian, Some(attrs)) => {
                write!(
                    out,
                    "  ped name={} group={} x={} y={} age={} gender={}",
                    a.name,
                    attrs.group_id,
                    a.position.x,
                    a.position.y,
                    attrs.age,
                    attrs.gender.as_str()
                )?;
                if !attrs.traits.is_empty() {
                    write!(out, " traits={}", attrs.traits.join(","))?;
                }
                writeln!(out, " radius={}", a.radius)?;
            }
            (kind, _) => {
                let directive = if kind == ActorKind::Vehicle { "vehicle" } else { "prop" };
                writeln!(
                    out,
                    "  {directive} name={} x={} y={} kind={} radius={}",
                    a.name,
                    a.position.x,
                    a.position.y,
                    a.label.as_deref().unwrap_or(""),
                    a.radius
                )?;
            }
        }
    }
    writeln!(out, "end")
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LintDiagnostic {
    /// Index into `Simulation::scenarios`.
    pub scenario: usize,
    pub test_num: u32,
    pub diagnostic: Diagnostic,
}

impl LintDiagnostic {
    fn sort_key(&self) -> (Severity, DiagnosticCode, usize, &Option<String>, &str) {
        let d = &self.diagnostic;
        (d.severity, d.code, self.scenario, &d.actor, &d.message)
    }
}

pub fn lint_simulation(sim: &Simulation) -> Vec<LintDiagnostic> {
    lint_simulation_with(sim, DEFAULT_SUBJECT_RADIUS)
}

/// Per-scenario validation plus cross-scenario checks, sorted by
/// (severity, code, scenario index, actor, message).
pub fn lint_simulation_with(sim: &Simulation, vehicle_radius: f64) -> Vec<LintDiagnostic> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, s) in sim.scenarios.iter().enumerate() {
        for diagnostic in validate_scenario_with(s, vehicle_radius) {
            out.push(LintDiagnostic {
                scenario: i,
                test_num: s.test_num,
                diagnostic,
            });
        }
        if !seen.insert(s.test_num) {
            out.push(LintDiagnostic {
                scenario: i,
                test_num: s.test_num,
                diagnostic: Diagnostic {
                    severity: Severity::Error,
                    code: DiagnosticCode::DuplicateTestNum,
                    actor: None,
                    message: format!("test number {} is used by an earlier scenario", s.test_num),
                },
            });
        }
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}
