//! Decision records, action traces and their tab-separated line formats.
//!
//! Decision log line (LF terminated, fields separated by a single tab):
//!
//! ```text
//! session_id  test_num  outcome  group_member_names  impact_speed  tick  subject_role  scenario_name
//! ```
//!
//! `outcome` is `group:<id>` or `timeout`; `impact_speed` always carries six
//! decimals, rounded half to even. Action trace lines are
//!
//! ```text
//! session_id  file_id  test_num  subject_role  CONTROL*count,CONTROL*count,...
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scenario::group_member_names;
use crate::sim::{Control, EpisodePhase, EpisodeState, Outcome};

pub const RECORD_FIELDS: usize = 8;
pub const TRACE_FIELDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectRole {
    Human,
    Agent,
}

impl SubjectRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectRole::Human => "human",
            SubjectRole::Agent => "agent",
        }
    }

    pub fn parse(s: &str) -> Option<SubjectRole> {
        match s {
            "human" => Some(SubjectRole::Human),
            "agent" => Some(SubjectRole::Agent),
            _ => None,
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Outcome::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad outcome `{s}`")))
    }
}

/// Session-level fields stamped onto every record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordContext {
    pub session_id: String,
    pub role: SubjectRole,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadSessionId;

impl fmt::Display for BadSessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("session id must be non-empty and free of tabs, control characters and spaces")
    }
}

pub fn is_valid_session_id(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_control() || c.is_whitespace())
}

impl RecordContext {
    pub fn new(session_id: impl Into<String>, role: SubjectRole) -> Result<Self, BadSessionId> {
        let session_id = session_id.into();
        if !is_valid_session_id(&session_id) {
            return Err(BadSessionId);
        }
        Ok(RecordContext { session_id, role })
    }
}

/// Outcome of one episode as persisted in the decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub session_id: String,
    pub test_num: u32,
    pub outcome: Outcome,
    /// Canonical member string of the hit group; empty for a timeout.
    pub group_member_names: String,
    /// Already quantized to six decimals, see [`quantize`].
    pub impact_speed: f64,
    pub tick: u32,
    pub subject_role: SubjectRole,
    pub scenario_name: String,
}

/// Rounds to the six-decimal value the log will show, so that records read
/// back from a log compare equal to the ones written.
pub fn quantize(value: f64) -> f64 {
    format!("{value:.6}").parse().unwrap_or(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WrongPhase(pub EpisodePhase);

impl fmt::Display for WrongPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WRONG_PHASE: episode is {:?}", self.0)
    }
}

pub fn make_decision_record(ctx: &RecordContext, episode: &EpisodeState) -> Result<DecisionRecord, WrongPhase> {
    let EpisodePhase::Collided(outcome) = episode.phase() else {
        return Err(WrongPhase(episode.phase()));
    };
    let scenario = episode.scenario();
    let group_member_names = match outcome {
        Outcome::Group(g) => group_member_names(scenario, g).unwrap_or_default(),
        Outcome::Timeout => String::new(),
    };
    Ok(DecisionRecord {
        session_id: ctx.session_id.clone(),
        test_num: scenario.test_num,
        outcome,
        group_member_names,
        impact_speed: quantize(episode.impact_speed()),
        tick: episode.tick(),
        subject_role: ctx.role,
        scenario_name: scenario.name.clone(),
    })
}

/// Log line for one record, including the trailing LF.
pub fn format_record(r: &DecisionRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\n",
        r.session_id,
        r.test_num,
        r.outcome,
        r.group_member_names,
        r.impact_speed,
        r.tick,
        r.subject_role.as_str(),
        r.scenario_name
    )
}

pub fn format_records<'a>(records: impl IntoIterator<Item = &'a DecisionRecord>) -> String {
    records.into_iter().map(format_record).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn is_six_decimal(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    match digits.split_once('.') {
        Some((int, frac)) => {
            !int.is_empty()
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.len() == 6
                && frac.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

fn parse_uint<T: FromStr>(field: &str, what: &str) -> Result<T, String> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("{what} `{field}` is not an unsigned integer"));
    }
    field.parse().map_err(|_| format!("{what} `{field}` is out of range"))
}

/// Parses one log line (without its line terminator).
pub fn parse_record(line: &str) -> Result<DecisionRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != RECORD_FIELDS {
        return Err(format!("expected {RECORD_FIELDS} fields, found {}", fields.len()));
    }
    if !is_valid_session_id(fields[0]) {
        return Err(String::from("bad session id"));
    }
    let outcome = Outcome::parse(fields[2]).ok_or_else(|| format!("bad outcome `{}`", fields[2]))?;
    let names = fields[3];
    match outcome {
        Outcome::Group(_) if names.is_empty() => {
            return Err(String::from("group outcome with empty member names"));
        }
        Outcome::Timeout if !names.is_empty() => {
            return Err(String::from("timeout outcome with member names"));
        }
        _ => {}
    }
    if !is_six_decimal(fields[4]) {
        return Err(format!("impact speed `{}` must have exactly six decimals", fields[4]));
    }
    let impact_speed: f64 = fields[4].parse().map_err(|_| String::from("bad impact speed"))?;
    let subject_role =
        SubjectRole::parse(fields[6]).ok_or_else(|| format!("bad subject role `{}`", fields[6]))?;
    Ok(DecisionRecord {
        session_id: fields[0].to_string(),
        test_num: parse_uint(fields[1], "test_num")?,
        outcome,
        group_member_names: names.to_string(),
        impact_speed,
        tick: parse_uint(fields[5], "tick")?,
        subject_role,
        scenario_name: fields[7].to_string(),
    })
}

/// Records parsed from a log, plus an error for every malformed line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadRecords {
    pub records: Vec<DecisionRecord>,
    pub errors: Vec<LineError>,
}

pub fn read_records(text: &str) -> ReadRecords {
    let mut out = ReadRecords::default();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        match parse_record(line) {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(LineError { line: i + 1, message }),
        }
    }
    out
}

/// Controls of one episode, run-length encoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionTrace {
    pub session_id: String,
    pub test_num: u32,
    pub controls: Vec<(Control, u32)>,
}

impl ActionTrace {
    pub fn total_ticks(&self) -> u64 {
        self.controls.iter().map(|&(_, n)| u64::from(n)).sum()
    }

    pub fn expand(&self) -> impl Iterator<Item = Control> + '_ {
        self.controls
            .iter()
            .flat_map(|&(c, n)| core::iter::repeat(c).take(n as usize))
    }
}

/// One trace line: the trace plus the ids needed to replay it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    /// Content hash of the scenario file the episode ran on.
    pub file_id: String,
    pub role: SubjectRole,
    pub trace: ActionTrace,
}

pub fn format_trace(e: &TraceEntry) -> String {
    let rle: Vec<String> = e
        .trace
        .controls
        .iter()
        .map(|(c, n)| format!("{}*{}", c.as_str(), n))
        .collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\n",
        e.trace.session_id,
        e.file_id,
        e.trace.test_num,
        e.role.as_str(),
        rle.join(",")
    )
}

pub fn parse_trace(line: &str) -> Result<TraceEntry, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != TRACE_FIELDS {
        return Err(format!("expected {TRACE_FIELDS} fields, found {}", fields.len()));
    }
    if !is_valid_session_id(fields[0]) {
        return Err(String::from("bad session id"));
    }
    let role = SubjectRole::parse(fields[3]).ok_or_else(|| format!("bad subject role `{}`", fields[3]))?;
    let mut controls = Vec::new();
    if !fields[4].is_empty() {
        for run in fields[4].split(',') {
            let (c, n) = run.split_once('*').ok_or_else(|| format!("bad control run `{run}`"))?;
            let control = Control::parse(c).ok_or_else(|| format!("bad control `{c}`"))?;
            let count: u32 = parse_uint(n, "run length")?;
            if count == 0 {
                return Err(String::from("zero-length control run"));
            }
            controls.push((control, count));
        }
    }
    Ok(TraceEntry {
        file_id: fields[1].to_string(),
        role,
        trace: ActionTrace {
            session_id: fields[0].to_string(),
            test_num: parse_uint(fields[2], "test_num")?,
            controls,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(outcome: Outcome, speed: f64) -> DecisionRecord {
        DecisionRecord {
            session_id: "sess-1".into(),
            test_num: 3,
            outcome,
            group_member_names: match outcome {
                Outcome::Group(_) => "p1:30:female:pregnant".into(),
                Outcome::Timeout => String::new(),
            },
            impact_speed: quantize(speed),
            tick: 240,
            subject_role: SubjectRole::Agent,
            scenario_name: "two lanes".into(),
        }
    }

    #[test]
    fn line_format() {
        assert_eq!(
            format_record(&rec(Outcome::Group(1), 10.05)),
            "sess-1\t3\tgroup:1\tp1:30:female:pregnant\t10.050000\t240\tagent\ttwo lanes\n"
        );
        assert_eq!(
            format_record(&rec(Outcome::Timeout, 0.0)),
            "sess-1\t3\ttimeout\t\t0.000000\t240\tagent\ttwo lanes\n"
        );
    }

    #[test]
    fn six_decimals_round_half_even() {
        // 2^-7 and 3·2^-7 are exact binary ties at the sixth decimal
        assert_eq!(format!("{:.6}", 0.0078125), "0.007812");
        assert_eq!(format!("{:.6}", 0.0234375), "0.023438");
        assert_eq!(quantize(0.0078125), 0.007812);
    }

    #[test]
    fn read_back() {
        let rs = vec![rec(Outcome::Group(1), 12.0), rec(Outcome::Timeout, 0.0), rec(Outcome::Group(0), 3.1415926)];
        let text = format_records(&rs);
        let back = read_records(&text);
        assert!(back.errors.is_empty());
        assert_eq!(back.records, rs);
    }

    #[test]
    fn malformed_line_reported_others_kept() {
        let good = format_record(&rec(Outcome::Group(1), 12.0));
        let text = format!("{good}a\tb\tc\td\te\n{good}");
        let back = read_records(&text);
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.errors.len(), 1);
        assert_eq!(back.errors[0].line, 2);
    }

    #[test]
    fn empty_log() {
        assert_eq!(read_records(""), ReadRecords::default());
    }

    #[test]
    fn rejects_bad_fields() {
        let line = "s\t1\tgroup:1\t\t1.000000\t3\tagent\tx";
        assert!(parse_record(line).is_err());
        let line = "s\t1\ttimeout\t\t1.0\t3\tagent\tx";
        assert!(parse_record(line).is_err());
        let line = "s\t1\tgroup:x\tp\t1.000000\t3\tagent\tx";
        assert!(parse_record(line).is_err());
        let line = "s\t+1\ttimeout\t\t1.000000\t3\tagent\tx";
        assert!(parse_record(line).is_err());
    }

    #[test]
    fn trace_line_round_trip() {
        let entry = TraceEntry {
            file_id: "abc123".into(),
            role: SubjectRole::Human,
            trace: ActionTrace {
                session_id: "s".into(),
                test_num: 4,
                controls: vec![(Control::Straight, 12), (Control::Right, 3), (Control::Left, 1)],
            },
        };
        let line = format_trace(&entry);
        assert_eq!(line, "s\tabc123\t4\thuman\tNONE*12,RIGHT*3,LEFT*1\n");
        assert_eq!(parse_trace(line.trim_end()).unwrap(), entry);
        assert_eq!(entry.trace.total_ticks(), 16);
        assert_eq!(entry.trace.expand().count(), 16);
        assert!(parse_trace("s\tf\t1\thuman\tRIGHT*0").is_err());
    }

    #[test]
    fn outcome_strings() {
        assert_eq!(Outcome::parse("group:12"), Some(Outcome::Group(12)));
        assert_eq!(Outcome::parse("group:"), None);
        assert_eq!(Outcome::parse("group:-1"), None);
        assert_eq!(Outcome::parse("timeout"), Some(Outcome::Timeout));
    }
}
