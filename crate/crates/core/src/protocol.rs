//! Session messages: newline-delimited JSON, one object per line.
//!
//! Every object carries `"type"` and `"protocol_version"`; the remaining
//! fields depend on the type. Unknown fields are ignored when decoding.
//!
//! ```text
//! {"type":"HELLO","protocol_version":1,"scenario_file":"demo.trly","mode":"all","pacing":"lockstep","role":"agent"}
//! {"type":"ACTION","protocol_version":1,"tick":5,"control":"LEFT"}
//! ```

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::record::{is_valid_session_id, DecisionRecord, SubjectRole};
use crate::scenario::{Mode, Simulation};
use crate::sim::{Control, Observation, ScenarioLayout};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    All,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    Realtime,
    Lockstep,
}

impl Pacing {
    pub fn as_str(self) -> &'static str {
        match self {
            Pacing::Realtime => "realtime",
            Pacing::Lockstep => "lockstep",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientRole {
    Human,
    Agent,
    /// Read-only observer of another session's STATE stream.
    Spectator,
}

/// Session request. Omitted options fall back to the server's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub scenario_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_num: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pacing: Option<Pacing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ClientRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Requested session id; derived from the configuration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    /// Session to observe, for spectators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watch: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    VersionMismatch,
    UnknownScenarioFile,
    BadConfig,
    ProtocolViolation,
    MalformedMessage,
    Timeout,
    IoError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello(Hello),
    Welcome {
        session_id: String,
    },
    ScenarioStart(ScenarioLayout),
    State(Observation),
    Action {
        tick: u32,
        control: Control,
    },
    Collision {
        tick: u32,
        actor: String,
        /// `Collided with <group member names>`.
        message: String,
    },
    EpisodeEnd {
        record: DecisionRecord,
    },
    SimEnd {
        records: Vec<DecisionRecord>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "HELLO",
            Message::Welcome { .. } => "WELCOME",
            Message::ScenarioStart(_) => "SCENARIO_START",
            Message::State(_) => "STATE",
            Message::Action { .. } => "ACTION",
            Message::Collision { .. } => "COLLISION",
            Message::EpisodeEnd { .. } => "EPISODE_END",
            Message::SimEnd { .. } => "SIM_END",
            Message::Error { .. } => "ERROR",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error {
            code,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub protocol_version: u32,
    pub message: Message,
}

impl Envelope {
    pub fn new(message: Message) -> Self {
        Envelope {
            protocol_version: PROTOCOL_VERSION,
            message,
        }
    }
}

impl From<Message> for Envelope {
    fn from(message: Message) -> Self {
        Envelope::new(message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MalformedMessage {
    /// Byte offset into the line where decoding failed.
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for MalformedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MALFORMED_MESSAGE at byte {}: {}", self.offset, self.reason)
    }
}

/// One JSON object followed by `\n`.
pub fn encode(envelope: &Envelope) -> String {
    let mut value = serde_json::to_value(&envelope.message).expect("messages always serialize");
    if let Value::Object(map) = &mut value {
        map.insert("protocol_version".to_owned(), Value::from(envelope.protocol_version));
    }
    let mut line = serde_json::to_string(&value).expect("values always serialize");
    line.push('\n');
    line
}

pub fn encode_message(message: Message) -> String {
    encode(&Envelope::new(message))
}

fn offset_of(line: &[u8], row: usize, column: usize) -> usize {
    let mut start = 0;
    for _ in 1..row {
        match line[start..].iter().position(|&b| b == b'\n') {
            Some(i) => start += i + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(line.len())
}

/// Decodes one line (a trailing `\n` or `\r\n` is allowed).
pub fn decode(line: &[u8]) -> Result<Envelope, MalformedMessage> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    let text = core::str::from_utf8(body).map_err(|e| MalformedMessage {
        offset: e.valid_up_to(),
        reason: String::from("not valid UTF-8"),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| MalformedMessage {
        offset: offset_of(body, e.line(), e.column()),
        reason: format!("{e}"),
    })?;
    let Value::Object(mut map) = value else {
        return Err(MalformedMessage {
            offset: 0,
            reason: String::from("expected a JSON object"),
        });
    };
    let version = map
        .remove("protocol_version")
        .and_then(|v| v.as_u64())
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| MalformedMessage {
            offset: 0,
            reason: String::from("missing or invalid protocol_version"),
        })?;
    let message = serde_json::from_value(Value::Object(map)).map_err(|e| MalformedMessage {
        offset: 0,
        reason: format!("{e}"),
    })?;
    Ok(Envelope {
        protocol_version: version,
        message,
    })
}

/// A validated session request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub scenario_file: String,
    pub mode: Mode,
    pub pacing: Pacing,
    pub role: SubjectRole,
    pub seed: u64,
}

/// Server-side fallbacks for options a HELLO leaves out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionDefaults {
    pub mode: Mode,
    pub pacing: Pacing,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        SessionDefaults {
            mode: Mode::All,
            pacing: Pacing::Lockstep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadConfig(pub String);

impl fmt::Display for BadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BAD_CONFIG: {}", self.0)
    }
}

impl SessionConfig {
    /// Resolves a controlling client's HELLO against the loaded file.
    pub fn from_hello(hello: &Hello, defaults: SessionDefaults, sim: &Simulation) -> Result<Self, BadConfig> {
        let role = match hello.role.unwrap_or(ClientRole::Agent) {
            ClientRole::Human => SubjectRole::Human,
            ClientRole::Agent => SubjectRole::Agent,
            ClientRole::Spectator => return Err(BadConfig(String::from("spectators do not drive a session"))),
        };
        let pacing = hello.pacing.unwrap_or(match role {
            SubjectRole::Human => Pacing::Realtime,
            SubjectRole::Agent => defaults.pacing,
        });
        if pacing == Pacing::Lockstep && role != SubjectRole::Agent {
            return Err(BadConfig(String::from("lockstep pacing requires role agent")));
        }
        let mode = match (hello.mode, hello.test_num) {
            (None, None) => defaults.mode,
            (Some(ModeName::All), None) => Mode::All,
            (Some(ModeName::Single) | None, Some(n)) => Mode::Single(n),
            (Some(ModeName::Single), None) => {
                return Err(BadConfig(String::from("mode single needs test_num")));
            }
            (Some(ModeName::All), Some(_)) => {
                return Err(BadConfig(String::from("test_num is only valid with mode single")));
            }
        };
        if let Mode::Single(n) = mode {
            if sim.scenario(n).is_none() {
                return Err(BadConfig(format!("{} has no scenario with test_num {n}", hello.scenario_file)));
            }
        }
        if let Some(id) = &hello.session_id {
            if !is_valid_session_id(id) {
                return Err(BadConfig(String::from("session_id must be non-empty without whitespace or control characters")));
            }
        }
        Ok(SessionConfig {
            scenario_file: hello.scenario_file.clone(),
            mode,
            pacing,
            role,
            seed: hello.seed.unwrap_or(0),
        })
    }
}

/// Body of `GET /scenarios`: every scenario file the server can run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioList {
    pub protocol_version: u32,
    pub files: Vec<ScenarioFileEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFileEntry {
    /// Name to put in `HELLO.scenario_file`.
    pub scenario_file: String,
    pub file_id: String,
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub test_num: u32,
    pub name: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_simulation;
    use alloc::string::ToString;

    #[test]
    fn action_line() {
        let line = encode_message(Message::Action {
            tick: 5,
            control: Control::Left,
        });
        assert_eq!(line, "{\"control\":\"LEFT\",\"protocol_version\":1,\"tick\":5,\"type\":\"ACTION\"}\n");
        let back = decode(line.as_bytes()).unwrap();
        assert_eq!(back.protocol_version, 1);
        assert_eq!(
            back.message,
            Message::Action {
                tick: 5,
                control: Control::Left
            }
        );
    }

    #[test]
    fn truncated_line_is_malformed() {
        let err = decode(br#"{"type":"ACTION","protocol_version":1,"tick":5"#).unwrap_err();
        assert!(err.offset > 0);
        assert!(err.offset <= 46);
    }

    #[test]
    fn unknown_fields_ignored() {
        let m = decode(br#"{"type":"ACTION","protocol_version":1,"tick":2,"control":"NONE","extra":[1,2]}"#).unwrap();
        assert_eq!(
            m.message,
            Message::Action {
                tick: 2,
                control: Control::Straight
            }
        );
    }

    #[test]
    fn missing_version_or_type() {
        assert!(decode(br#"{"type":"ACTION","tick":2,"control":"NONE"}"#).is_err());
        assert!(decode(br#"{"protocol_version":1,"tick":2}"#).is_err());
        assert!(decode(br#"[1,2]"#).is_err());
        assert!(decode(b"\xff").is_err());
    }

    #[test]
    fn hello_defaults_and_errors() {
        let sim = parse_simulation(
            "scenario 2 \"x\"\nspawn x=0 y=0 heading_deg=0 speed=0\ntarget x=0 y=9\ncorridor x_min=-5 x_max=5 y_end=50\nend\n",
        )
        .unwrap();
        let mut hello = Hello {
            scenario_file: "a.trly".to_string(),
            ..Hello::default()
        };
        let cfg = SessionConfig::from_hello(&hello, SessionDefaults::default(), &sim).unwrap();
        assert_eq!((cfg.mode, cfg.pacing, cfg.role), (Mode::All, Pacing::Lockstep, SubjectRole::Agent));

        hello.test_num = Some(7);
        assert!(SessionConfig::from_hello(&hello, SessionDefaults::default(), &sim).is_err());
        hello.test_num = Some(2);
        hello.mode = Some(ModeName::Single);
        let cfg = SessionConfig::from_hello(&hello, SessionDefaults::default(), &sim).unwrap();
        assert_eq!(cfg.mode, Mode::Single(2));

        hello.role = Some(ClientRole::Human);
        hello.pacing = Some(Pacing::Lockstep);
        assert!(SessionConfig::from_hello(&hello, SessionDefaults::default(), &sim).is_err());
        hello.pacing = None;
        let cfg = SessionConfig::from_hello(&hello, SessionDefaults::default(), &sim).unwrap();
        assert_eq!(cfg.pacing, Pacing::Realtime);
    }
}
