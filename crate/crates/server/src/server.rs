//! Session handshake and driver loops.
//!
//! Each connection gets its own thread, and that thread is the only code that
//! advances its session. Lockstep sessions alternate STATE(t) and ACTION(t);
//! realtime sessions tick on the wall clock with the last received control.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use sha2::{Digest, Sha256};
use trolley_core::protocol::{
    decode, encode_message, ClientRole, ErrorCode, Hello, Message, Pacing, SessionConfig, SessionDefaults,
    PROTOCOL_VERSION,
};
use trolley_core::record::{format_trace, DecisionRecord, TraceEntry};
use trolley_core::scenario::Mode;
use trolley_core::sim::{Control, EpisodePhase, ScenarioLayout, SimParams, SimulationRun, TickEventKind};

use crate::catalog::{Catalog, ScenarioFile};
use crate::sink::Recorder;
use crate::transport::{respond_json, sniff, LineTransport, Sniffed, Transport, WsTransport};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub params: SimParams,
    pub defaults: SessionDefaults,
    /// How long a lockstep session waits for each ACTION.
    pub action_timeout: Duration,
    /// How long a new connection has to send HELLO.
    pub hello_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            params: SimParams::default(),
            defaults: SessionDefaults::default(),
            action_timeout: Duration::from_secs(30),
            hello_timeout: Duration::from_secs(30),
        }
    }
}

/// Session id used when HELLO does not name one: a hash of the file and the
/// resolved configuration, so lockstep runs are reproducible end to end.
pub fn derive_session_id(file_id: &str, config: &SessionConfig) -> String {
    let mode = match config.mode {
        Mode::All => "all".to_owned(),
        Mode::Single(n) => format!("single:{n}"),
    };
    let key = format!(
        "{file_id}|{mode}|{}|{}|{}",
        config.pacing.as_str(),
        config.role.as_str(),
        config.seed
    );
    let digest = Sha256::digest(key.as_bytes());
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("s-{hex}")
}

/// Why a session stopped early. `code: None` means the peer went away and
/// there is nobody left to tell.
#[derive(Debug)]
struct Abort {
    code: Option<ErrorCode>,
    message: String,
}

impl Abort {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Abort {
            code: Some(code),
            message: message.into(),
        }
    }

    fn io(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Abort {
                code: None,
                message: e.to_string(),
            }
        } else {
            Abort::new(ErrorCode::IoError, e.to_string())
        }
    }
}

type Spectators = Mutex<HashMap<String, Vec<Sender<String>>>>;

pub struct Server {
    catalog: Catalog,
    recorder: Recorder,
    config: ServerConfig,
    spectators: Spectators,
}

impl Server {
    pub fn new(catalog: Catalog, recorder: Recorder, config: ServerConfig) -> Arc<Self> {
        Arc::new(Server {
            catalog,
            recorder,
            config,
            spectators: Mutex::new(HashMap::new()),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Accepts connections until the listener fails.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let server = Arc::clone(self);
            thread::spawn(move || server.handle_connection(stream));
        }
        Ok(())
    }

    /// Binds `addr` and serves on a background thread.
    pub fn spawn(self: &Arc<Self>, addr: &str) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let server = Arc::clone(self);
        let handle = thread::spawn(move || server.serve(listener));
        Ok((local, handle))
    }

    pub fn handle_connection(&self, stream: TcpStream) {
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let kind = match sniff(&stream, self.config.hello_timeout) {
            Ok(k) => k,
            Err(e) => {
                debug!("{peer}: {e}");
                return;
            }
        };
        let result = match kind {
            Sniffed::ScenarioList => {
                let body = serde_json::to_string(&self.catalog.list()).expect("lists always serialize");
                respond_json(stream, &body)
            }
            Sniffed::WebSocket => WsTransport::accept(stream).map(|mut t| self.handle_transport(&mut t)),
            Sniffed::Lines => LineTransport::new(stream).map(|mut t| self.handle_transport(&mut t)),
        };
        if let Err(e) = result {
            debug!("{peer}: {e}");
        }
    }

    /// Runs the protocol on an established transport until the session ends.
    pub fn handle_transport(&self, t: &mut dyn Transport) {
        if let Err(abort) = self.session(t) {
            match abort.code {
                Some(code) => {
                    warn!("session aborted: {code:?}: {}", abort.message);
                    let _ = t.send(&encode_message(Message::error(code, abort.message)));
                }
                None => info!("client left: {}", abort.message),
            }
        }
    }

    fn session(&self, t: &mut dyn Transport) -> Result<(), Abort> {
        let deadline = Instant::now() + self.config.hello_timeout;
        let line = t
            .recv(deadline)
            .map_err(Abort::io)?
            .ok_or_else(|| Abort::new(ErrorCode::Timeout, "no HELLO received"))?;
        let hello = match read_message(&line)? {
            Message::Hello(h) => h,
            other => {
                return Err(Abort::new(
                    ErrorCode::ProtocolViolation,
                    format!("expected HELLO, got {}", other.kind()),
                ))
            }
        };
        let file = self.catalog.get(&hello.scenario_file).ok_or_else(|| {
            Abort::new(
                ErrorCode::UnknownScenarioFile,
                format!("no scenario file named {:?}", hello.scenario_file),
            )
        })?;
        if hello.role == Some(ClientRole::Spectator) {
            return self.spectate(t, &hello);
        }
        let config = SessionConfig::from_hello(&hello, self.config.defaults, &file.simulation)
            .map_err(|e| Abort::new(ErrorCode::BadConfig, e.0))?;
        let session_id = hello
            .session_id
            .clone()
            .unwrap_or_else(|| derive_session_id(&file.file_id, &config));
        let simulation = file
            .simulation
            .clone()
            .with_mode(config.mode)
            .map_err(|e| Abort::new(ErrorCode::BadConfig, e.to_string()))?;
        let run = SimulationRun::new(simulation, self.config.params, session_id.clone(), config.role)
            .map_err(|e| Abort::new(ErrorCode::BadConfig, e.to_string()))?;

        info!(
            "session {session_id}: {} {:?} {} {}",
            file.name,
            config.mode,
            config.pacing.as_str(),
            config.role.as_str()
        );
        send(t, Message::Welcome {
            session_id: session_id.clone(),
        })?;
        self.spectators.lock().unwrap().entry(session_id.clone()).or_default();
        let result = self.drive(t, run, file, config.pacing);
        self.spectators.lock().unwrap().remove(&session_id);
        let records = result?;
        info!("session {session_id}: finished with {} record(s)", records.len());
        Ok(())
    }

    fn spectate(&self, t: &mut dyn Transport, hello: &Hello) -> Result<(), Abort> {
        let watch = hello
            .watch
            .clone()
            .ok_or_else(|| Abort::new(ErrorCode::BadConfig, "spectators must name a session in watch"))?;
        let (tx, rx) = mpsc::channel();
        match self.spectators.lock().unwrap().get_mut(&watch) {
            Some(list) => list.push(tx),
            None => return Err(Abort::new(ErrorCode::BadConfig, format!("no live session {watch}"))),
        }
        send(t, Message::Welcome { session_id: watch })?;
        for line in rx {
            t.send(&line).map_err(Abort::io)?;
        }
        Ok(())
    }

    fn broadcast(&self, session_id: &str, line: &str) {
        if let Some(list) = self.spectators.lock().unwrap().get_mut(session_id) {
            list.retain(|tx| tx.send(line.to_owned()).is_ok());
        }
    }

    fn drive(
        &self,
        t: &mut dyn Transport,
        mut run: SimulationRun,
        file: &ScenarioFile,
        pacing: Pacing,
    ) -> Result<Vec<DecisionRecord>, Abort> {
        loop {
            send(t, Message::ScenarioStart(ScenarioLayout::of(run.episode())))?;
            match pacing {
                Pacing::Lockstep => self.lockstep_episode(t, &mut run)?,
                Pacing::Realtime => self.realtime_episode(t, &mut run)?,
            }
            run.advance().map_err(|e| Abort::new(ErrorCode::IoError, e.to_string()))?;
            let record = run.records().last().cloned().expect("advance appends a record");
            let trace = run.traces().last().cloned().expect("advance appends a trace");
            self.recorder
                .append_records(std::slice::from_ref(&record))
                .map_err(|e| Abort::new(ErrorCode::IoError, e.to_string()))?;
            let entry = TraceEntry {
                file_id: file.file_id.clone(),
                role: run.context().role,
                trace,
            };
            self.recorder
                .append_traces(vec![format_trace(&entry)])
                .map_err(|e| Abort::new(ErrorCode::IoError, e.to_string()))?;
            send(t, Message::EpisodeEnd { record })?;
            if run.is_ended() {
                let records = run.records().to_vec();
                send(t, Message::SimEnd {
                    records: records.clone(),
                })?;
                return Ok(records);
            }
        }
    }

    /// Advances one tick. Sends STATE afterwards when `send_state` is set,
    /// then COLLISION if a victim was hit. Returns whether the episode ended.
    fn step(&self, t: &mut dyn Transport, run: &mut SimulationRun, control: Control, send_state: bool) -> Result<bool, Abort> {
        let events = run
            .run_tick(control)
            .map_err(|e| Abort::new(ErrorCode::ProtocolViolation, e.to_string()))?;
        let state = encode_message(Message::State(run.episode().observation()));
        self.broadcast(&run.context().session_id, &state);
        if send_state {
            t.send(&state).map_err(Abort::io)?;
        }
        let mut actor = String::new();
        for e in events {
            match e.kind {
                TickEventKind::Hit(name) => actor = name,
                TickEventKind::Display(message) => send(t, Message::Collision {
                    tick: e.tick,
                    actor: actor.clone(),
                    message,
                })?,
                _ => {}
            }
        }
        Ok(run.episode().phase() != EpisodePhase::Running)
    }

    fn lockstep_episode(&self, t: &mut dyn Transport, run: &mut SimulationRun) -> Result<(), Abort> {
        loop {
            let obs = run.episode().observation();
            let pending = obs.tick;
            let state = encode_message(Message::State(obs));
            t.send(&state).map_err(Abort::io)?;
            if pending == 0 {
                self.broadcast(&run.context().session_id, &state);
            }
            let deadline = Instant::now() + self.config.action_timeout;
            let line = t.recv(deadline).map_err(Abort::io)?.ok_or_else(|| {
                Abort::new(
                    ErrorCode::Timeout,
                    format!("no ACTION for tick {pending} within {:?}", self.config.action_timeout),
                )
            })?;
            let control = match read_message(&line)? {
                Message::Action { tick, control } if tick == pending => control,
                Message::Action { tick, .. } => {
                    return Err(Abort::new(
                        ErrorCode::ProtocolViolation,
                        format!("ACTION for tick {tick}, expected tick {pending}"),
                    ))
                }
                other => {
                    return Err(Abort::new(
                        ErrorCode::ProtocolViolation,
                        format!("expected ACTION, got {}", other.kind()),
                    ))
                }
            };
            if self.step(t, run, control, false)? {
                return Ok(());
            }
        }
    }

    fn realtime_episode(&self, t: &mut dyn Transport, run: &mut SimulationRun) -> Result<(), Abort> {
        let period = Duration::from_secs_f64(run.episode().params().dt);
        let start = Instant::now();
        let mut control = Control::Straight;
        let state = encode_message(Message::State(run.episode().observation()));
        t.send(&state).map_err(Abort::io)?;
        self.broadcast(&run.context().session_id, &state);
        for k in 1u32.. {
            let due = start + period * k;
            // take every ACTION that arrives before the tick is due; the
            // latest one wins whatever tick it names
            while let Some(line) = t.recv(due).map_err(Abort::io)? {
                match read_message(&line)? {
                    Message::Action { control: c, .. } => control = c,
                    other => {
                        return Err(Abort::new(
                            ErrorCode::ProtocolViolation,
                            format!("expected ACTION, got {}", other.kind()),
                        ))
                    }
                }
            }
            if self.step(t, run, control, true)? {
                return Ok(());
            }
        }
        unreachable!("episodes end by t_max_ticks")
    }
}

fn send(t: &mut dyn Transport, message: Message) -> Result<(), Abort> {
    t.send(&encode_message(message)).map_err(Abort::io)
}

fn read_message(line: &[u8]) -> Result<Message, Abort> {
    let envelope = decode(line).map_err(|e| Abort::new(ErrorCode::MalformedMessage, e.to_string()))?;
    if envelope.protocol_version != PROTOCOL_VERSION {
        return Err(Abort::new(
            ErrorCode::VersionMismatch,
            format!(
                "server speaks protocol_version {PROTOCOL_VERSION}, client sent {}",
                envelope.protocol_version
            ),
        ));
    }
    Ok(envelope.message)
}
