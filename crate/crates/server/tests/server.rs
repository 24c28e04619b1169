mod common;

use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{fixture, load};
use trolley_core::protocol::{
    decode, encode, encode_message, ClientRole, Envelope, ErrorCode, Hello, Message, ModeName, Pacing, ScenarioList,
    SessionDefaults,
};
use trolley_core::record::{format_records, read_records};
use trolley_core::sim::{Control, EpisodePhase, EpisodeState, Outcome, SimParams};
use trolley_server::agent::{run_session, Constant, RandomHold};
use trolley_server::catalog::Catalog;
use trolley_server::sink::open_append;
use trolley_server::transport::{LineTransport, Transport, WsTransport};
use trolley_server::{Recorder, Server, ServerConfig};

struct Harness {
    addr: SocketAddr,
    log: tempfile::NamedTempFile,
    traces: tempfile::NamedTempFile,
    _server: Arc<Server>,
}

fn start(config: ServerConfig) -> Harness {
    let names = ["five.trly", "ten.trly", "fork.trly", "open.trly", "forced.trly"];
    let catalog = Catalog::load(&names.map(fixture)).unwrap();
    let log = tempfile::NamedTempFile::new().unwrap();
    let traces = tempfile::NamedTempFile::new().unwrap();
    let recorder = Recorder::spawn(
        Box::new(open_append(log.path()).unwrap()),
        Some(Box::new(open_append(traces.path()).unwrap())),
    );
    let server = Server::new(catalog, recorder, config);
    let (addr, _) = server.spawn("127.0.0.1:0").unwrap();
    Harness {
        addr,
        log,
        traces,
        _server: server,
    }
}

struct Client(LineTransport);

impl Client {
    fn connect(h: &Harness) -> Client {
        Client(LineTransport::connect(&h.addr.to_string()).unwrap())
    }

    fn send(&mut self, m: Message) {
        self.0.send(&encode_message(m)).unwrap();
    }

    fn raw(&mut self, line: &str) {
        self.0.send(line).unwrap();
    }

    fn recv(&mut self) -> Message {
        let line = self
            .0
            .recv(Instant::now() + Duration::from_secs(10))
            .unwrap()
            .expect("server answered in time");
        let env = decode(&line).unwrap();
        assert_eq!(env.protocol_version, 1);
        env.message
    }

    fn closed(&mut self) -> bool {
        matches!(self.0.recv(Instant::now() + Duration::from_secs(5)), Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof)
    }
}

fn hello(file: &str) -> Hello {
    Hello {
        scenario_file: file.into(),
        mode: Some(ModeName::All),
        pacing: Some(Pacing::Lockstep),
        role: Some(ClientRole::Agent),
        ..Hello::default()
    }
}

fn expect_error(m: Message, want: ErrorCode) {
    match m {
        Message::Error { code, .. } => assert_eq!(code, want),
        other => panic!("expected ERROR {want:?}, got {other:?}"),
    }
}

#[test]
fn handshake_welcomes_and_starts_first_scenario() {
    let h = start(ServerConfig::default());
    let mut c = Client::connect(&h);
    c.send(Message::Hello(hello("ten.trly")));
    assert!(matches!(c.recv(), Message::Welcome { session_id } if session_id.starts_with("s-")));
    match c.recv() {
        Message::ScenarioStart(layout) => {
            assert_eq!(layout.test_num, 100);
            assert_eq!(layout.layout_id, 0);
            assert!(!layout.actors.is_empty());
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(c.recv(), Message::State(o) if o.tick == 0));
}

#[test]
fn version_mismatch_closes() {
    let h = start(ServerConfig::default());
    let mut c = Client::connect(&h);
    c.0.send(&encode(&Envelope {
        protocol_version: 99,
        message: Message::Hello(hello("ten.trly")),
    }))
    .unwrap();
    expect_error(c.recv(), ErrorCode::VersionMismatch);
    assert!(c.closed());
}

#[test]
fn handshake_errors() {
    let h = start(ServerConfig::default());
    let cases: Vec<(Hello, ErrorCode)> = vec![
        (
            Hello {
                mode: Some(ModeName::Single),
                test_num: Some(7),
                ..hello("ten.trly")
            },
            ErrorCode::BadConfig,
        ),
        (hello("missing.trly"), ErrorCode::UnknownScenarioFile),
        (
            Hello {
                role: Some(ClientRole::Human),
                ..hello("ten.trly")
            },
            ErrorCode::BadConfig,
        ),
        (
            Hello {
                role: Some(ClientRole::Spectator),
                watch: Some("nobody".into()),
                ..hello("ten.trly")
            },
            ErrorCode::BadConfig,
        ),
    ];
    for (hello, code) in cases {
        let mut c = Client::connect(&h);
        c.send(Message::Hello(hello));
        expect_error(c.recv(), code);
        assert!(c.closed());
    }

    let mut c = Client::connect(&h);
    c.send(Message::Action {
        tick: 0,
        control: Control::Left,
    });
    expect_error(c.recv(), ErrorCode::ProtocolViolation);

    let mut c = Client::connect(&h);
    c.raw("{\"type\":\"HELLO\",\"protocol_version\":1,\"scenario_file\":\"ten.tr");
    expect_error(c.recv(), ErrorCode::MalformedMessage);
}

fn enter_episode(c: &mut Client, hello: Hello) {
    c.send(Message::Hello(hello));
    assert!(matches!(c.recv(), Message::Welcome { .. }));
    assert!(matches!(c.recv(), Message::ScenarioStart(_)));
    assert!(matches!(c.recv(), Message::State(o) if o.tick == 0));
}

#[test]
fn wrong_tick_and_wrong_message_are_violations() {
    let h = start(ServerConfig::default());
    let mut c = Client::connect(&h);
    enter_episode(&mut c, hello("fork.trly"));
    c.send(Message::Action {
        tick: 3,
        control: Control::Left,
    });
    expect_error(c.recv(), ErrorCode::ProtocolViolation);
    assert!(c.closed());

    let mut c = Client::connect(&h);
    enter_episode(&mut c, hello("fork.trly"));
    c.send(Message::Hello(hello("fork.trly")));
    expect_error(c.recv(), ErrorCode::ProtocolViolation);

    let mut c = Client::connect(&h);
    enter_episode(&mut c, hello("fork.trly"));
    c.raw("not json");
    expect_error(c.recv(), ErrorCode::MalformedMessage);
}

#[test]
fn silent_agent_times_out() {
    let h = start(ServerConfig {
        action_timeout: Duration::from_millis(200),
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&h);
    enter_episode(&mut c, hello("fork.trly"));
    expect_error(c.recv(), ErrorCode::Timeout);
}

#[test]
fn right_turn_hits_right_group_like_the_simulator() {
    let h = start(ServerConfig::default());
    let mut c = Client::connect(&h);
    enter_episode(&mut c, hello("fork.trly"));
    let mut tick = 0;
    let (collision_tick, actor, message) = loop {
        c.send(Message::Action {
            tick,
            control: Control::Right,
        });
        match c.recv() {
            Message::State(o) => tick = o.tick,
            Message::Collision { tick, actor, message } => break (tick, actor, message),
            other => panic!("{other:?}"),
        }
    };
    let Message::EpisodeEnd { record } = c.recv() else { panic!() };
    let Message::SimEnd { records } = c.recv() else { panic!() };
    assert_eq!(records, vec![record.clone()]);

    // the same run, straight on the simulation core
    let file = load("fork.trly");
    let mut ep = EpisodeState::new(file.simulation.scenarios[0].clone(), SimParams::default(), 0).unwrap();
    while ep.phase() == EpisodePhase::Running {
        ep.run_tick(Control::Right).unwrap();
    }
    assert_eq!(ep.phase(), EpisodePhase::Collided(Outcome::Group(1)));
    assert_eq!(record.outcome, Outcome::Group(1));
    assert_eq!(record.tick, ep.tick());
    assert_eq!(collision_tick, ep.tick());
    assert_eq!(actor, "r0");
    assert_eq!(message, "Collided with r0:70:male:elderly");
}

#[test]
fn three_scenarios_give_three_records_and_the_log_matches() {
    let h = start(ServerConfig::default());
    let file = load("forced.trly");
    assert_eq!(file.simulation.scenarios.len(), 3);
    let mut t = LineTransport::connect(&h.addr.to_string()).unwrap();
    let run = run_session(&mut t, hello("forced.trly"), &mut RandomHold::new(5), Duration::from_secs(10)).unwrap();
    assert_eq!(run.records.len(), 3);
    assert_eq!(run.episodes, run.records);
    assert_eq!(run.collisions.len(), 3);
    assert!(run.records.iter().all(|r| matches!(r.outcome, Outcome::Group(_))));
    let log = fs::read_to_string(h.log.path()).unwrap();
    assert_eq!(log, format_records(&run.records));
    assert_eq!(read_records(&log).records, run.records);
    let traces = fs::read_to_string(h.traces.path()).unwrap();
    assert_eq!(traces.lines().count(), 3);
}

#[test]
fn lockstep_sessions_are_reproducible() {
    let h = start(ServerConfig::default());
    let go = || {
        let mut t = LineTransport::connect(&h.addr.to_string()).unwrap();
        let hello = Hello {
            seed: Some(11),
            ..hello("five.trly")
        };
        run_session(&mut t, hello, &mut RandomHold::new(11), Duration::from_secs(10))
            .unwrap()
            .records
    };
    let a = go();
    assert_eq!(a.len(), 5);
    assert_eq!(a, go());
}

#[test]
fn single_mode_runs_one_scenario() {
    let h = start(ServerConfig::default());
    let mut t = LineTransport::connect(&h.addr.to_string()).unwrap();
    let hello = Hello {
        mode: Some(ModeName::Single),
        test_num: Some(104),
        ..hello("ten.trly")
    };
    let run = run_session(&mut t, hello, &mut Constant(Control::Left), Duration::from_secs(10)).unwrap();
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.records[0].test_num, 104);
}

#[test]
fn server_defaults_fill_in_hello() {
    let h = start(ServerConfig {
        defaults: SessionDefaults {
            mode: trolley_core::scenario::Mode::Single(2),
            pacing: Pacing::Lockstep,
        },
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&h);
    c.send(Message::Hello(Hello {
        scenario_file: "five.trly".into(),
        ..Hello::default()
    }));
    assert!(matches!(c.recv(), Message::Welcome { .. }));
    assert!(matches!(c.recv(), Message::ScenarioStart(l) if l.test_num == 2));
}

#[test]
fn realtime_control_is_sticky() {
    let params = SimParams {
        dt: 0.005,
        ..SimParams::default()
    };
    let h = start(ServerConfig {
        params,
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&h);
    c.send(Message::Hello(Hello {
        scenario_file: "fork.trly".into(),
        role: Some(ClientRole::Human),
        ..Hello::default()
    }));
    assert!(matches!(c.recv(), Message::Welcome { .. }));
    assert!(matches!(c.recv(), Message::ScenarioStart(_)));
    // one RIGHT with a stale tick, then silence
    c.send(Message::Action {
        tick: 0,
        control: Control::Right,
    });
    let mut states = 0;
    let started = Instant::now();
    let record = loop {
        match c.recv() {
            Message::State(_) => states += 1,
            Message::Collision { .. } => {}
            Message::EpisodeEnd { record } => break record,
            other => panic!("{other:?}"),
        }
    };
    assert!(matches!(c.recv(), Message::SimEnd { records } if records.len() == 1));
    assert_eq!(record.outcome, Outcome::Group(1), "RIGHT held until the end");
    assert_eq!(record.subject_role.as_str(), "human");
    // ticks are paced by the wall clock
    let min = Duration::from_secs_f64(params.dt * f64::from(record.tick) * 0.9);
    assert!(started.elapsed() >= min, "{:?} < {min:?}", started.elapsed());
    assert!(states as u32 >= record.tick);
}

#[test]
fn scenario_list_over_http() {
    let h = start(ServerConfig::default());
    let mut s = TcpStream::connect(h.addr).unwrap();
    s.write_all(b"GET /scenarios HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut response = String::new();
    s.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200 OK\r\n"));
    let body = response.split("\r\n\r\n").nth(1).unwrap();
    let list: ScenarioList = serde_json::from_str(body).unwrap();
    assert_eq!(list.protocol_version, 1);
    let names: Vec<&str> = list.files.iter().map(|f| f.scenario_file.as_str()).collect();
    assert_eq!(names, ["five.trly", "forced.trly", "fork.trly", "open.trly", "ten.trly"]);
    let ten = &list.files[4];
    assert_eq!(ten.scenarios.len(), 10);
    assert_eq!(ten.scenarios[0].name, "trial 1");
    assert_eq!(ten.file_id, load("ten.trly").file_id);
}

#[test]
fn websocket_session_carries_the_same_payloads() {
    let h = start(ServerConfig::default());
    let (socket, _) = tungstenite::client(format!("ws://{}/", h.addr), TcpStream::connect(h.addr).unwrap()).unwrap();
    let mut ws_run = WsTransport::from_socket(socket);
    let via_ws = run_session(&mut ws_run, hello("fork.trly"), &mut Constant(Control::Right), Duration::from_secs(10))
        .unwrap();
    let mut t = LineTransport::connect(&h.addr.to_string()).unwrap();
    let via_lines = run_session(&mut t, hello("fork.trly"), &mut Constant(Control::Right), Duration::from_secs(10))
        .unwrap();
    assert_eq!(via_ws, via_lines);
}

#[test]
fn spectators_see_states() {
    let h = start(ServerConfig::default());
    let mut driver = Client::connect(&h);
    driver.send(Message::Hello(Hello {
        session_id: Some("watched".into()),
        ..hello("fork.trly")
    }));
    assert!(matches!(driver.recv(), Message::Welcome { session_id } if session_id == "watched"));
    assert!(matches!(driver.recv(), Message::ScenarioStart(_)));
    assert!(matches!(driver.recv(), Message::State(_)));

    let mut watcher = Client::connect(&h);
    watcher.send(Message::Hello(Hello {
        role: Some(ClientRole::Spectator),
        watch: Some("watched".into()),
        ..hello("fork.trly")
    }));
    assert!(matches!(watcher.recv(), Message::Welcome { session_id } if session_id == "watched"));
    for tick in 0..5 {
        driver.send(Message::Action {
            tick,
            control: Control::Straight,
        });
        assert!(matches!(driver.recv(), Message::State(o) if o.tick == tick + 1));
        assert!(matches!(watcher.recv(), Message::State(o) if o.tick == tick + 1));
    }
}

#[test]
fn stream_sink_receives_log_lines() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let target = trolley_server::SinkTarget::parse(&format!("tcp://{}", listener.local_addr().unwrap()));
    let writer = target.open().unwrap();
    let (mut peer, _) = listener.accept().unwrap();
    let recorder = Recorder::spawn(writer, None);
    let records: Vec<_> = {
        let mut rng = common::rng(3);
        (0..4).map(|_| common::random_record(&mut rng)).collect()
    };
    assert_eq!(recorder.append_records(&records).unwrap(), 4);
    drop(recorder);
    let expected = format_records(&records);
    let mut got = vec![0u8; expected.len()];
    peer.read_exact(&mut got).unwrap();
    assert_eq!(String::from_utf8(got).unwrap(), expected);
}
