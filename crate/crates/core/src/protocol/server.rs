//! TCP front end of the location server.
//!
//! Every connection opens with a `hello` control frame carrying the role and
//! bearer token. All registry mutations go through one mutex, so the registry
//! sees a single ordered stream of requests. A ticker thread completes
//! base-station handshakes and runs throttled contour/estimate refreshes,
//! which are pushed to the session's subscribers.

use super::{
    decode_frame, encode_control, encode_line, BaseStation, Control, Envelope, ErrorCode, Frame, Ingest, Message,
    Outbound, ProtocolError, Role, SessionRegistry,
};
use crate::geometry::Rect;
use crate::lcs::{derive_boundary, estimate_position, interpolate_idw, LcsParams, MapRegion};
use crate::rf::RfParams;
use crate::uplink::ChannelConfig;
use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Token per sender id; senders not listed use `shared_token`.
    pub tokens: BTreeMap<String, String>,
    pub shared_token: Option<String>,
    pub base_station: BaseStation,
    pub throttle_s: f64,
    /// Area covered by live contour maps and estimates.
    pub area: Rect,
    pub rf: RfParams,
    pub lcs: LcsParams,
    pub channel: ChannelConfig,
    pub persist_root: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(area: Rect, shared_token: impl Into<String>) -> Self {
        ServerConfig {
            tokens: BTreeMap::new(),
            shared_token: Some(shared_token.into()),
            base_station: BaseStation::default(),
            throttle_s: 1.0,
            area,
            rf: RfParams::default(),
            lcs: LcsParams::default(),
            channel: ChannelConfig::default(),
            persist_root: None,
        }
    }

    fn authorized(&self, sender: &str, token: &str) -> bool {
        match self.tokens.get(sender) {
            Some(t) => t == token,
            None => self.shared_token.as_deref() == Some(token),
        }
    }
}

struct State {
    registry: SessionRegistry,
    writers: BTreeMap<String, TcpStream>,
    contour_generation: u64,
}

struct Shared {
    config: ServerConfig,
    state: Mutex<State>,
    epoch: Instant,
    shutdown: AtomicBool,
}

impl Shared {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops accepting connections and joins the service threads.
    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Starts serving on `listener`.
pub fn serve(listener: TcpListener, config: ServerConfig) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let mut registry = SessionRegistry::new(config.base_station, config.throttle_s);
    if let Some(root) = &config.persist_root {
        registry = registry.with_persistence(root.clone());
    }
    let shared = Arc::new(Shared {
        config,
        state: Mutex::new(State { registry, writers: BTreeMap::new(), contour_generation: 0 }),
        epoch: Instant::now(),
        shutdown: AtomicBool::new(false),
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::spawn(move || {
            for stream in listener.incoming() {
                if shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let shared = Arc::clone(&shared);
                    thread::spawn(move || {
                        let _ = handle_connection(&shared, stream);
                    });
                }
            }
        })
    };
    let ticker = {
        let shared = Arc::clone(&shared);
        thread::spawn(move || {
            while !shared.shutdown.load(Ordering::SeqCst) {
                tick(&shared);
                thread::sleep(Duration::from_millis(50));
            }
        })
    };
    Ok(ServerHandle { addr, shared, threads: vec![acceptor, ticker] })
}

fn tick(shared: &Shared) {
    let now = shared.now();
    let mut st = shared.state.lock().unwrap();
    let mut out = st.registry.poll(now);
    for id in st.registry.due_recomputes(now) {
        out.extend(recompute(shared, &mut st, &id, now));
    }
    deliver(&mut st, out);
}

fn recompute(shared: &Shared, st: &mut State, session_id: &str, now: f64) -> Vec<Outbound> {
    let cfg = &shared.config;
    let Some(session) = st.registry.session(session_id) else {
        return Vec::new();
    };
    let reports = session.measurement_reports();
    let mut msgs = Vec::new();
    if let Ok(mut map) = interpolate_idw(&reports, MapRegion::Outdoor { area: cfg.area }, cfg.lcs.outdoor_cell_m, &cfg.lcs) {
        st.contour_generation += 1;
        map.generation = st.contour_generation;
        msgs.push(Message::ContourMap(map));
    }
    if let Ok(estimate) = estimate_position(&reports, cfg.area, &cfg.rf, &cfg.lcs, now) {
        if let Ok(boundary) = derive_boundary(&estimate, cfg.lcs.boundary_sigmas) {
            msgs.push(Message::LocationEstimate { estimate, boundary });
        }
    }
    msgs.iter().flat_map(|m| st.registry.publish(session_id, m, None)).collect()
}

fn deliver(st: &mut State, out: Vec<Outbound>) {
    for o in out {
        if let Some(w) = st.writers.get_mut(&o.to) {
            let _ = w.write_all(encode_line(&o.envelope).as_bytes());
        }
    }
}

fn send_line(w: &mut TcpStream, line: &str) -> io::Result<()> {
    w.write_all(line.as_bytes())
}

fn error_line(st: &mut State, session_id: &str, code: ErrorCode, detail: impl Into<String>) -> String {
    let env = st.registry.envelope(session_id, Message::Error { code, detail: detail.into() });
    encode_line(&env)
}

fn handle_connection(shared: &Shared, stream: TcpStream) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut lines = BufReader::new(stream).lines();
    let Some(first) = lines.next() else {
        return Ok(());
    };
    let (role, sender) = match decode_frame(first?.as_bytes()) {
        Ok(Frame::Control(Control::Hello { role, sender, token })) if shared.config.authorized(&sender, &token) => {
            (role, sender)
        }
        _ => {
            let line = error_line(&mut shared.state.lock().unwrap(), "", ErrorCode::Unauthorized, "hello with a valid token required");
            return send_line(&mut writer, &line);
        }
    };
    {
        let mut st = shared.state.lock().unwrap();
        st.registry.register(sender.clone(), role);
        st.writers.insert(sender.clone(), writer.try_clone()?);
        send_line(&mut writer, &encode_control(&Control::Ack { session_id: String::new(), seq: 0 }))?;
    }
    for line in lines {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let now = shared.now();
        let mut st = shared.state.lock().unwrap();
        let replies = match decode_frame(line.as_bytes()) {
            Err(e) => {
                let code = match e {
                    ProtocolError::UnsupportedVersion(_) => ErrorCode::StaleSchema,
                    _ => ErrorCode::MalformedFrame,
                };
                vec![error_line(&mut st, "", code, e.to_string())]
            }
            Ok(Frame::Control(c)) => handle_control(&mut st, &sender, c),
            Ok(Frame::Message(env)) if env.sender != sender => {
                vec![error_line(&mut st, &env.session_id, ErrorCode::Unauthorized, "sender does not match hello")]
            }
            Ok(Frame::Message(env)) => handle_message(shared, &mut st, role, env, now),
        };
        for r in replies {
            send_line(&mut writer, &r)?;
        }
    }
    shared.state.lock().unwrap().writers.remove(&sender);
    Ok(())
}

fn ack(session_id: &str, seq: u64) -> String {
    encode_control(&Control::Ack { session_id: session_id.to_string(), seq })
}

fn handle_control(st: &mut State, sender: &str, c: Control) -> Vec<String> {
    match c {
        Control::Subscribe { session_id } => match st.registry.subscribe(&session_id, sender) {
            Ok(()) => vec![ack(&session_id, 0)],
            Err(r) => vec![error_line(st, &session_id, r.code, r.detail)],
        },
        Control::Close { session_id } => match st.registry.close(&session_id) {
            Ok(()) => vec![ack(&session_id, 0)],
            Err(r) => vec![error_line(st, &session_id, r.code, r.detail)],
        },
        Control::Ack { .. } => Vec::new(),
        Control::Hello { .. } => vec![error_line(st, "", ErrorCode::BadRequest, "duplicate hello")],
    }
}

fn handle_message(shared: &Shared, st: &mut State, role: Role, env: Envelope, now: f64) -> Vec<String> {
    let sid = env.session_id.clone();
    match &env.message {
        Message::CallConnectRequest { target_id, requester } => {
            let mut cfg = shared.config.channel.clone();
            cfg.target_id = target_id.clone();
            match st.registry.start_session(target_id, &env.sender, cfg, now) {
                Ok(id) => {
                    let started = st.registry.envelope(
                        &id,
                        Message::SessionEvent(super::EventRecord {
                            time_s: now,
                            actor: "lcs".into(),
                            event: "session_started".into(),
                            payload: serde_json::json!({ "target_id": target_id, "requester": requester }),
                        }),
                    );
                    vec![ack(&id, env.seq), encode_line(&started)]
                }
                Err(r) => vec![error_line(st, &sid, r.code, r.detail)],
            }
        }
        Message::MeasurementReport(_) if role == Role::Sme => match st.registry.ingest_report(&env, now) {
            Ok(Ingest::Appended { recompute: true }) => {
                let out = recompute(shared, st, &sid, now);
                deliver(st, out);
                vec![ack(&sid, env.seq)]
            }
            Ok(_) => vec![ack(&sid, env.seq)],
            Err(r) => vec![error_line(st, &sid, r.code, r.detail)],
        },
        Message::TaskAssignment { assignment, .. } if role != Role::Sme => {
            if st.registry.session(&sid).is_none_or(|s| !s.is_active()) {
                return vec![error_line(st, &sid, ErrorCode::UnknownSession, format!("no open session {sid}"))];
            }
            let fwd = st.registry.envelope(&sid, env.message.clone());
            let to = assignment.rescuer_id.clone();
            deliver(st, vec![Outbound { to, envelope: fwd }]);
            vec![ack(&sid, env.seq)]
        }
        Message::SweepResult(_) | Message::SessionEvent(_) => {
            if st.registry.session(&sid).is_none_or(|s| !s.is_active()) {
                return vec![error_line(st, &sid, ErrorCode::UnknownSession, format!("no open session {sid}"))];
            }
            if let Message::SessionEvent(ev) = &env.message {
                st.registry.log_event(&sid, ev);
            }
            let out = st.registry.publish(&sid, &env.message, Some(&env.sender));
            deliver(st, out);
            vec![ack(&sid, env.seq)]
        }
        m => vec![error_line(st, &sid, ErrorCode::BadRequest, format!("{} not accepted from {:?}", m.type_name(), role))],
    }
}
