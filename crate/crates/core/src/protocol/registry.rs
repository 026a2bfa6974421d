//! Session registry and append-only report store of the location server.

use super::store::SessionStore;
use super::{Envelope, ErrorCode, EventRecord, Message, Role, SCHEMA_MAJOR};
use crate::sme::MeasurementReport;
use crate::uplink::ChannelConfig;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

/// Simulated base station that sets up the call connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStation {
    pub setup_delay_s: f64,
    pub reachable: bool,
}

impl Default for BaseStation {
    fn default() -> Self {
        BaseStation { setup_delay_s: 2.0, reachable: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionState {
    Connecting { ready_at_s: f64 },
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredReport {
    pub sender: String,
    pub seq: u64,
    pub report: MeasurementReport,
}

impl StoredReport {
    fn key(&self) -> (i64, &str, u64) {
        ((self.report.timestamp_s * 1e6).round() as i64, self.report.sme_id.as_str(), self.seq)
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub target_id: String,
    pub requester: String,
    pub state: SessionState,
    pub config: ChannelConfig,
    pub subscribers: BTreeSet<String>,
    reports: Vec<StoredReport>,
    seen: HashSet<(String, u64)>,
    dirty: bool,
    last_recompute_s: Option<f64>,
    pub recomputes: u64,
    store: Option<SessionStore>,
}

impl Session {
    /// Stored reports ordered by (timestamp, SME id, sequence number).
    pub fn reports(&self) -> &[StoredReport] {
        &self.reports
    }

    pub fn measurement_reports(&self) -> Vec<MeasurementReport> {
        self.reports.iter().map(|r| r.report.clone()).collect()
    }

    pub fn is_active(&self) -> bool {
        self.state == SessionState::Active
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    /// New report stored; `recompute` is set when the throttle allows a
    /// contour/estimate refresh now.
    Appended { recompute: bool },
    /// Already stored under the same (sender, seq); acknowledged, not stored.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub code: ErrorCode,
    pub detail: String,
}

impl Reject {
    fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Reject { code, detail: detail.into() }
    }

    pub fn to_message(&self) -> Message {
        Message::Error { code: self.code, detail: self.detail.clone() }
    }
}

/// A message addressed to one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: String,
    pub envelope: Envelope,
}

#[derive(Debug)]
pub struct SessionRegistry {
    pub id: String,
    pub base_station: BaseStation,
    pub throttle_s: f64,
    sessions: BTreeMap<String, Session>,
    active_by_target: BTreeMap<String, String>,
    senders: BTreeMap<String, Role>,
    next_session: u64,
    seq: u64,
    persist_root: Option<PathBuf>,
}

impl SessionRegistry {
    pub fn new(base_station: BaseStation, throttle_s: f64) -> Self {
        SessionRegistry {
            id: "lcs".into(),
            base_station,
            throttle_s,
            sessions: BTreeMap::new(),
            active_by_target: BTreeMap::new(),
            senders: BTreeMap::new(),
            next_session: 1,
            seq: 0,
            persist_root: None,
        }
    }

    /// Persists every new session under `root/<session_id>/`.
    pub fn with_persistence(mut self, root: impl Into<PathBuf>) -> Self {
        self.persist_root = Some(root.into());
        self
    }

    pub fn register(&mut self, sender: impl Into<String>, role: Role) {
        self.senders.insert(sender.into(), role);
    }

    pub fn role_of(&self, sender: &str) -> Option<Role> {
        self.senders.get(sender).copied()
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn active_session_for(&self, target_id: &str) -> Option<&str> {
        self.active_by_target.get(target_id).map(String::as_str)
    }

    fn live_session_mut(&mut self, id: &str) -> Result<&mut Session, Reject> {
        match self.sessions.get_mut(id) {
            Some(s) if s.state != SessionState::Closed => Ok(s),
            _ => Err(Reject::new(ErrorCode::UnknownSession, format!("no open session {id}"))),
        }
    }

    pub fn subscribe(&mut self, session_id: &str, who: impl Into<String>) -> Result<(), Reject> {
        self.live_session_mut(session_id)?.subscribers.insert(who.into());
        Ok(())
    }

    /// Opens a session for `target_id`. The base-station handshake completes
    /// `setup_delay_s` later, when [`poll`](Self::poll) activates the session
    /// and broadcasts the channel configuration.
    pub fn start_session(
        &mut self,
        target_id: &str,
        requester: &str,
        config: ChannelConfig,
        now_s: f64,
    ) -> Result<String, Reject> {
        if let Some(s) = self.active_by_target.get(target_id) {
            return Err(Reject::new(ErrorCode::AlreadyActive, format!("target {target_id} already in session {s}")));
        }
        if !self.base_station.reachable {
            return Err(Reject::new(ErrorCode::TargetUnreachable, format!("target {target_id} is not reachable")));
        }
        let id = format!("session-{}", self.next_session);
        self.next_session += 1;
        let store = match &self.persist_root {
            Some(root) => Some(
                SessionStore::create(root, &id).map_err(|e| Reject::new(ErrorCode::BadRequest, format!("persistence: {e}")))?,
            ),
            None => None,
        };
        let mut subscribers = BTreeSet::new();
        subscribers.insert(requester.to_string());
        self.sessions.insert(
            id.clone(),
            Session {
                id: id.clone(),
                target_id: target_id.to_string(),
                requester: requester.to_string(),
                state: SessionState::Connecting { ready_at_s: now_s + self.base_station.setup_delay_s },
                config,
                subscribers,
                reports: Vec::new(),
                seen: HashSet::new(),
                dirty: false,
                last_recompute_s: None,
                recomputes: 0,
                store,
            },
        );
        self.active_by_target.insert(target_id.to_string(), id.clone());
        Ok(id)
    }

    /// Next envelope from the server for `session_id`.
    pub fn envelope(&mut self, session_id: &str, message: Message) -> Envelope {
        self.seq += 1;
        Envelope::new(session_id, self.id.clone(), self.seq, message)
    }

    /// Addresses `message` to every subscriber of the session except `except`.
    pub fn publish(&mut self, session_id: &str, message: &Message, except: Option<&str>) -> Vec<Outbound> {
        let subs: Vec<String> = match self.sessions.get(session_id) {
            Some(s) => s.subscribers.iter().filter(|w| Some(w.as_str()) != except).cloned().collect(),
            None => return Vec::new(),
        };
        subs.into_iter()
            .map(|to| Outbound { envelope: self.envelope(session_id, message.clone()), to })
            .collect()
    }

    /// Completes due handshakes. Returns the channel-configuration broadcast
    /// of every session activated by this call.
    pub fn poll(&mut self, now_s: f64) -> Vec<Outbound> {
        let ready: Vec<String> = self
            .sessions
            .values()
            .filter(|s| matches!(s.state, SessionState::Connecting { ready_at_s } if ready_at_s <= now_s + 1e-9))
            .map(|s| s.id.clone())
            .collect();
        let mut out = Vec::new();
        for id in ready {
            let s = self.sessions.get_mut(&id).unwrap();
            s.state = SessionState::Active;
            let msg = Message::ChannelConfig(s.config.clone());
            out.extend(self.publish(&id, &msg, None));
        }
        out
    }

    /// Stores the report carried by `env` exactly once per (sender, seq).
    pub fn ingest_report(&mut self, env: &Envelope, now_s: f64) -> Result<Ingest, Reject> {
        if env.schema_version.split('.').next() != Some(SCHEMA_MAJOR) {
            return Err(Reject::new(ErrorCode::StaleSchema, format!("schema {}", env.schema_version)));
        }
        let Message::MeasurementReport(report) = &env.message else {
            return Err(Reject::new(ErrorCode::BadRequest, format!("{} is not a report", env.message.type_name())));
        };
        if !self.senders.contains_key(&env.sender) {
            return Err(Reject::new(ErrorCode::UnregisteredSender, format!("sender {} not registered", env.sender)));
        }
        let throttle = self.throttle_s;
        let s = self.live_session_mut(&env.session_id)?;
        if !s.is_active() {
            return Err(Reject::new(ErrorCode::BadRequest, "session not yet active"));
        }
        if !s.seen.insert((env.sender.clone(), env.seq)) {
            return Ok(Ingest::Duplicate);
        }
        let stored = StoredReport { sender: env.sender.clone(), seq: env.seq, report: report.clone() };
        let pos = s.reports.partition_point(|r| r.key() <= stored.key());
        s.reports.insert(pos, stored);
        if let Some(store) = &s.store {
            // the in-memory store stays authoritative if the disk write fails
            let _ = store.append_report(env);
        }
        s.dirty = true;
        Ok(Ingest::Appended { recompute: take_recompute(s, now_s, throttle) })
    }

    /// Sessions with new reports whose throttle interval has elapsed; each is
    /// marked as recomputed.
    pub fn due_recomputes(&mut self, now_s: f64) -> Vec<String> {
        let throttle = self.throttle_s;
        self.sessions
            .values_mut()
            .filter(|s| s.is_active())
            .filter_map(|s| take_recompute(s, now_s, throttle).then(|| s.id.clone()))
            .collect()
    }

    pub fn log_event(&mut self, session_id: &str, ev: &EventRecord) {
        if let Some(store) = self.sessions.get(session_id).and_then(|s| s.store.as_ref()) {
            let _ = store.append_event(ev);
        }
    }

    /// Closes a session; afterwards every message for it is rejected.
    pub fn close(&mut self, session_id: &str) -> Result<(), Reject> {
        let s = self.live_session_mut(session_id)?;
        s.state = SessionState::Closed;
        let target = s.target_id.clone();
        if self.active_by_target.get(&target).map(String::as_str) == Some(session_id) {
            self.active_by_target.remove(&target);
        }
        Ok(())
    }
}

fn take_recompute(s: &mut Session, now_s: f64, throttle_s: f64) -> bool {
    let due = s.dirty && s.last_recompute_s.is_none_or(|t| now_s - t >= throttle_s - 1e-9);
    if due {
        s.dirty = false;
        s.last_recompute_s = Some(now_s);
        s.recomputes += 1;
    }
    due
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcs::contour::tests::report;

    fn registry() -> (SessionRegistry, String) {
        let mut r = SessionRegistry::new(BaseStation::default(), 1.0);
        r.register("sme-1", Role::Sme);
        let id = r.start_session("target-1", "sme-1", ChannelConfig::default(), 0.0).unwrap();
        (r, id)
    }

    fn report_env(session: &str, seq: u64, t: f64) -> Envelope {
        let mut rep = report(1.0, 2.0, -70.0);
        rep.sme_id = "sme-1".into();
        rep.timestamp_s = t;
        Envelope::new(session, "sme-1", seq, Message::MeasurementReport(rep))
    }

    #[test]
    fn activation_broadcasts_config() {
        let (mut r, id) = registry();
        assert!(r.poll(1.9).is_empty());
        let out = r.poll(2.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].to, "sme-1");
        match &out[0].envelope.message {
            Message::ChannelConfig(c) => {
                assert_eq!(c.period_ms, 80.0);
                assert_eq!(c.bandwidth_hz, 7.5e6);
            }
            m => panic!("{m:?}"),
        }
        assert!(r.session(&id).unwrap().is_active());
    }

    #[test]
    fn one_session_per_target_and_unreachable() {
        let (mut r, _) = registry();
        let e = r.start_session("target-1", "x", ChannelConfig::default(), 0.5).unwrap_err();
        assert_eq!(e.code, ErrorCode::AlreadyActive);
        let mut r = SessionRegistry::new(BaseStation { setup_delay_s: 2.0, reachable: false }, 1.0);
        assert_eq!(r.start_session("t", "x", ChannelConfig::default(), 0.0).unwrap_err().code, ErrorCode::TargetUnreachable);
    }

    #[test]
    fn idempotent_ordered_ingestion() {
        let (mut r, id) = registry();
        r.poll(2.0);
        assert_eq!(r.ingest_report(&report_env(&id, 1, 3.0), 3.0), Ok(Ingest::Appended { recompute: true }));
        assert_eq!(r.ingest_report(&report_env(&id, 1, 3.0), 3.1), Ok(Ingest::Duplicate));
        assert_eq!(r.ingest_report(&report_env(&id, 3, 2.5), 3.2), Ok(Ingest::Appended { recompute: false }));
        assert_eq!(r.ingest_report(&report_env(&id, 2, 2.9), 4.0), Ok(Ingest::Appended { recompute: true }));
        let ts: Vec<f64> = r.session(&id).unwrap().reports().iter().map(|s| s.report.timestamp_s).collect();
        assert_eq!(ts, vec![2.5, 2.9, 3.0]);
    }

    #[test]
    fn rejections() {
        let (mut r, id) = registry();
        assert_eq!(r.ingest_report(&report_env(&id, 1, 1.0), 1.0).unwrap_err().code, ErrorCode::BadRequest);
        r.poll(2.0);
        let mut env = report_env(&id, 1, 3.0);
        env.sender = "stranger".into();
        assert_eq!(r.ingest_report(&env, 3.0).unwrap_err().code, ErrorCode::UnregisteredSender);
        assert_eq!(r.ingest_report(&report_env("nope", 1, 3.0), 3.0).unwrap_err().code, ErrorCode::UnknownSession);
        let mut stale = report_env(&id, 2, 3.0);
        stale.schema_version = "0.9".into();
        assert_eq!(r.ingest_report(&stale, 3.0).unwrap_err().code, ErrorCode::StaleSchema);
        r.close(&id).unwrap();
        assert_eq!(r.ingest_report(&report_env(&id, 5, 3.0), 3.0).unwrap_err().code, ErrorCode::UnknownSession);
        assert_eq!(r.close(&id).unwrap_err().code, ErrorCode::UnknownSession);
        // the target is free again
        assert!(r.start_session("target-1", "sme-1", ChannelConfig::default(), 4.0).is_ok());
    }

    #[test]
    fn flood_is_throttled() {
        let (mut r, id) = registry();
        r.poll(2.0);
        let mut recomputes = 0;
        for i in 0..1000u64 {
            let t = 2.0 + i as f64 * 0.01;
            if let Ok(Ingest::Appended { recompute: true }) = r.ingest_report(&report_env(&id, i, t), t) {
                recomputes += 1;
            }
            recomputes += r.due_recomputes(t).len();
        }
        // 10 s of reports at 100 Hz
        assert!(recomputes as f64 <= 1.1 * 10.0, "{recomputes}");
        assert!(recomputes >= 9);
    }

    #[test]
    fn persistence_writes_session_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = SessionRegistry::new(BaseStation::default(), 1.0).with_persistence(dir.path());
        r.register("sme-1", Role::Sme);
        let id = r.start_session("target-1", "sme-1", ChannelConfig::default(), 0.0).unwrap();
        r.poll(2.0);
        r.ingest_report(&report_env(&id, 1, 3.0), 3.0).unwrap();
        r.ingest_report(&report_env(&id, 1, 3.0), 3.0).unwrap();
        r.log_event(&id, &EventRecord { time_s: 3.0, actor: "lcs".into(), event: "x".into(), payload: serde_json::Value::Null });
        let store = r.session(&id).unwrap().store().unwrap();
        assert_eq!(store.load_reports().unwrap(), vec![report_env(&id, 1, 3.0)]);
        assert!(store.dir().join(super::super::store::EVENTS_FILE).exists());
    }
}
