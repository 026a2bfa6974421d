//! On-disk session directory: reports log, event log and outcome record.

use super::{encode_line, Envelope, EventRecord};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const REPORTS_FILE: &str = "reports.ndjson";
pub const EVENTS_FILE: &str = "events.ndjson";
pub const OUTCOME_FILE: &str = "outcome.json";

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn create(root: impl AsRef<Path>, session_id: &str) -> io::Result<SessionStore> {
        let dir = root.as_ref().join(session_id);
        fs::create_dir_all(&dir)?;
        Ok(SessionStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&self, file: &str, line: &str) -> io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(file))?;
        f.write_all(line.as_bytes())
    }

    pub fn append_report(&self, env: &Envelope) -> io::Result<()> {
        self.append(REPORTS_FILE, &encode_line(env))
    }

    pub fn append_event(&self, ev: &EventRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(ev).map_err(io::Error::other)?;
        line.push('\n');
        self.append(EVENTS_FILE, &line)
    }

    pub fn write_outcome<T: serde::Serialize>(&self, outcome: &T) -> io::Result<()> {
        let mut f = File::create(self.dir.join(OUTCOME_FILE))?;
        serde_json::to_writer_pretty(&mut f, outcome).map_err(io::Error::other)?;
        f.write_all(b"\n")
    }

    /// Reads back the reports log.
    pub fn load_reports(&self) -> io::Result<Vec<Envelope>> {
        let path = self.dir.join(REPORTS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        BufReader::new(File::open(path)?)
            .lines()
            .map(|l| super::decode(l?.as_bytes()).map_err(io::Error::other))
            .collect()
    }
}

/// Writes an event log as newline-delimited records.
pub fn write_event_log<W: Write>(events: &[EventRecord], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
