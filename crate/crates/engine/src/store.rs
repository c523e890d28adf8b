//! SQLite persistence: the op log, raw events, derived actions and
//! processes, delivered scaffolds and to-do lists.
//!
//! One writer connection is owned by the batch writer. Readers open their
//! own connections; WAL mode lets them run alongside the writer.

use std::path::Path;

use anyhow::{Context, Result};
use rusqlite::{params, Connection, OpenFlags, OptionalExtension};
use serde::{Deserialize, Serialize};
use srl_core::session::DeliveredScaffold;
use srl_core::{ActionRecord, ProcessEvent, RawTraceEvent};

use crate::formats::{action_row, event_row, process_row, ACTION_COLUMNS, EVENT_COLUMNS, PROCESS_COLUMNS};
use crate::journal::Op;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS ops (
    seq INTEGER PRIMARY KEY,
    session_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    body TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS ops_session ON ops(session_id, seq);
CREATE TABLE IF NOT EXISTS events (
    id INTEGER PRIMARY KEY,
    seq INTEGER NOT NULL,
    session_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    event_id TEXT NOT NULL,
    timestamp INTEGER NOT NULL,
    event_kind TEXT NOT NULL,
    page_url TEXT NOT NULL,
    body TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS events_session ON events(session_id, id);
CREATE INDEX IF NOT EXISTS events_user ON events(user_id, id);
CREATE TABLE IF NOT EXISTS actions (
    id INTEGER PRIMARY KEY,
    seq INTEGER NOT NULL,
    session_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    action_id INTEGER NOT NULL,
    label TEXT NOT NULL,
    start_ms INTEGER NOT NULL,
    end_ms INTEGER NOT NULL,
    body TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS actions_session ON actions(session_id, id);
CREATE INDEX IF NOT EXISTS actions_user ON actions(user_id, id);
CREATE TABLE IF NOT EXISTS processes (
    id INTEGER PRIMARY KEY,
    seq INTEGER NOT NULL,
    session_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    label TEXT NOT NULL,
    rule_id TEXT NOT NULL,
    start_ms INTEGER NOT NULL,
    end_ms INTEGER NOT NULL,
    body TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS processes_session ON processes(session_id, id);
CREATE INDEX IF NOT EXISTS processes_user ON processes(user_id, id);
CREATE TABLE IF NOT EXISTS scaffolds (
    session_id TEXT NOT NULL,
    scaffold_id INTEGER NOT NULL,
    delivered_at INTEGER NOT NULL,
    omitted INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (session_id, scaffold_id)
);
CREATE TABLE IF NOT EXISTS todo_lists (
    session_id TEXT NOT NULL,
    scaffold_id INTEGER NOT NULL,
    created_at INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (session_id, scaffold_id)
);
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value INTEGER NOT NULL
);
";

/// Everything one op wrote, persisted in one go.
#[derive(Debug, Clone)]
pub struct Commit {
    pub seq: u64,
    pub session_id: String,
    pub user_id: String,
    pub op: Op,
    pub events: Vec<RawTraceEvent>,
    pub actions: Vec<ActionRecord>,
    pub processes: Vec<ProcessEvent>,
    pub scaffolds: Vec<DeliveredScaffold>,
}

impl Commit {
    pub fn new(seq: u64, session_id: &str, user_id: &str, op: Op) -> Self {
        Commit {
            seq,
            session_id: session_id.into(),
            user_id: user_id.into(),
            op,
            events: Vec::new(),
            actions: Vec::new(),
            processes: Vec::new(),
            scaffolds: Vec::new(),
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialise")
}

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: &Path) -> Result<Store> {
        let conn = Connection::open(path).with_context(|| format!("opening {}", path.display()))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    pub fn committed_seq(&self) -> Result<u64> {
        let v: Option<i64> = self
            .conn
            .query_row("SELECT value FROM meta WHERE key = 'committed_seq'", [], |r| r.get(0))
            .optional()?;
        Ok(v.unwrap_or(0) as u64)
    }

    /// Writes a group of commits in one transaction.
    pub fn apply(&mut self, commits: &[Commit]) -> Result<()> {
        let Some(last) = commits.last() else {
            return Ok(());
        };
        let tx = self.conn.transaction()?;
        {
            let mut op = tx.prepare_cached("INSERT INTO ops (seq, session_id, user_id, body) VALUES (?1, ?2, ?3, ?4)")?;
            let mut ev = tx.prepare_cached(
                "INSERT INTO events (seq, session_id, user_id, event_id, timestamp, event_kind, page_url, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            let mut act = tx.prepare_cached(
                "INSERT INTO actions (seq, session_id, user_id, action_id, label, start_ms, end_ms, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            let mut pro = tx.prepare_cached(
                "INSERT INTO processes (seq, session_id, user_id, label, rule_id, start_ms, end_ms, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            let mut sc = tx.prepare_cached(
                "INSERT OR REPLACE INTO scaffolds (session_id, scaffold_id, delivered_at, omitted, body)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            let mut todo = tx.prepare_cached(
                "INSERT OR REPLACE INTO todo_lists (session_id, scaffold_id, created_at, body) VALUES (?1, ?2, ?3, ?4)",
            )?;
            for c in commits {
                let seq = c.seq as i64;
                op.execute(params![seq, c.session_id, c.user_id, json(&c.op)])?;
                for e in &c.events {
                    ev.execute(params![
                        seq,
                        e.session_id,
                        e.user_id,
                        e.event_id,
                        e.timestamp as i64,
                        e.event_kind.as_str(),
                        e.page_url,
                        json(e)
                    ])?;
                }
                for a in &c.actions {
                    act.execute(params![
                        seq,
                        a.session_id,
                        c.user_id,
                        a.id as i64,
                        a.label.as_str(),
                        a.start as i64,
                        a.end as i64,
                        json(a)
                    ])?;
                }
                for p in &c.processes {
                    pro.execute(params![
                        seq,
                        p.session_id,
                        c.user_id,
                        p.label.as_str(),
                        p.rule_id,
                        p.start as i64,
                        p.end as i64,
                        json(p)
                    ])?;
                }
                for d in &c.scaffolds {
                    sc.execute(params![
                        c.session_id,
                        d.scaffold_id,
                        d.delivered_at as i64,
                        d.response.omitted,
                        json(d)
                    ])?;
                    if let Some(list) = &d.todo_list {
                        todo.execute(params![c.session_id, d.scaffold_id, list.created_at as i64, json(list)])?;
                    }
                }
            }
            tx.execute(
                "INSERT INTO meta (key, value) VALUES ('committed_seq', ?1)
                 ON CONFLICT(key) DO UPDATE SET value = MAX(value, excluded.value)",
                params![last.seq as i64],
            )?;
        }
        tx.commit()?;
        Ok(())
    }
}

/// Ops of one session in log order, for rebuilding its pipeline.
pub fn session_ops(conn: &Connection, session_id: &str) -> Result<Vec<(u64, String, Op)>> {
    let mut stmt = conn.prepare("SELECT seq, user_id, body FROM ops WHERE session_id = ?1 ORDER BY seq")?;
    let rows = stmt.query_map(params![session_id], |r| {
        Ok((r.get::<_, i64>(0)? as u64, r.get::<_, String>(1)?, r.get::<_, String>(2)?))
    })?;
    let mut out = Vec::new();
    for row in rows {
        let (seq, user, body) = row?;
        let op: Op = serde_json::from_str(&body).with_context(|| format!("op {seq}"))?;
        out.push((seq, user, op));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Raw,
    Action,
    Process,
}

impl RecordKind {
    fn table(self) -> &'static str {
        match self {
            RecordKind::Raw => "events",
            RecordKind::Action => "actions",
            RecordKind::Process => "processes",
        }
    }
}

impl std::str::FromStr for RecordKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(RecordKind::Raw),
            "action" => Ok(RecordKind::Action),
            "process" => Ok(RecordKind::Process),
            other => anyhow::bail!("unknown record kind `{other}`, expected raw, action or process"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFilter {
    /// Matches the user id.
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
    /// Substring of the stored JSON record.
    #[serde(default)]
    pub keyword: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPage {
    pub kind: RecordKind,
    /// Records matching the filter, across all pages.
    pub total: u64,
    pub records: Vec<serde_json::Value>,
    /// Pass back as `cursor` for the next (older) page.
    pub next_cursor: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// Comma-separated with a header row.
    Csv,
    /// One JSON record per line.
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" | "jsonl" => Ok(ExportFormat::Json),
            other => anyhow::bail!("unknown export format `{other}`, expected csv or json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Export {
    pub body: String,
    pub rows: usize,
    /// Requested sessions with no records.
    pub skipped: Vec<String>,
}

/// Read-only view of the store.
pub struct Reader {
    conn: Connection,
}

impl Reader {
    pub fn open(path: &Path) -> Result<Reader> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )
        .with_context(|| format!("opening {}", path.display()))?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        Ok(Reader { conn })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    fn where_clause(filter: &LogFilter) -> (String, Vec<String>) {
        let mut clauses = Vec::new();
        let mut args = Vec::new();
        if let Some(p) = &filter.participant_id {
            args.push(p.clone());
            clauses.push(format!("user_id = ?{}", args.len()));
        }
        if let Some(s) = &filter.session_id {
            args.push(s.clone());
            clauses.push(format!("session_id = ?{}", args.len()));
        }
        if let Some(k) = filter.keyword.as_ref().filter(|k| !k.is_empty()) {
            args.push(k.clone());
            clauses.push(format!("instr(body, ?{}) > 0", args.len()));
        }
        (clauses.join(" AND "), args)
    }

    /// Newest first. `cursor` continues after a previous page.
    pub fn query(&self, kind: RecordKind, filter: &LogFilter, cursor: Option<i64>, limit: usize) -> Result<LogPage> {
        let table = kind.table();
        let (base, mut args) = Self::where_clause(filter);
        let count_sql = if base.is_empty() {
            format!("SELECT COUNT(*) FROM {table}")
        } else {
            format!("SELECT COUNT(*) FROM {table} WHERE {base}")
        };
        let total: i64 = self
            .conn
            .query_row(&count_sql, rusqlite::params_from_iter(args.iter()), |r| r.get(0))?;

        let mut clauses = if base.is_empty() { Vec::new() } else { vec![base] };
        if let Some(c) = cursor {
            args.push(c.to_string());
            clauses.push(format!("id < CAST(?{} AS INTEGER)", args.len()));
        }
        let filter_sql = if clauses.is_empty() {
            String::new()
        } else {
            format!("WHERE {}", clauses.join(" AND "))
        };
        let sql = format!("SELECT id, body FROM {table} {filter_sql} ORDER BY id DESC LIMIT {}", limit + 1);
        let mut stmt = self.conn.prepare(&sql)?;
        let mut rows: Vec<(i64, String)> = stmt
            .query_map(rusqlite::params_from_iter(args.iter()), |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<Result<_, _>>()?;
        let more = rows.len() > limit;
        rows.truncate(limit);
        let next_cursor = if more { rows.last().map(|r| r.0) } else { None };
        let records = rows
            .into_iter()
            .map(|(_, body)| serde_json::from_str(&body))
            .collect::<Result<_, _>>()?;
        Ok(LogPage {
            kind,
            total: total as u64,
            records,
            next_cursor,
        })
    }

    fn bodies(&self, kind: RecordKind, session_id: &str) -> Result<Vec<String>> {
        let sql = format!("SELECT body FROM {} WHERE session_id = ?1 ORDER BY id", kind.table());
        let mut stmt = self.conn.prepare(&sql)?;
        let rows = stmt.query_map(params![session_id], |r| r.get::<_, String>(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<RawTraceEvent>> {
        self.decode(RecordKind::Raw, session_id)
    }

    pub fn actions(&self, session_id: &str) -> Result<Vec<ActionRecord>> {
        self.decode(RecordKind::Action, session_id)
    }

    pub fn processes(&self, session_id: &str) -> Result<Vec<ProcessEvent>> {
        self.decode(RecordKind::Process, session_id)
    }

    fn decode<T: for<'de> Deserialize<'de>>(&self, kind: RecordKind, session_id: &str) -> Result<Vec<T>> {
        self.bodies(kind, session_id)?
            .iter()
            .map(|b| serde_json::from_str(b).map_err(Into::into))
            .collect()
    }

    pub fn scaffolds(&self, session_id: &str) -> Result<Vec<DeliveredScaffold>> {
        let mut stmt = self
            .conn
            .prepare("SELECT body FROM scaffolds WHERE session_id = ?1 ORDER BY delivered_at, scaffold_id")?;
        let rows = stmt.query_map(params![session_id], |r| r.get::<_, String>(0))?;
        rows.map(|b| Ok(serde_json::from_str(&b?)?)).collect()
    }

    pub fn sessions(&self) -> Result<Vec<String>> {
        let mut stmt = self.conn.prepare("SELECT DISTINCT session_id FROM ops ORDER BY session_id")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Every record of `kind` for the listed sessions, session by session in
    /// the order given, each in stored order.
    pub fn export(&self, sessions: &[String], kind: RecordKind, format: ExportFormat) -> Result<Export> {
        let mut body = String::new();
        let mut csv = match format {
            ExportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(match kind {
                    RecordKind::Raw => EVENT_COLUMNS,
                    RecordKind::Action => ACTION_COLUMNS,
                    RecordKind::Process => PROCESS_COLUMNS,
                })?;
                Some(w)
            }
            ExportFormat::Json => None,
        };
        let mut rows = 0;
        let mut skipped = Vec::new();
        for session in sessions {
            let bodies = self.bodies(kind, session)?;
            if bodies.is_empty() {
                skipped.push(session.clone());
                continue;
            }
            rows += bodies.len();
            match &mut csv {
                None => {
                    for b in bodies {
                        body.push_str(&b);
                        body.push('\n');
                    }
                }
                Some(w) => {
                    for b in bodies {
                        let record = match kind {
                            RecordKind::Raw => event_row(&serde_json::from_str(&b)?),
                            RecordKind::Action => action_row(&serde_json::from_str(&b)?),
                            RecordKind::Process => process_row(&serde_json::from_str(&b)?),
                        };
                        w.write_record(record)?;
                    }
                }
            }
        }
        if let Some(w) = csv {
            body = String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
        }
        Ok(Export { body, rows, skipped })
    }
}
