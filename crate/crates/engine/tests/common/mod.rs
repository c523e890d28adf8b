#![allow(dead_code)]

use std::path::Path;

use srl_core::simulate::sample_profile;
use srl_core::{generate_session, Archetype, RawTraceEvent, StudyConfig};
use srl_engine::config::default_config;
use srl_engine::{Engine, EngineOptions};
use tempfile::TempDir;

pub fn options(dir: &Path) -> EngineOptions {
    let mut o = EngineOptions::new(dir.join("srl.db"));
    o.fsync_journal = false;
    o
}

pub fn open(dir: &Path) -> Engine {
    Engine::open(default_config(), options(dir)).unwrap()
}

/// Engine whose writer only commits on flush.
pub fn lazy_config() -> StudyConfig {
    let mut cfg = default_config();
    cfg.batch_flush.max_events = 1_000_000;
    cfg.batch_flush.max_interval_ms = 3_600_000;
    cfg
}

pub fn scratch() -> TempDir {
    tempfile::tempdir().unwrap()
}

pub fn session(archetype: Archetype, seed: u64) -> Vec<RawTraceEvent> {
    generate_session(&sample_profile(archetype).with_seed(seed), &default_config()).unwrap()
}

pub fn value(e: &RawTraceEvent) -> serde_json::Value {
    serde_json::to_value(e).unwrap()
}
