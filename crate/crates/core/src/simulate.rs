//! Seeded synthetic learner sessions.
//!
//! A session walks through four phases: browsing before orientation, the
//! instructions visit, reading, and writing. Inter-event gaps are drawn from
//! clamped exponential distributions. Profile numbers are synthetic; they
//! only encode the ordering good < average < poor for orientation onset.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::error::ParseEnumError;
use crate::event::{closed_enum, EventKind, Millis, RawTraceEvent, PAYLOAD_TOOL};

closed_enum! {
    pub enum Archetype {
        Good => "good",
        Average => "average",
        Poor => "poor",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleGap {
    /// Task minute at which the learner stops interacting.
    pub at_minute: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub profile_id: String,
    pub archetype: Archetype,
    /// Minute of the first visit to the instructions page.
    pub orientation_onset: f64,
    /// Onset is drawn uniformly from `orientation_onset ± onset_jitter`.
    #[serde(default)]
    pub onset_jitter: f64,
    /// Seconds spent on the instructions page, `[min, max]`.
    pub instruction_dwell: [f64; 2],
    /// Minute the reading phase starts at the latest.
    pub reading_start: f64,
    pub writing_start: f64,
    pub timer_checks_per_10min: f64,
    pub annotations_per_page: f64,
    pub planner_probability: f64,
    /// Chance of a detour to an unrelated page between readings.
    #[serde(default)]
    pub detour_probability: f64,
    #[serde(default)]
    pub idle_gaps: Vec<IdleGap>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("profile {profile}: {field} must be a finite non-negative number")]
    NotNonNegative { profile: String, field: &'static str },
    #[error("profile {profile}: {field} must lie in [0, 1]")]
    NotProbability { profile: String, field: &'static str },
    #[error("profile {profile}: {field} ({value} min) exceeds the task duration of {task_duration} min")]
    BeyondTask {
        profile: String,
        field: &'static str,
        value: f64,
        task_duration: u32,
    },
    #[error("profile {profile}: phases must satisfy orientation onset < reading start <= writing start")]
    PhaseOrder { profile: String },
    #[error("profile {profile}: instruction_dwell must be an increasing pair of positive seconds")]
    DwellRange { profile: String },
}

impl LearnerProfile {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn session_id(&self) -> String {
        format!("{}-s{}", self.profile_id, self.seed)
    }

    pub fn user_id(&self) -> String {
        format!("{}-u{}", self.profile_id, self.seed)
    }

    pub fn validate(&self, config: &StudyConfig) -> Result<(), ProfileError> {
        let profile = || self.profile_id.clone();
        let non_negative = [
            ("orientation_onset", self.orientation_onset),
            ("onset_jitter", self.onset_jitter),
            ("reading_start", self.reading_start),
            ("writing_start", self.writing_start),
            ("timer_checks_per_10min", self.timer_checks_per_10min),
            ("annotations_per_page", self.annotations_per_page),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProfileError::NotNonNegative { profile: profile(), field });
            }
        }
        for (field, p) in [
            ("planner_probability", self.planner_probability),
            ("detour_probability", self.detour_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProfileError::NotProbability { profile: profile(), field });
            }
        }
        let [lo, hi] = self.instruction_dwell;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(ProfileError::DwellRange { profile: profile() });
        }
        let task = f64::from(config.task_duration);
        let latest_onset = self.orientation_onset + self.onset_jitter;
        let timings = [
            ("orientation_onset", latest_onset),
            ("reading_start", self.reading_start),
            ("writing_start", self.writing_start),
        ];
        for (field, value) in timings {
            if value >= task {
                return Err(ProfileError::BeyondTask {
                    profile: profile(),
                    field,
                    value,
                    task_duration: config.task_duration,
                });
            }
        }
        for gap in &self.idle_gaps {
            for (field, v) in [("idle_gaps.at_minute", gap.at_minute), ("idle_gaps.seconds", gap.seconds)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ProfileError::NotNonNegative { profile: profile(), field });
                }
            }
            let end = gap.at_minute + gap.seconds / 60.0;
            if end >= task {
                return Err(ProfileError::BeyondTask {
                    profile: profile(),
                    field: "idle_gaps",
                    value: end,
                    task_duration: config.task_duration,
                });
            }
        }
        if !(latest_onset < self.reading_start && self.reading_start <= self.writing_start) {
            return Err(ProfileError::PhaseOrder { profile: profile() });
        }
        Ok(())
    }
}

/// URLs the simulated learner visits. They must classify as intended under
/// the study's page catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteMap {
    pub instructions: String,
    pub rubric: String,
    pub contents: String,
    pub essay: String,
    pub relevant: Vec<String>,
    pub irrelevant: Vec<String>,
}

impl Default for SiteMap {
    fn default() -> Self {
        SiteMap {
            instructions: "/course/instructions".into(),
            rubric: "/course/rubric".into(),
            contents: "/course/contents".into(),
            essay: "/course/essay".into(),
            relevant: (1..=6).map(|i| format!("/course/reading/topic-{i}")).collect(),
            irrelevant: ["campus-news", "library-hours", "sports"]
                .iter()
                .map(|p| format!("/course/extra/{p}"))
                .collect(),
        }
    }
}

fn minutes(m: f64) -> Millis {
    (m * 60_000.0) as Millis
}

fn seconds(s: f64) -> Millis {
    (s * 1_000.0) as Millis
}

struct Gen<'a> {
    profile: &'a LearnerProfile,
    site: &'a SiteMap,
    rng: ChaCha8Rng,
    session_id: String,
    user_id: String,
    events: Vec<RawTraceEvent>,
    t: Millis,
    end: Millis,
    gaps: Vec<(Millis, Millis)>,
    next_timer: Millis,
}

impl Gen<'_> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.rng.random_range(lo..hi)
        }
    }

    /// Exponential draw with the given mean, clamped to `[lo, hi]`.
    fn exp_ms(&mut self, mean_ms: f64, lo: Millis, hi: Millis) -> Millis {
        let u: f64 = self.rng.random();
        let x = -mean_ms * libm::log(1.0 - u);
        (x as Millis).clamp(lo, hi)
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }

    fn done(&self) -> bool {
        self.t >= self.end
    }

    fn wait(&mut self, ms: Millis) {
        self.t += ms.max(1);
        while let Some(&(at, len)) = self.gaps.first() {
            if at > self.t {
                break;
            }
            self.t += len;
            self.gaps.remove(0);
        }
    }

    fn emit(&mut self, kind: EventKind, url: &str) -> &mut RawTraceEvent {
        let id = format!("{}-{}", self.session_id, self.events.len());
        self.events.push(RawTraceEvent::new(
            id,
            self.session_id.clone(),
            self.user_id.clone(),
            self.t,
            kind,
            url,
        ));
        self.events.last_mut().expect("just pushed")
    }

    fn step(&mut self, kind: EventKind, url: &str, delay: Millis) {
        self.wait(delay);
        if !self.done() {
            self.emit(kind, url);
        }
    }

    fn tool(&mut self, tool: &str, url: &str, inner: &[EventKind], hold: Millis) {
        if self.done() {
            return;
        }
        let d = self.exp_ms(800.0, 200, 3_000);
        self.wait(d);
        self.emit(EventKind::ToolOpen, url)
            .payload
            .insert(PAYLOAD_TOOL.into(), tool.into());
        for &kind in inner {
            let d = self.exp_ms(1_200.0, 200, 4_000);
            self.wait(d);
            self.emit(kind, url);
        }
        self.wait(hold);
        self.emit(EventKind::ToolClose, url)
            .payload
            .insert(PAYLOAD_TOOL.into(), tool.into());
    }

    /// Stays on `url` for about `dwell` ms, scrolling. Side activity only
    /// starts once `quiet` ms of plain reading have passed.
    fn read(&mut self, url: &str, dwell: Millis, quiet: Millis, annotate: f64, search: f64) {
        let start = self.t;
        let mut annotations = 0.0;
        while !self.done() && self.t < start + dwell {
            let d = self.exp_ms(4_000.0, 500, 12_000);
            self.step(EventKind::Scroll, url, d);
            if self.chance(0.05) {
                self.step(EventKind::MouseMove, url, 150);
            }
            if self.t < start.saturating_add(quiet) {
                continue;
            }
            if self.t >= self.next_timer {
                self.tool("timer", url, &[EventKind::TimerCheck], 2_000);
                self.schedule_timer();
            } else if annotations < annotate && self.chance(0.15) {
                annotations += 1.0;
                let d = self.exp_ms(2_000.0, 300, 6_000);
                self.step(EventKind::AnnotationCreate, url, d);
                let d = self.exp_ms(1_500.0, 300, 5_000);
                self.step(EventKind::AnnotationLabel, url, d);
            } else if self.chance(search * 0.05) {
                self.tool("content_search", url, &[EventKind::ContentSearch], 1_500);
            }
        }
    }

    fn schedule_timer(&mut self) {
        let rate = self.profile.timer_checks_per_10min;
        self.next_timer = if rate > 0.0 {
            let gap = self.exp_ms(600_000.0 / rate, 30_000, 30 * 60_000);
            self.t + gap
        } else {
            Millis::MAX
        };
    }

    fn navigate(&mut self, url: &str) {
        let d = self.exp_ms(1_500.0, 300, 5_000);
        self.step(EventKind::Navigation, url, d);
    }

    fn glance(&mut self, url: &str) {
        self.navigate(url);
        let d = self.uniform(2_000.0, 9_000.0) as Millis;
        self.step(EventKind::MouseClick, url, d);
    }

    fn run(&mut self) {
        let p = self.profile;
        let site = self.site;
        let onset_min = (p.orientation_onset + self.uniform(-p.onset_jitter, p.onset_jitter)).max(0.0);
        let onset = minutes(onset_min);

        // Before orientation: table of contents and unrelated pages.
        self.navigate(&site.contents);
        while !self.done() && self.t + 10_000 < onset {
            if !site.irrelevant.is_empty() && self.chance(0.5) {
                let i = self.rng.random_range(0..site.irrelevant.len());
                let url = site.irrelevant[i].clone();
                self.navigate(&url);
                let dwell = self.uniform(5_000.0, 40_000.0) as Millis;
                let dwell = dwell.min(onset.saturating_sub(self.t));
                self.read(&url, dwell, Millis::MAX, 0.0, 0.0);
            } else {
                self.glance(&site.contents);
            }
        }
        if self.t < onset {
            self.wait(onset - self.t);
        }

        // Orientation.
        self.navigate(&site.instructions);
        let dwell = seconds(self.uniform(p.instruction_dwell[0], p.instruction_dwell[1]));
        // leave time to reach the first reading by `reading_start`
        let budget = minutes(p.reading_start).saturating_sub(self.t + 10_000);
        let dwell = dwell.min(budget).max(1_000);
        let annotate = if p.annotations_per_page > 1.0 { 1.0 } else { 0.0 };
        self.read(&site.instructions, dwell, dwell, 0.0, 0.0);
        if annotate > 0.0 && self.chance(0.5) {
            let d = self.exp_ms(1_500.0, 300, 4_000);
            self.step(EventKind::AnnotationCreate, &site.instructions, d);
        }
        self.glance(&site.contents);
        let plans = self.chance(p.planner_probability);
        self.schedule_timer();

        // Reading.
        let writing = minutes(p.writing_start);
        let mut page = 0usize;
        let mut first = true;
        while !self.done() && self.t < writing && !site.relevant.is_empty() {
            if !first && self.chance(p.detour_probability) && !site.irrelevant.is_empty() {
                let i = self.rng.random_range(0..site.irrelevant.len());
                let url = site.irrelevant[i].clone();
                self.navigate(&url);
                let dwell = self.uniform(10_000.0, 60_000.0) as Millis;
                self.read(&url, dwell, Millis::MAX, 0.0, 0.0);
            }
            let url = site.relevant[page % site.relevant.len()].clone();
            page += 1;
            self.navigate(&url);
            let dwell = self.uniform(45_000.0, 150_000.0) as Millis;
            let dwell = dwell.min(writing.saturating_sub(self.t).max(20_000));
            // the first reading stays uninterrupted for a while
            let quiet = if first { 40_000 } else { 20_000 };
            self.read(&url, dwell, quiet, p.annotations_per_page, 1.0);
            if first && plans {
                self.tool(
                    "planner",
                    &url,
                    &[EventKind::PlannerInteract, EventKind::PlannerInteract, EventKind::PlannerInteract],
                    1_000,
                );
            }
            first = false;
            if self.chance(0.3) {
                self.glance(&site.contents);
            }
            if self.chance(0.1) {
                self.navigate(&site.rubric);
                let dwell = self.uniform(16_000.0, 40_000.0) as Millis;
                self.read(&site.rubric, dwell, Millis::MAX, 0.0, 0.0);
            }
        }

        // Writing.
        if self.t < writing {
            self.wait(writing - self.t);
        }
        let essay = site.essay.clone();
        self.tool("essay", &essay, &[], 500);
        if self.chance(0.7) {
            self.navigate(&site.rubric);
            let dwell = self.uniform(16_000.0, 45_000.0) as Millis;
            self.read(&site.rubric, dwell, Millis::MAX, 0.0, 0.0);
        }
        while !self.done() {
            let burst = self.rng.random_range(15..60);
            for _ in 0..burst {
                let d = self.exp_ms(250.0, 60, 1_500);
                self.step(EventKind::EssayKeystroke, &essay, d);
            }
            let pause = self.uniform(3_000.0, 25_000.0) as Millis;
            self.wait(pause);
            if self.t >= self.next_timer {
                self.tool("timer", &essay, &[EventKind::TimerCheck], 2_000);
                self.schedule_timer();
            } else if self.chance(0.04) && !site.relevant.is_empty() {
                let i = self.rng.random_range(0..site.relevant.len().min(page.max(1)));
                let url = site.relevant[i].clone();
                self.navigate(&url);
                let dwell = self.uniform(20_000.0, 60_000.0) as Millis;
                self.read(&url, dwell, Millis::MAX, 0.0, 0.0);
                self.navigate(&essay);
            }
        }
    }
}

/// Generates one session's events. Same profile and seed, same stream.
pub fn generate_session(
    profile: &LearnerProfile,
    config: &StudyConfig,
) -> Result<Vec<RawTraceEvent>, ProfileError> {
    generate_session_with(profile, config, &SiteMap::default())
}

pub fn generate_session_with(
    profile: &LearnerProfile,
    config: &StudyConfig,
    site: &SiteMap,
) -> Result<Vec<RawTraceEvent>, ProfileError> {
    profile.validate(config)?;
    let mut gaps: Vec<(Millis, Millis)> = profile
        .idle_gaps
        .iter()
        .map(|g| (minutes(g.at_minute), seconds(g.seconds)))
        .collect();
    gaps.sort_unstable();
    let mut g = Gen {
        profile,
        site,
        rng: ChaCha8Rng::seed_from_u64(profile.seed),
        session_id: profile.session_id(),
        user_id: profile.user_id(),
        events: Vec::new(),
        t: 0,
        end: config.task_duration_ms().saturating_sub(1_000),
        gaps,
        next_timer: Millis::MAX,
    };
    g.run();
    Ok(g.events)
}

/// Profiles with the numbers shipped as fixtures, for tests and demos.
pub fn sample_profile(archetype: Archetype) -> LearnerProfile {
    let base = LearnerProfile {
        profile_id: String::from(archetype.as_str()),
        archetype,
        orientation_onset: 0.0,
        onset_jitter: 0.0,
        instruction_dwell: [20.0, 35.0],
        reading_start: 2.0,
        writing_start: 20.0,
        timer_checks_per_10min: 1.0,
        annotations_per_page: 1.0,
        planner_probability: 0.5,
        detour_probability: 0.0,
        idle_gaps: Vec::new(),
        seed: 0,
    };
    match archetype {
        Archetype::Good => LearnerProfile {
            orientation_onset: 0.3,
            onset_jitter: 0.15,
            instruction_dwell: [18.0, 35.0],
            reading_start: 1.5,
            writing_start: 18.0,
            timer_checks_per_10min: 2.0,
            annotations_per_page: 2.0,
            planner_probability: 0.8,
            detour_probability: 0.02,
            ..base
        },
        Archetype::Average => LearnerProfile {
            orientation_onset: 1.5,
            onset_jitter: 0.5,
            instruction_dwell: [12.0, 30.0],
            reading_start: 3.0,
            writing_start: 22.0,
            timer_checks_per_10min: 1.0,
            annotations_per_page: 1.0,
            planner_probability: 0.4,
            detour_probability: 0.1,
            ..base
        },
        Archetype::Poor => LearnerProfile {
            orientation_onset: 4.0,
            onset_jitter: 2.0,
            instruction_dwell: [8.0, 22.0],
            reading_start: 7.0,
            writing_start: 28.0,
            timer_checks_per_10min: 0.5,
            annotations_per_page: 0.3,
            planner_probability: 0.1,
            detour_probability: 0.3,
            idle_gaps: alloc::vec![IdleGap { at_minute: 12.0, seconds: 360.0 }],
            ..base
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    #[test]
    fn same_seed_same_stream() {
        let cfg = testkit::study_config();
        let p = sample_profile(Archetype::Average).with_seed(7);
        assert_eq!(generate_session(&p, &cfg).unwrap(), generate_session(&p, &cfg).unwrap());
        let q = p.clone().with_seed(8);
        assert_ne!(generate_session(&p, &cfg).unwrap(), generate_session(&q, &cfg).unwrap());
    }

    #[test]
    fn timestamps_strictly_increase_and_stay_in_task() {
        let cfg = testkit::study_config();
        for a in Archetype::ALL {
            let events = generate_session(&sample_profile(*a).with_seed(3), &cfg).unwrap();
            assert!(events.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            assert!(events.last().unwrap().timestamp < cfg.task_duration_ms());
            assert!(events.iter().all(|e| e.validate().is_ok()));
        }
    }

    #[test]
    fn good_learner_orients_and_reads_early() {
        let cfg = testkit::study_config();
        let events = generate_session(&sample_profile(Archetype::Good).with_seed(1), &cfg).unwrap();
        let first_instr = events.iter().find(|e| e.page_url == "/course/instructions").unwrap();
        assert!(first_instr.timestamp < 120_000);
        let first_reading = events.iter().find(|e| e.page_url.starts_with("/course/reading/")).unwrap();
        assert!(first_reading.timestamp < 7 * 60_000);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let cfg = testkit::study_config();
        let mut p = sample_profile(Archetype::Good);
        p.writing_start = 50.0;
        assert!(matches!(p.validate(&cfg), Err(ProfileError::BeyondTask { .. })));
        let mut p = sample_profile(Archetype::Good);
        p.timer_checks_per_10min = -1.0;
        assert!(matches!(p.validate(&cfg), Err(ProfileError::NotNonNegative { .. })));
        let mut p = sample_profile(Archetype::Good);
        p.reading_start = 0.1;
        assert!(matches!(p.validate(&cfg), Err(ProfileError::PhaseOrder { .. })));
    }
}
