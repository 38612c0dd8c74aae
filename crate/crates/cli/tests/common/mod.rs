//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::DateTime;
use uxsim_core::agent::{AgentConfig, AgentSettings};
use uxsim_core::browser::{ActionResult, AgentAction};
use uxsim_core::money::Money;
use uxsim_core::persona::Persona;
use uxsim_core::record::{ActionRecord, OutcomeKind, PurchasedItem, SessionOutcome, SessionRecord};

pub fn demo(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file)
}

pub fn uxsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uxsim"))
        .args(args)
        .env("UXSIM_LOG", "error")
        .output()
        .expect("spawning uxsim")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fifteen sessions, three per standard income bin, with bin edges on
/// both sides. (income, gender, outcome, spend in cents, actions).
pub const SYNTHETIC: [(u64, &str, OutcomeKind, i64, usize); 15] = [
    (12_000, "female", OutcomeKind::Purchased, 2841, 5),
    (25_000, "male", OutcomeKind::Terminated, 0, 3),
    (29_999, "non-binary", OutcomeKind::Purchased, 1500, 7),
    (30_000, "female", OutcomeKind::Purchased, 1599, 4),
    (42_000, "male", OutcomeKind::MaxStepsReached, 0, 40),
    (57_999, "non-binary", OutcomeKind::Error, 0, 0),
    (58_000, "female", OutcomeKind::Purchased, 5485, 6),
    (70_000, "male", OutcomeKind::Purchased, 3999, 5),
    (93_999, "non-binary", OutcomeKind::Purchased, 6971, 9),
    (94_000, "female", OutcomeKind::Purchased, 4103, 5),
    (120_000, "Male", OutcomeKind::Terminated, 0, 2),
    (152_999, "non-binary", OutcomeKind::Terminated, 0, 1),
    (153_000, "female", OutcomeKind::Purchased, 7534, 5),
    (250_000, "male", OutcomeKind::Purchased, 10000, 8),
    (1_000_000, "non-binary", OutcomeKind::Purchased, 5066, 2),
];

/// Per income bin, worked by hand from `SYNTHETIC`:
/// (label, count, purchased, rate, mean total of purchasers, mean spend, mean actions).
pub const INCOME_ORACLE: [(&str, usize, usize, f64, f64, f64, f64); 5] = [
    ("$0-$30k", 3, 2, 2.0 / 3.0, 21.705, 14.47, 5.0),
    ("$30k-$58k", 3, 1, 1.0 / 3.0, 15.99, 5.33, 44.0 / 3.0),
    ("$58k-$94k", 3, 3, 1.0, 54.85, 54.85, 20.0 / 3.0),
    ("$94k-$153k", 3, 1, 1.0 / 3.0, 41.03, 41.03 / 3.0, 8.0 / 3.0),
    ("$153k-", 3, 3, 1.0, 226.0 / 3.0, 226.0 / 3.0, 5.0),
];

pub fn synthetic_record(i: usize, income: u64, gender: &str, kind: OutcomeKind, cents: i64, actions: usize) -> SessionRecord {
    let persona = Persona {
        name: format!("P{i}"),
        gender: gender.into(),
        income,
        ..Persona::seed()
    };
    let outcome = match kind {
        OutcomeKind::Purchased => SessionOutcome::purchased(vec![PurchasedItem {
            name: "thing".into(),
            price: Money::from_cents(cents),
        }]),
        other => SessionOutcome::other(other, None),
    };
    let t = DateTime::from_timestamp(0, 0).unwrap();
    SessionRecord {
        session_id: format!("s{i:03}"),
        config: AgentConfig::new(persona.clone(), "buy", AgentSettings::default()),
        persona,
        target_url: "http://shop".into(),
        recipe_id: "shop".into(),
        actions: (1..=actions)
            .map(|k| ActionRecord {
                index: k,
                action: AgentAction::click("x", "Clicking."),
                result: ActionResult::success("http://shop".into()),
            })
            .collect(),
        memories: vec![],
        screenshots: vec![None; actions],
        outcome,
        warnings: vec![],
        started: t,
        ended: t,
    }
}

pub fn synthetic() -> Vec<SessionRecord> {
    SYNTHETIC
        .iter()
        .enumerate()
        .map(|(i, &(inc, g, k, c, a))| synthetic_record(i + 1, inc, g, k, c, a))
        .collect()
}

/// Writes each record to `dir/sNNN/record.json`.
pub fn write_records(dir: &Path, records: &[SessionRecord]) {
    for r in records {
        let d = dir.join(&r.session_id);
        std::fs::create_dir_all(&d).unwrap();
        r.save(&d.join("record.json")).unwrap();
    }
}
