//! Demographic sampling and LLM persona expansion.
//!
//! Demographics are allocated per cell (age band x gender x income bin)
//! by largest remainder, so a batch matches the requested distribution
//! exactly. Each persona is then written by the model from one example,
//! drawn at random from the seed persona and everything generated so far.

use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, Expect, Gateway, LlmError, Message};

pub const GENERATION_PROMPT: &str = include_str!("../prompts/persona_generation.txt");
pub const SEED_PERSONA: &str = include_str!("../prompts/seed_persona.txt");

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub age: u32,
    pub gender: String,
    /// Dollars per year.
    pub income: u64,
    pub background: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
}

impl Persona {
    /// The hand-crafted persona that seeds every batch.
    pub fn seed() -> Persona {
        parse_persona(SEED_PERSONA).expect("bundled seed persona parses")
    }

    /// Labeled-field text, the format the model is asked to reproduce.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Name: {}\nAge: {}\nGender: {}\nIncome: ${}\nBackground: {}\n",
            self.name, self.age, self.gender, self.income, self.background
        );
        if let Some(intent) = &self.intent {
            out.push_str(&format!("Intent: {intent}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBin {
    pub min: u32,
    pub max: u32,
    #[serde(default)]
    pub probability: Option<f64>,
}

/// Either one range sampled uniformly, or weighted bands that are
/// stratified like the other dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgeSpec {
    Bins { bins: Vec<AgeBin> },
    Range { min: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenderShare {
    pub label: String,
    #[serde(default)]
    pub probability: Option<f64>,
}

/// Half-open dollar range `[low, high)`; `high: None` is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncomeBin {
    pub low: u64,
    #[serde(default)]
    pub high: Option<u64>,
    #[serde(default)]
    pub probability: Option<f64>,
}

fn dollars_k(v: u64) -> String {
    if v % 1000 == 0 && v > 0 {
        format!("${}k", v / 1000)
    } else {
        format!("${v}")
    }
}

impl IncomeBin {
    pub const fn new(low: u64, high: Option<u64>) -> Self {
        IncomeBin {
            low,
            high,
            probability: None,
        }
    }

    pub fn contains(&self, income: u64) -> bool {
        income >= self.low && self.high.is_none_or(|h| income < h)
    }

    /// Display label such as `$30k-$58k` or `$153k-`.
    pub fn label(&self) -> String {
        match self.high {
            Some(h) => format!("{}-{}", dollars_k(self.low), dollars_k(h)),
            None => format!("{}-", dollars_k(self.low)),
        }
    }
}

/// The five household-income groups used for reporting.
pub fn standard_income_bins() -> Vec<IncomeBin> {
    vec![
        IncomeBin::new(0, Some(30_000)),
        IncomeBin::new(30_000, Some(58_000)),
        IncomeBin::new(58_000, Some(94_000)),
        IncomeBin::new(94_000, Some(153_000)),
        IncomeBin::new(153_000, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicSpec {
    pub age: AgeSpec,
    pub genders: Vec<GenderShare>,
    pub income_bins: Vec<IncomeBin>,
    pub count: usize,
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("demographic spec: {0}")]
    Spec(String),
    #[error("persona reply: {0}")]
    Parse(String),
    #[error("persona rejected after re-prompt: {0}")]
    Rejected(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Resolves a list of optional probabilities: all absent means uniform,
/// a mix is an error, and present values must sum to one.
fn probabilities(what: &str, ps: &[Option<f64>]) -> Result<Vec<f64>, PersonaError> {
    if ps.is_empty() {
        return Err(PersonaError::Spec(format!("{what}: at least one entry is required")));
    }
    if ps.iter().all(Option::is_none) {
        return Ok(vec![1.0 / ps.len() as f64; ps.len()]);
    }
    let Some(values) = ps.iter().copied().collect::<Option<Vec<f64>>>() else {
        return Err(PersonaError::Spec(format!(
            "{what}: give a probability for every entry or for none"
        )));
    };
    if let Some(bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(PersonaError::Spec(format!("{what}: probability {bad} is outside [0, 1]")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(PersonaError::Spec(format!("{what}: probabilities sum to {sum}, not 1")));
    }
    Ok(values)
}

/// One demographic assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u32,
    pub gender: String,
    pub income_bin: IncomeBin,
}

#[derive(Debug, Clone)]
struct Cell {
    age: (u32, u32),
    gender: usize,
    income: usize,
    p: f64,
}

impl DemographicSpec {
    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        let text = std::fs::read_to_string(path).map_err(|e| PersonaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let spec: DemographicSpec = serde_json::from_str(&text).map_err(|e| PersonaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    fn age_bands(&self) -> Result<Vec<((u32, u32), f64)>, PersonaError> {
        match &self.age {
            AgeSpec::Range { min, max } => {
                if min > max {
                    return Err(PersonaError::Spec(format!("age range {min}..{max} is empty")));
                }
                Ok(vec![((*min, *max), 1.0)])
            }
            AgeSpec::Bins { bins } => {
                let ps = probabilities("age", &bins.iter().map(|b| b.probability).collect::<Vec<_>>())?;
                let mut sorted: Vec<&AgeBin> = bins.iter().collect();
                sorted.sort_by_key(|b| b.min);
                for b in &sorted {
                    if b.min > b.max {
                        return Err(PersonaError::Spec(format!("age bin {}..{} is empty", b.min, b.max)));
                    }
                }
                for w in sorted.windows(2) {
                    if w[1].min <= w[0].max {
                        return Err(PersonaError::Spec(format!(
                            "age bins {}-{} and {}-{} overlap",
                            w[0].min, w[0].max, w[1].min, w[1].max
                        )));
                    }
                }
                Ok(bins.iter().zip(ps).map(|(b, p)| ((b.min, b.max), p)).collect())
            }
        }
    }

    fn cells(&self) -> Result<Vec<Cell>, PersonaError> {
        let ages = self.age_bands()?;
        let genders = probabilities(
            "genders",
            &self.genders.iter().map(|g| g.probability).collect::<Vec<_>>(),
        )?;
        let incomes = probabilities(
            "income_bins",
            &self.income_bins.iter().map(|b| b.probability).collect::<Vec<_>>(),
        )?;
        let mut sorted: Vec<&IncomeBin> = self.income_bins.iter().collect();
        sorted.sort_by_key(|b| b.low);
        for b in &sorted {
            if b.high.is_some_and(|h| h <= b.low) {
                return Err(PersonaError::Spec(format!("income bin {} is empty", b.label())));
            }
        }
        for w in sorted.windows(2) {
            if w[0].high.is_none_or(|h| h > w[1].low) {
                return Err(PersonaError::Spec(format!(
                    "income bins {} and {} overlap",
                    w[0].label(),
                    w[1].label()
                )));
            }
        }
        let mut cells = Vec::new();
        for (age, pa) in &ages {
            for (g, pg) in genders.iter().enumerate() {
                for (i, pi) in incomes.iter().enumerate() {
                    cells.push(Cell {
                        age: *age,
                        gender: g,
                        income: i,
                        p: pa * pg * pi,
                    });
                }
            }
        }
        Ok(cells)
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        if self.count == 0 {
            return Err(PersonaError::Spec("count must be at least 1".into()));
        }
        let mandatory = self.cells()?.iter().filter(|c| c.p > 0.0).count();
        if self.count < mandatory {
            return Err(PersonaError::Spec(format!(
                "count {} is smaller than the {mandatory} demographic cells with nonzero probability",
                self.count
            )));
        }
        Ok(())
    }
}

/// Exact per-cell counts for `count` draws from `ps`: floor every quota,
/// then hand the remaining units to the largest fractional parts, earlier
/// cells first on ties.
pub fn largest_remainder(ps: &[f64], count: usize) -> Vec<usize> {
    let quotas: Vec<f64> = ps.iter().map(|p| p * count as f64).collect();
    // The epsilon keeps 3.9999999999999996 from flooring to 3.
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ps.len()).collect();
    let frac = |i: usize| (quotas[i] - counts[i] as f64).max(0.0);
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(count.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified demographic assignments, shuffled under `seed`.
pub fn sample_demographics(spec: &DemographicSpec, seed: u64) -> Result<Vec<Demographics>, PersonaError> {
    spec.validate()?;
    let cells = spec.cells()?;
    let counts = largest_remainder(&cells.iter().map(|c| c.p).collect::<Vec<_>>(), spec.count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.count);
    for (cell, n) in cells.iter().zip(counts) {
        for _ in 0..n {
            out.push(Demographics {
                age: rng.random_range(cell.age.0..=cell.age.1),
                gender: spec.genders[cell.gender].label.clone(),
                income_bin: spec.income_bins[cell.income].clone(),
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn strip_label_decoration(line: &str) -> &str {
    line.trim().trim_start_matches(['-', '*', '#', ' ']).trim_start()
}

fn split_label(line: &str) -> Option<(String, &str)> {
    let line = strip_label_decoration(line);
    let (label, rest) = line.split_once(':')?;
    let label = label.trim().trim_matches('*').trim().to_ascii_lowercase();
    const LABELS: &[&str] = &["name", "age", "gender", "income", "background", "intent"];
    LABELS
        .contains(&label.as_str())
        .then(|| (label, rest.trim().trim_start_matches('*').trim()))
}

fn parse_money(s: &str) -> Option<u64> {
    let lower = s.to_ascii_lowercase();
    let start = lower.find(|c: char| c.is_ascii_digit())?;
    let digits: String = lower[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == ',' || *c == '.')
        .filter(|c| *c != ',')
        .collect();
    let value: f64 = digits.parse().ok()?;
    let rest = lower[start..].trim_start_matches(|c: char| c.is_ascii_digit() || c == ',' || c == '.');
    let mult = if rest.starts_with('k') { 1000.0 } else { 1.0 };
    Some((value * mult).round() as u64)
}

/// Reads labeled persona fields. Background may span several paragraphs
/// and runs until the next label.
pub fn parse_persona(text: &str) -> Result<Persona, PersonaError> {
    let mut fields: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        match split_label(line) {
            Some((label, value)) => fields.push((label, value.to_string())),
            None => {
                if let Some((label, value)) = fields.last_mut() {
                    if label == "background" {
                        value.push('\n');
                        value.push_str(line.trim());
                    }
                }
            }
        }
    }
    let get = |name: &str| {
        fields
            .iter()
            .find(|(l, _)| l == name)
            .map(|(_, v)| v.trim().to_string())
            .filter(|v| !v.is_empty())
    };
    let missing = |name: &str| PersonaError::Parse(format!("missing {name:?} field"));
    let name = get("name").ok_or_else(|| missing("Name"))?;
    let age_text = get("age").ok_or_else(|| missing("Age"))?;
    let age = age_text
        .split(|c: char| !c.is_ascii_digit())
        .find(|s| !s.is_empty())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PersonaError::Parse(format!("age {age_text:?} is not a number")))?;
    let gender = get("gender").ok_or_else(|| missing("Gender"))?;
    let income_text = get("income").ok_or_else(|| missing("Income"))?;
    let income = parse_money(&income_text)
        .ok_or_else(|| PersonaError::Parse(format!("income {income_text:?} is not an amount")))?;
    let background = get("background").ok_or_else(|| missing("Background"))?;
    let background = background
        .split("\n\n")
        .map(str::trim)
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(Persona {
        name,
        age,
        gender,
        income,
        background,
        intent: get("intent"),
    })
}

fn gender_key(label: &str) -> String {
    let l = label.trim().to_ascii_lowercase();
    match l.as_str() {
        "woman" | "f" => "female".into(),
        "man" | "m" => "male".into(),
        "nonbinary" | "non binary" => "non-binary".into(),
        _ => l,
    }
}

/// Everything about `p` that contradicts `d`.
pub fn constraint_violations(p: &Persona, d: &Demographics) -> Vec<String> {
    let mut out = Vec::new();
    if p.age != d.age {
        out.push(format!("age is {} but must be {}", p.age, d.age));
    }
    if gender_key(&p.gender) != gender_key(&d.gender) {
        out.push(format!("gender is {:?} but must be {:?}", p.gender, d.gender));
    }
    if !d.income_bin.contains(p.income) {
        out.push(format!("income ${} is outside {}", p.income, d.income_bin.label()));
    }
    out
}

/// The user prompt: one example persona followed by the constraints.
pub fn generation_prompt(d: &Demographics, example: &Persona) -> String {
    let mut constraints = GENERATION_PROMPT
        .replace("{age}", &d.age.to_string())
        .replace("{gender}", &d.gender)
        .replace("{income_range[0]}", &d.income_bin.low.to_string());
    match d.income_bin.high {
        Some(h) => constraints = constraints.replace("{income_range[1]}", &h.to_string()),
        None => {
            let low = d.income_bin.low;
            constraints = constraints.replace(
                &format!("Have an income between ${low} and ${{income_range[1]}}"),
                &format!("Have an income of at least ${low}"),
            );
        }
    }
    format!("Example persona:\n\n{}\n{}", example.render(), constraints.trim_end())
}

const SYSTEM: &str = "You write realistic personas of online shoppers for usability studies.";

/// One persona for `d`, modeled on `example`. A reply that cannot be parsed
/// or breaks a constraint gets one corrective re-prompt.
pub async fn generate_persona(d: &Demographics, example: &Persona, gateway: &Gateway) -> Result<Persona, PersonaError> {
    let prompt = generation_prompt(d, example);
    let mut req = CompletionRequest::new("persona", SYSTEM, prompt, Expect::StructuredPersona);
    req.temperature = gateway.temperature();
    req.max_tokens = gateway.max_tokens();
    let first = gateway.complete(req.clone()).await?;
    let problem = match parse_persona(&first) {
        Ok(p) => {
            let v = constraint_violations(&p, d);
            if v.is_empty() {
                return Ok(with_default_intent(p, example));
            }
            v.join("; ")
        }
        Err(e) => e.to_string(),
    };
    tracing::info!(%problem, "persona reply rejected, re-prompting");
    req.messages.push(Message::assistant(first));
    req.messages.push(Message::user(format!(
        "That persona cannot be used: {problem}. Rewrite it so it satisfies every requirement above, in the same format. Only output the persona."
    )));
    let second = gateway.complete(req).await?;
    let p = parse_persona(&second).map_err(|e| PersonaError::Rejected(e.to_string()))?;
    let v = constraint_violations(&p, d);
    if !v.is_empty() {
        return Err(PersonaError::Rejected(v.join("; ")));
    }
    Ok(with_default_intent(p, example))
}

fn with_default_intent(mut p: Persona, example: &Persona) -> Persona {
    if p.intent.is_none() {
        p.intent = example.intent.clone();
    }
    p
}

/// A generated batch with the example used for each persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaBatch {
    pub seed: u64,
    pub personas: Vec<Persona>,
    pub demographics: Vec<Demographics>,
    /// Index into `{seed persona} ++ personas` of the example each call used;
    /// 0 is the seed persona.
    pub examples: Vec<usize>,
}

/// Generates `spec.count` personas in order. Call `n` draws its example
/// uniformly from the seed persona and the `n - 1` personas before it,
/// skipping the previous call's example whenever there is a choice.
pub async fn generate_batch(spec: &DemographicSpec, gateway: &Gateway, seed: u64) -> Result<PersonaBatch, PersonaError> {
    generate_batch_from(spec, gateway, seed, Persona::seed()).await
}

pub async fn generate_batch_from(
    spec: &DemographicSpec,
    gateway: &Gateway,
    seed: u64,
    seed_persona: Persona,
) -> Result<PersonaBatch, PersonaError> {
    let demographics = sample_demographics(spec, seed)?;
    // A separate stream so example choice does not shift the demographics.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut pool = vec![seed_persona];
    let mut examples = Vec::with_capacity(demographics.len());
    let mut last: Option<usize> = None;
    for d in &demographics {
        let candidates: Vec<usize> = (0..pool.len()).filter(|i| pool.len() < 2 || Some(*i) != last).collect();
        let pick = *candidates.choose(&mut rng).expect("pool is never empty");
        let persona = generate_persona(d, &pool[pick], gateway).await?;
        examples.push(pick);
        last = Some(pick);
        pool.push(persona);
    }
    Ok(PersonaBatch {
        seed,
        personas: pool.split_off(1),
        demographics,
        examples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchIndex {
    seed: u64,
    files: Vec<String>,
}

impl PersonaBatch {
    /// Writes `persona_NNN.json` per persona plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, PersonaError> {
        let io = |path: &Path, e: std::io::Error| PersonaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut files = Vec::new();
        for (i, p) in self.personas.iter().enumerate() {
            let path = dir.join(format!("persona_{:03}.json", i + 1));
            let json = serde_json::to_string_pretty(p).expect("persona serializes");
            std::fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
            files.push(path);
        }
        let index = BatchIndex {
            seed: self.seed,
            files: files
                .iter()
                .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
        };
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
        Ok(files)
    }
}

/// Loads personas from a batch directory (via its `index.json`), a single
/// persona file, or a JSON array of personas.
pub fn load_personas(path: &Path) -> Result<Vec<Persona>, PersonaError> {
    let io = |path: &Path, message: String| PersonaError::Io {
        path: path.display().to_string(),
        message,
    };
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| io(p, e.to_string()));
    if path.is_dir() {
        let index_path = path.join("index.json");
        let index: BatchIndex = serde_json::from_str(&read(&index_path)?).map_err(|e| io(&index_path, e.to_string()))?;
        return index
            .files
            .iter()
            .map(|f| {
                let p = path.join(f);
                serde_json::from_str(&read(&p)?).map_err(|e| io(&p, e.to_string()))
            })
            .collect();
    }
    let text = read(path)?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| io(path, e.to_string()))
    } else {
        Ok(vec![serde_json::from_str(&text).map_err(|e| io(path, e.to_string()))?])
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_persona_round_trips() {
        let p = Persona::seed();
        assert_eq!(p.age, 31);
        assert_eq!(p.income, 42_000);
        assert!(p.background.contains("\n\n"));
        assert_eq!(parse_persona(&p.render()).unwrap(), p);
    }

    #[test]
    fn lenient_fields() {
        let p = parse_persona("**Name:** Jo\n- Age: 34 years\nGender: Female\nIncome: $45,500 per year\nBackground: x").unwrap();
        assert_eq!((p.age, p.income, p.gender.as_str()), (34, 45_500, "Female"));
        assert_eq!(parse_money("$58k"), Some(58_000));
        assert!(parse_persona("Name: Jo\nAge: old").is_err());
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[1.0 / 15.0; 15], 60), vec![4; 15]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 7), vec![1, 2, 4]);
    }

    #[test]
    fn labels() {
        let labels: Vec<String> = standard_income_bins().iter().map(IncomeBin::label).collect();
        assert_eq!(labels, ["$0-$30k", "$30k-$58k", "$58k-$94k", "$94k-$153k", "$153k-"]);
        assert!(IncomeBin::new(30_000, Some(58_000)).contains(30_000));
        assert!(!IncomeBin::new(30_000, Some(58_000)).contains(58_000));
    }

    #[test]
    fn open_bin_prompt() {
        let d = Demographics {
            age: 50,
            gender: "male".into(),
            income_bin: IncomeBin::new(153_000, None),
        };
        let p = generation_prompt(&d, &Persona::seed());
        assert!(p.contains("- Have an income of at least $153000\n"));
        assert!(!p.contains('{'));
    }
}
