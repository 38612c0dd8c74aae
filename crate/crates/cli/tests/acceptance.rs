//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Everything runs offline against the bundled
//! fixture shop and scripted model replies.

mod common;

use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use uxsim_core::agent::{run_session, save_session, AgentConfig, AgentSettings, SessionTarget};
use uxsim_core::browser::{ActionKind, AgentAction, BrowserConfig, BrowserSession};
use uxsim_core::interview::{memory_line, InterviewSettings};
use uxsim_core::llm::{Gateway, StubScript};
use uxsim_core::memory::{LoopProfile, MemoryKind, MemoryPiece, MemoryStream, NewMemory, Profiles, RetrievalWeights};
use uxsim_core::money::Money;
use uxsim_core::persona::{
    constraint_violations, generate_batch, sample_demographics, AgeSpec, DemographicSpec, GenderShare, Persona,
};
use uxsim_core::prompt::Prompts;
use uxsim_core::recipe::{
    build_name_path, find_named, normalize_whitespace, parse_page, plan_live_queries, render_node, slugify, LiveQueryKind,
    LiveState, ParsedPage, Recipe,
};
use uxsim_core::record::{export_action_trace, export_memory_trace, OutcomeKind, SessionRecord};
use uxsim_core::stats::{aggregate_stats, GroupBy};
use uxsim_fixture::catalog::PRODUCTS;
use uxsim_fixture::dom::{Controls, Dom};
use uxsim_fixture::script::{self, Val};
use uxsim_fixture::{read_asset, shop, spawn_browser, spawn_shop, JACKET_SCRIPT, SHOP_RECIPE};

// Runtime budgets.
const PARSER_BUDGET: Duration = Duration::from_secs(1);
const ACTION_SPACE_BUDGET: Duration = Duration::from_secs(30);
const RETRIEVAL_BUDGET: Duration = Duration::from_secs(5);
const END_TO_END_BUDGET: Duration = Duration::from_secs(60);
/// Absolute tolerance for aggregate means.
const AGGREGATE_TOL: f64 = 1e-9;
const RETRIEVAL_CASES: usize = 100;
const RETRIEVAL_K: usize = 10;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Provider call counts of every gateway built by the suite.
#[derive(Default)]
struct Calls(std::sync::Mutex<Vec<Arc<Gateway>>>);

impl Calls {
    fn stub(&self, script: &str) -> Arc<Gateway> {
        let gw = Arc::new(Gateway::stub(StubScript::from_json(script).expect("script parses")));
        self.0.lock().unwrap().push(gw.clone());
        gw
    }

    fn total(&self) -> u64 {
        self.0.lock().unwrap().iter().map(|g| g.provider_calls()).sum()
    }
}

fn live_state(raw: &str, recipe: &Recipe) -> LiveState {
    let dom = Dom::parse(raw);
    let controls = Controls::new();
    let mut live = LiveState::default();
    for q in plan_live_queries(raw, recipe) {
        let entry = live.element_mut(q.element_index);
        match q.kind {
            LiveQueryKind::Control => {
                entry.value = dom.value(q.element_index, &controls);
                entry.checked = dom.checked(q.element_index, &controls);
            }
            LiveQueryKind::Script(src) => {
                let out = match script::eval(&dom, &controls, &src, &[Val::Elem(q.element_index)]) {
                    Ok(Val::Str(s)) => Ok(s),
                    Ok(other) => Ok(format!("{other:?}")),
                    Err(e) => Err(e),
                };
                entry.scripts.insert(src, out);
            }
        }
    }
    live
}

fn parse(raw: &str, recipe: &Recipe) -> Result<ParsedPage, String> {
    parse_page(raw, recipe, &live_state(raw, recipe)).map_err(|e| e.to_string())
}

fn recipe_asset(name: &str) -> Recipe {
    Recipe::from_json(&read_asset(&format!("pages/{name}.recipe.json"))).expect("recipe parses")
}

const FORD: &str = "search_results.1966_ford_f_100_clear_body_slash_slash_4x4";

fn parser_golden() -> Check {
    let recipe = Recipe::from_json(SHOP_RECIPE).map_err(|e| e.to_string())?;
    let page = parse(&read_asset("pages/search_results.html"), &recipe)?;
    let card = find_named(&page.nodes, FORD).ok_or(format!("no node named {FORD}"))?;
    let got = normalize_whitespace(&render_node(card));
    let want = normalize_whitespace(&read_asset("pages/search_results.expected.html"));
    ensure!(got == want, "simplified block differs:\n{got}\nexpected:\n{want}");
    ensure!(got.contains("4.3 out of 5 stars"), "rating text missing");
    Ok(())
}

fn flattening_and_text() -> Check {
    for name in ["nested_wrappers", "text_children"] {
        let page = parse(&read_asset(&format!("pages/{name}.html")), &recipe_asset(name))?;
        let want = read_asset(&format!("pages/{name}.expected.html"));
        ensure!(page.render() == want, "{name}: got\n{}", page.render());
    }
    let recipe = Recipe::from_json(SHOP_RECIPE).map_err(|e| e.to_string())?;
    let page = parse(&shop::render_product(&PRODUCTS[0], 0), &recipe)?;
    let product = find_named(&page.nodes, "product").ok_or("no product node")?;
    let rating = product.children.iter().filter_map(|c| c.text.as_deref()).find(|t| t.starts_with("Rating:"));
    ensure!(rating == Some("Rating: 4.2 out of 5 stars"), "rating text is {rating:?}");
    Ok(())
}

fn name_paths() -> Check {
    let joined = build_name_path(&["product", "add_to_cart"]);
    ensure!(joined == "product.add_to_cart", "joined {joined:?}");
    let slug = slugify("1966 Ford F-100 Clear Body: Slash, Slash 4x4");
    ensure!(slug == "1966_ford_f_100_clear_body_slash_slash_4x4", "slug {slug:?}");
    Ok(())
}

/// Executes `action` and, unless it ends the session, observes the result.
async fn step(
    s: &mut BrowserSession,
    action: AgentAction,
) -> Result<(uxsim_core::browser::ActionResult, Option<uxsim_core::browser::Observation>), String> {
    let r = s.execute(&action).await.map_err(|e| e.to_string())?;
    if action.kind == ActionKind::Terminate {
        return Ok((r, None));
    }
    Ok((r, Some(s.observe().await.map_err(|e| e.to_string())?)))
}

async fn action_space() -> Check {
    let shop = spawn_shop().await.map_err(|e| e.to_string())?;
    let browser = spawn_browser().await.map_err(|e| e.to_string())?;
    let config = BrowserConfig {
        backoff_ms: 1,
        ..BrowserConfig::with_endpoint(browser.url())
    };
    let recipe = Arc::new(Recipe::from_json(SHOP_RECIPE).map_err(|e| e.to_string())?);
    let mut s = BrowserSession::open(&config, &format!("{}/", shop.url()), recipe)
        .await
        .map_err(|e| e.to_string())?;
    let home = s.observe().await.map_err(|e| e.to_string())?;

    let (r, obs) = step(&mut s, AgentAction::type_text(ActionKind::Type, "search", "wool", "typing")).await?;
    let obs = obs.unwrap();
    ensure!(r.ok && obs.page.contains("value=\"wool\""), "type: {r:?}");
    let (r, obs) = step(&mut s, AgentAction::type_text(ActionKind::Clear, "search", "", "clearing")).await?;
    ensure!(r.ok && !obs.unwrap().page.contains("value=\"wool\""), "clear: {r:?}");
    let (r, obs) = step(&mut s, AgentAction::type_text(ActionKind::TypeAndSubmit, "search", "jacket", "search")).await?;
    let results = obs.unwrap();
    ensure!(r.ok && results.url.contains("/search?q=jacket"), "type_and_submit landed on {}", results.url);
    let view = results
        .clickables
        .iter()
        .find(|c| c.ends_with(".view_product"))
        .cloned()
        .ok_or("no product links in results")?;
    let (r, obs) = step(&mut s, AgentAction::click(&view, "open product")).await?;
    ensure!(r.ok && obs.unwrap().url.contains("/product/"), "click: {r:?}");

    // Unknown names are reported on the next observation and the session keeps going.
    let (r, obs) = step(&mut s, AgentAction::click("product.buy_now", "missing")).await?;
    let msg = obs.unwrap().error_message.unwrap_or_default();
    ensure!(!r.ok && msg.contains("product.buy_now"), "unknown target gave {r:?} / {msg:?}");

    let (r, obs) = step(&mut s, AgentAction::new(ActionKind::Back, "back")).await?;
    let back = obs.unwrap();
    ensure!(r.ok && back.url == results.url && back.error_message.is_none(), "back landed on {}", back.url);
    let (r, _) = step(&mut s, AgentAction::new(ActionKind::Terminate, "done")).await?;
    ensure!(r.ok && s.is_closed(), "terminate: {r:?}");
    ensure!(home.inputs.contains(&"search".to_string()), "home has no search input");
    Ok(())
}

/// Scores every piece from first principles and sorts: higher score first,
/// larger id on ties.
fn brute_top_k(pieces: &[MemoryPiece], query: &[f32], now: u32, w: &RetrievalWeights, k: usize) -> Vec<u64> {
    let mut scored: Vec<(f64, u64)> = pieces
        .iter()
        .map(|p| {
            let e = p.embedding.as_deref().unwrap_or(&[]);
            let dot: f64 = e.iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            let na = e.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
            let nb = query.iter().map(|b| f64::from(*b).powi(2)).sum::<f64>().sqrt();
            let cos = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            let recency = 0.99f64.powi(now.saturating_sub(p.step) as i32);
            (w.w_importance * p.importance / 10.0 + w.w_relevance * cos + w.w_recency * recency, p.id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..RETRIEVAL_CASES {
        let n = rng.random_range(0..40);
        let mut steps: Vec<u32> = (0..n).map(|_| rng.random_range(0..50)).collect();
        steps.sort_unstable();
        let stream = MemoryStream::new();
        for (i, step) in steps.iter().enumerate() {
            let emb: Vec<f32> = (0..4).map(|_| rng.random_range(-2i8..=2) as f32).collect();
            let importance = rng.random_range(0..=10) as f64;
            stream
                .append(NewMemory::new(MemoryKind::Observation, format!("m{i}"), *step, importance).with_embedding(emb))
                .map_err(|e| e.to_string())?;
        }
        let query: Vec<f32> = (0..4).map(|_| rng.random_range(-2i8..=2) as f32).collect();
        let now = steps.last().copied().unwrap_or(0) + rng.random_range(0..5);
        let pieces = stream.export_trace();
        for profile in [LoopProfile::Fast, LoopProfile::Slow] {
            let w = Profiles::default().get(profile);
            let got: Vec<u64> = stream.retrieve(Some(&query), now, &w, RETRIEVAL_K).iter().map(|p| p.id).collect();
            let want = brute_top_k(&pieces, &query, now, &w, RETRIEVAL_K);
            ensure!(got == want, "case {case} {profile:?}: got {got:?}, expected {want:?}");
        }
    }
    Ok(())
}

/// The five-action trace of the worked example, line for line.
const EXAMPLE_ACTION_TRACE: &str = "\
Action 1: type_and_submit, description: Typing 'woman's jacket' into the search input field and submitting the form.
Action 2: click, description: Clicking on the product 'Jackets For Women Womens Hooded Fleece Line Coats Parkas Faux Fur Jackets with Pockets' to view its details.
Action 3: click, description: Clicking on the 'Navy' color option for the jacket.
Action 4: click, description: Clicking on the 'Medium' size option for the jacket.
Action 5: click, description: Clicking on the 'Add to Cart' button to add the chosen product to the cart.
";

async fn jacket_session(calls: &Calls, dir: &std::path::Path) -> Result<SessionRecord, String> {
    let shop = spawn_shop().await.map_err(|e| e.to_string())?;
    let browser = spawn_browser().await.map_err(|e| e.to_string())?;
    let target = SessionTarget {
        session_id: "s001".into(),
        url: shop.url(),
        recipe: Arc::new(Recipe::from_json(SHOP_RECIPE).map_err(|e| e.to_string())?),
        browser: BrowserConfig {
            backoff_ms: 1,
            ..BrowserConfig::with_endpoint(browser.url())
        },
        dir: dir.to_path_buf(),
    };
    let settings = AgentSettings {
        slow_loop_every: 1,
        concurrent_slow_loop: false,
        ..AgentSettings::default()
    };
    let config = AgentConfig::new(Persona::seed(), "buy a jacket", settings);
    run_session(config, calls.stub(JACKET_SCRIPT), &target)
        .await
        .map_err(|e| e.to_string())
}

async fn end_to_end(calls: &Calls) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let record = jacket_session(calls, dir.path()).await?;
    let actions = export_action_trace(&record.actions);
    ensure!(actions == EXAMPLE_ACTION_TRACE, "action trace differs from the worked example:\n{actions}");
    ensure!(actions == read_asset("golden/jacket_actions.txt"), "action trace differs from golden");
    let memories = export_memory_trace(&record.memories);
    ensure!(memories == read_asset("golden/jacket_memories.txt"), "memory trace differs from golden:\n{memories}");
    ensure!(record.outcome.kind == OutcomeKind::Purchased, "outcome {:?}", record.outcome.kind);
    let price = Money::from_cents(PRODUCTS[0].price_cents);
    ensure!(record.outcome.total == Some(price), "total {:?}, fixture price {price}", record.outcome.total);
    Ok(())
}

async fn persona_stratification(calls: &Calls) -> Check {
    let spec = DemographicSpec {
        age: AgeSpec::Range { min: 18, max: 70 },
        genders: ["female", "male", "non-binary"]
            .map(|g| GenderShare {
                label: g.into(),
                probability: None,
            })
            .into(),
        income_bins: uxsim_core::persona::standard_income_bins(),
        count: 60,
    };
    let demographics = sample_demographics(&spec, 42).map_err(|e| e.to_string())?;
    let mut cells = std::collections::BTreeMap::new();
    for d in &demographics {
        *cells.entry((d.gender.clone(), d.income_bin.low)).or_insert(0usize) += 1;
    }
    ensure!(cells.len() == 15 && cells.values().all(|&n| n == 4), "cells {cells:?}");

    let script = std::fs::read_to_string(common::demo("persona_stub.json")).map_err(|e| e.to_string())?;
    let a = generate_batch(&spec, &calls.stub(&script), 42).await.map_err(|e| e.to_string())?;
    let b = generate_batch(&spec, &calls.stub(&script), 42).await.map_err(|e| e.to_string())?;
    ensure!(a.personas.len() == 60, "{} personas", a.personas.len());
    for (p, d) in a.personas.iter().zip(&a.demographics) {
        let v = constraint_violations(p, d);
        ensure!(v.is_empty(), "{}: {v:?}", p.name);
    }
    ensure!(a == b, "same seed gave different batches");
    Ok(())
}

fn aggregates() -> Check {
    let rows = aggregate_stats(&common::synthetic(), GroupBy::IncomeBin);
    ensure!(rows.len() == common::INCOME_ORACLE.len(), "{} rows", rows.len());
    for (row, (label, count, purchased, rate, total, spend, actions)) in rows.iter().zip(common::INCOME_ORACLE) {
        ensure!(row.group == label && row.count == count && row.purchased == purchased, "row {row:?}");
        for (name, got, want) in [
            ("rate", row.purchase_rate, rate),
            ("mean_total", row.mean_total, total),
            ("mean_spend", row.mean_spend, spend),
            ("mean_actions", row.mean_actions, actions),
        ] {
            let got = got.ok_or(format!("{label} {name} is null"))?;
            ensure!((got - want).abs() <= AGGREGATE_TOL, "{label} {name}: {got} vs {want}");
        }
    }
    let low_only: Vec<_> = common::synthetic().into_iter().filter(|r| r.persona.income < 30_000).collect();
    let rows = aggregate_stats(&low_only, GroupBy::IncomeBin);
    ensure!(rows.len() == 5 && rows[1..].iter().all(|r| r.count == 0 && r.mean_total.is_none()), "empty bins: {rows:?}");
    Ok(())
}

async fn interview_contract(calls: &Calls) -> Check {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let session_dir = out.path().join("b1").join("s001");
    std::fs::create_dir_all(&session_dir).map_err(|e| e.to_string())?;
    let record = jacket_session(calls, &session_dir).await?;
    save_session(&record, &session_dir).map_err(|e| e.to_string())?;

    let settings = InterviewSettings::default();
    let echo = r#"{"rules": [{"purpose": "interview", "matches": "(?P<q>[^\n]*)\\z", "reply": "You asked: ${q}"}]}"#;
    let state = Arc::new(uxsim_service::AppState::new(
        uxsim_service::SessionStore::new(out.path()),
        calls.stub(echo),
        Prompts::default().interview,
        settings.clone(),
    ));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
    let app = uxsim_service::router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    let client = reqwest::Client::new();
    let post = |path: String, body: Value| client.post(format!("{base}{path}")).json(&body).send();

    let r = post("/interviews".into(), json!({ "session_id": "b1.s001" })).await.map_err(|e| e.to_string())?;
    ensure!(r.status().as_u16() == 201, "start interview: {}", r.status());
    let id = r.json::<Value>().await.map_err(|e| e.to_string())?["interview_id"]
        .as_str()
        .ok_or("no interview_id")?
        .to_string();
    let r = post(format!("/interviews/{id}/messages"), json!({ "text": "Why did you add that jacket to your cart?" }))
        .await
        .map_err(|e| e.to_string())?;
    let body = r.text().await.map_err(|e| e.to_string())?;
    ensure!(body.contains("You asked"), "reply stream: {body}");

    let captured = state.captures(&id);
    let system = &captured.first().ok_or("no interview prompt captured")?.request.system;
    ensure!(system.contains(&record.persona.name), "persona missing from the system prompt");
    let kept: Vec<_> = record.memories.iter().filter(|m| m.importance >= settings.importance_threshold).collect();
    ensure!(!kept.is_empty(), "no memories above the threshold");
    for m in kept {
        ensure!(system.contains(&memory_line(m)), "memory {} missing from the system prompt", m.id);
    }
    ensure!(system.contains("Add to Cart"), "the purchase action is missing from the system prompt");

    let r = post(format!("/interviews/{id}/messages"), json!({ "text": "Thoughts on this?", "image": "aGk=" }))
        .await
        .map_err(|e| e.to_string())?;
    let status = r.status().as_u16();
    let err: Value = r.json().await.map_err(|e| e.to_string())?;
    ensure!(status == 415 && err["error"]["code"] == "unsupported_feature", "image upload gave {status} {err}");
    server.abort();

    let live = calls.total();
    ensure!(live == 0, "{live} live provider calls");
    Ok(())
}

type Fut<'a> = Pin<Box<dyn Future<Output = Check> + 'a>>;

#[tokio::main(flavor = "multi_thread", worker_threads = 2)]
async fn main() {
    let calls = Calls::default();
    let criteria: Vec<(&str, Option<Duration>, Fut<'_>)> = vec![
        ("parser golden", Some(PARSER_BUDGET), Box::pin(async { parser_golden() })),
        ("flattening and text", None, Box::pin(async { flattening_and_text() })),
        ("name paths", None, Box::pin(async { name_paths() })),
        ("action space", Some(ACTION_SPACE_BUDGET), Box::pin(action_space())),
        ("retrieval oracle", Some(RETRIEVAL_BUDGET), Box::pin(async { retrieval_oracle() })),
        ("end-to-end determinism", Some(END_TO_END_BUDGET), Box::pin(end_to_end(&calls))),
        ("persona stratification", None, Box::pin(persona_stratification(&calls))),
        ("aggregates", None, Box::pin(async { aggregates() })),
        ("interview contract", None, Box::pin(interview_contract(&calls))),
    ];
    let mut failed = 0;
    for (name, budget, fut) in criteria {
        let start = Instant::now();
        let mut result = fut.await;
        let took = start.elapsed();
        if let (Ok(()), Some(b)) = (&result, budget) {
            if took > b {
                result = Err(format!("took {took:?}, budget {b:?}"));
            }
        }
        match result {
            Ok(()) => println!("PASS {name} ({:.3}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.3}s): {why}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
