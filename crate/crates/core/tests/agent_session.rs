use std::sync::Arc;

use uxsim_core::agent::{run_session, save_session, AgentConfig, AgentSettings, SessionTarget};
use uxsim_core::browser::BrowserConfig;
use uxsim_core::llm::{Gateway, StubScript};
use uxsim_core::memory::MemoryKind;
use uxsim_core::money::Money;
use uxsim_core::persona::Persona;
use uxsim_core::recipe::Recipe;
use uxsim_core::record::{action_memory_text, export_action_trace, export_memory_trace, OutcomeKind, SessionRecord};
use uxsim_fixture::{asset_path, spawn_browser, spawn_shop, BrowserState, Server, ShopState, JACKET_SCRIPT, SHOP_RECIPE};

/// The five-action trace of the worked example, line for line.
const EXAMPLE_ACTION_TRACE: &str = "\
Action 1: type_and_submit, description: Typing 'woman's jacket' into the search input field and submitting the form.
Action 2: click, description: Clicking on the product 'Jackets For Women Womens Hooded Fleece Line Coats Parkas Faux Fur Jackets with Pockets' to view its details.
Action 3: click, description: Clicking on the 'Navy' color option for the jacket.
Action 4: click, description: Clicking on the 'Medium' size option for the jacket.
Action 5: click, description: Clicking on the 'Add to Cart' button to add the chosen product to the cart.
";

struct Rig {
    shop: Server<ShopState>,
    browser: Server<BrowserState>,
    dir: tempfile::TempDir,
}

impl Rig {
    async fn new() -> Self {
        Rig {
            shop: spawn_shop().await.unwrap(),
            browser: spawn_browser().await.unwrap(),
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn target(&self) -> SessionTarget {
        SessionTarget {
            session_id: "s1".into(),
            url: self.shop.url(),
            recipe: Arc::new(Recipe::from_json(SHOP_RECIPE).unwrap()),
            browser: BrowserConfig {
                backoff_ms: 1,
                ..BrowserConfig::with_endpoint(self.browser.url())
            },
            dir: self.dir.path().to_path_buf(),
        }
    }

    async fn run(&self, script: &str, settings: AgentSettings) -> (SessionRecord, Arc<Gateway>) {
        let gw = Arc::new(Gateway::stub(StubScript::from_json(script).unwrap()));
        let config = AgentConfig::new(Persona::seed(), "buy a jacket", settings);
        let record = run_session(config, gw.clone(), &self.target()).await.unwrap();
        (record, gw)
    }
}

fn golden_settings() -> AgentSettings {
    AgentSettings {
        slow_loop_every: 1,
        concurrent_slow_loop: false,
        ..AgentSettings::default()
    }
}

/// A script whose act queue is `acts`, with neutral replies for the rest.
fn script_with_acts(acts: &[&str]) -> String {
    serde_json::json!({
        "queues": { "act": acts },
        "defaults": {
            "perceive": "A part of the page.",
            "plan": "I will keep going.",
            "importance": "5",
            "wonder": "Hm.",
            "reflect": "Fine so far.",
            "act": r#"{"kind":"click","target":"header.home","description":"Going home."}"#,
            "act_repair": r#"{"kind":"click","target":"header.cart","description":"Opening the cart."}"#
        }
    })
    .to_string()
}

fn check_golden(name: &str, actual: &str) {
    let path = asset_path(&format!("golden/{name}"));
    if std::env::var_os("UXSIM_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from {}", path.display());
}

#[tokio::test]
async fn jacket_purchase_matches_example_and_goldens() {
    let rig = Rig::new().await;
    let (record, gw) = rig.run(JACKET_SCRIPT, golden_settings()).await;
    assert_eq!(record.outcome.kind, OutcomeKind::Purchased, "{:?}", record.outcome);
    assert_eq!(record.outcome.total, Some(Money::from_cents(3999)));
    assert_eq!(record.outcome.items.len(), 1);
    assert!(record.outcome.items[0].name.starts_with("Jackets For Women"));
    record.check().unwrap();

    let actions = export_action_trace(&record.actions);
    assert_eq!(actions, EXAMPLE_ACTION_TRACE);
    check_golden("jacket_actions.txt", &actions);
    let memories = export_memory_trace(&record.memories);
    check_golden("jacket_memories.txt", &memories);
    assert!(memories.starts_with("Before action 1, I thought: "));
    assert!(memories.contains("Before action 2, I saw: The page title reads '3 results for \"woman's jacket\"'."));

    for (k, shot) in record.screenshots.iter().enumerate() {
        let shot = shot.as_deref().expect("screenshot taken");
        assert_eq!(shot, format!("step_{}.png", k + 1));
        assert!(rig.dir.path().join(shot).is_file());
    }
    // The confirmation page ends the session before anyone perceives it.
    assert!(gw.captures_for("perceive").iter().all(|c| !c.request.full_text().contains("order_confirmation")));
    assert_eq!(gw.provider_calls(), 0);
}

#[tokio::test]
async fn every_action_has_exactly_one_action_memory() {
    let rig = Rig::new().await;
    let (record, _) = rig.run(JACKET_SCRIPT, golden_settings()).await;
    let texts: Vec<_> = record
        .memories
        .iter()
        .filter(|m| m.kind == MemoryKind::Action)
        .map(|m| m.text.clone())
        .collect();
    let expected: Vec<_> = record
        .actions
        .iter()
        .map(|a| action_memory_text(a.index, &a.action.description))
        .collect();
    assert_eq!(texts, expected);
}

#[tokio::test]
async fn record_survives_a_disk_round_trip() {
    let rig = Rig::new().await;
    let (record, _) = rig.run(JACKET_SCRIPT, golden_settings()).await;
    let out = rig.dir.path().join("saved");
    save_session(&record, &out).unwrap();
    assert_eq!(SessionRecord::load(&out.join("record.json")).unwrap(), record);
    let jsonl = std::fs::read_to_string(out.join("memory.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), record.memories.len());
}

#[tokio::test]
async fn terminate_on_the_first_step() {
    let rig = Rig::new().await;
    let script = script_with_acts(&[r#"{"kind":"terminate","description":"Nothing here for me."}"#]);
    let (record, _) = rig.run(&script, AgentSettings::default()).await;
    assert_eq!(record.outcome.kind, OutcomeKind::Terminated);
    assert_eq!(record.outcome.detail.as_deref(), Some("Nothing here for me."));
    assert!(record.actions.is_empty());
    assert!(record.screenshots.is_empty());
    assert_eq!(export_action_trace(&record.actions), "");
    record.check().unwrap();
}

#[tokio::test]
async fn stops_exactly_at_max_steps() {
    let rig = Rig::new().await;
    for max in [1, 3] {
        let settings = AgentSettings {
            max_steps: max,
            ..AgentSettings::default()
        };
        let (record, gw) = rig.run(&script_with_acts(&[]), settings).await;
        assert_eq!(record.outcome.kind, OutcomeKind::MaxStepsReached);
        assert_eq!(record.actions.len(), max as usize);
        assert_eq!(gw.captures_for("act").len(), max as usize);
    }
}

#[tokio::test]
async fn malformed_action_gets_one_repair() {
    let rig = Rig::new().await;
    let script = script_with_acts(&["I think I will click the cart.", r#"{"kind":"terminate","description":"Done."}"#]);
    let (record, gw) = rig.run(&script, AgentSettings::default()).await;
    assert_eq!(record.actions.len(), 1);
    assert_eq!(record.actions[0].action.target.as_deref(), Some("header.cart"));
    let repair = gw.captures_for("act_repair");
    assert_eq!(repair.len(), 1);
    let msgs = &repair[0].request.messages;
    assert_eq!(msgs[msgs.len() - 2].content, "I think I will click the cart.");
    assert!(msgs[msgs.len() - 1].content.contains("no JSON object found"));
    assert_eq!(record.outcome.kind, OutcomeKind::Terminated);
}

#[tokio::test]
async fn second_malformed_reply_is_an_error_outcome() {
    let rig = Rig::new().await;
    let mut script: serde_json::Value = serde_json::from_str(&script_with_acts(&["nope"])).unwrap();
    script["defaults"]["act_repair"] = "still nope".into();
    let (record, _) = rig.run(&script.to_string(), AgentSettings::default()).await;
    assert_eq!(record.outcome.kind, OutcomeKind::Error);
    assert!(record.outcome.detail.unwrap().contains("unusable action"));
}

#[tokio::test]
async fn out_of_registry_target_is_refused_and_reported() {
    let rig = Rig::new().await;
    let script = script_with_acts(&[
        r#"{"kind":"click","target":"product.buy_now","description":"Buying."}"#,
        r#"{"kind":"terminate","description":"Giving up."}"#,
    ]);
    let (record, gw) = rig.run(&script, AgentSettings::default()).await;
    assert!(record.actions.is_empty(), "refused action must not be traced");
    let err = "Element \"product.buy_now\" does not exist on the current page";
    assert!(record
        .memories
        .iter()
        .any(|m| m.kind == MemoryKind::Observation && m.text.contains(err)));
    let plans = gw.captures_for("plan");
    assert_eq!(plans.len(), 2);
    assert!(!plans[0].request.full_text().contains(err));
    assert!(plans[1].request.full_text().contains(err));
    assert!(gw.captures_for("act")[1].request.full_text().contains(err));
    // The page did not change, so its four segments were perceived once.
    assert_eq!(gw.captures_for("perceive").len(), 4);
}

#[tokio::test]
async fn prompts_are_filled_and_grounded() {
    let rig = Rig::new().await;
    let (_, gw) = rig.run(JACKET_SCRIPT, golden_settings()).await;
    let placeholder = regex::Regex::new(r"\{(persona|intent|url|page|segment|memories|clickables|inputs|plan|error|memory|problem)\}").unwrap();
    let captures = gw.captures();
    assert!(!captures.is_empty());
    for c in &captures {
        let text = c.request.full_text();
        assert!(!placeholder.is_match(&text), "unfilled placeholder in {} prompt:\n{text}", c.request.purpose);
        assert!(c.request.system.contains("Maya Thompson"));
        assert!(c.request.system.contains("buy a jacket"));
    }
    let acts = gw.captures_for("act");
    assert!(acts[0].request.full_text().contains("search_button"));
    assert!(acts[1].request.full_text().contains("faux_fur_jackets_with_pockets.view_product"));
    // Every reflection prompt carries at least one remembered text.
    for r in gw.captures_for("reflect") {
        assert!(r.request.full_text().contains("- [observation]"));
    }
    // From the second step on, plans see memories from earlier steps.
    let plans = gw.captures_for("plan");
    assert!(plans[1].request.full_text().contains("For action 1, I will:"));
}

#[tokio::test]
async fn concurrent_slow_loop_keeps_ids_dense() {
    let rig = Rig::new().await;
    let settings = AgentSettings {
        slow_loop_every: 1,
        concurrent_slow_loop: true,
        ..AgentSettings::default()
    };
    let (record, _) = rig.run(JACKET_SCRIPT, settings).await;
    assert_eq!(record.outcome.kind, OutcomeKind::Purchased);
    assert_eq!(export_action_trace(&record.actions), EXAMPLE_ACTION_TRACE);
    let ids: Vec<u64> = record.memories.iter().map(|m| m.id).collect();
    assert_eq!(ids, (1..=ids.len() as u64).collect::<Vec<_>>());
    let kinds = |k| record.memories.iter().filter(|m| m.kind == k).count();
    assert_eq!(kinds(MemoryKind::Wonder), 5);
    assert_eq!(kinds(MemoryKind::Action), 5);
}

#[tokio::test]
async fn unreachable_browser_is_an_error_outcome() {
    let rig = Rig::new().await;
    let mut target = rig.target();
    target.browser = BrowserConfig {
        backoff_ms: 1,
        retries: 0,
        ..BrowserConfig::with_endpoint("http://127.0.0.1:9")
    };
    let gw = Arc::new(Gateway::stub(StubScript::from_json(JACKET_SCRIPT).unwrap()));
    let config = AgentConfig::new(Persona::seed(), "buy a jacket", AgentSettings::default());
    let record = run_session(config, gw, &target).await.unwrap();
    assert_eq!(record.outcome.kind, OutcomeKind::Error);
    assert!(record.actions.is_empty());
}
