use std::sync::Arc;

use proptest::prelude::*;
use sketchloop_core::analogy::{
    normalize_label, parse_reply, AnalogyEngine, AnalogyError, Category, InspirationRequest,
    PromptTemplates,
};
use sketchloop_core::backends::{Failure, LanguageModel, Latency, MockLanguageModel};

const STEP1_CAR: &str = "Describe the key design principles in car design in one short paragraph.";

const PRINCIPLES: &str = "Key design principles for car design include aerodynamic exteriors.";

const STEP2_CAR_PROTECTIVE: &str = "You are a car designer. The design principles in car design are as follows: Key design principles for car design include aerodynamic exteriors.. Brainstorm analogical inspirations for car design to convey a sense of protective from one of the following domains: nature, architecture, or fashion. Answer in a bullet-point list of 10 items (item1\\nitem2...\\nitem3) using visually-concrete objects not adjectives and don't repeat.";

fn templates() -> PromptTemplates {
    PromptTemplates::default()
}

fn step2_request(subject: &str, concept: &str, count: usize) -> String {
    templates().render_step2_request(subject, concept, PRINCIPLES, count)
}

fn engine_with(mock: MockLanguageModel) -> (AnalogyEngine, Arc<MockLanguageModel>) {
    let mock = Arc::new(mock);
    let llm: Arc<dyn LanguageModel> = mock.clone();
    (AnalogyEngine::new(llm, templates()), mock)
}

fn car_mock() -> MockLanguageModel {
    MockLanguageModel::new()
        .with_reply(STEP1_CAR, PRINCIPLES)
        .with_reply(
            &step2_request("car", "protective", 10),
            "1. tortoise | nature\n2. armadillo | nature\n2. Armadillo\n3. armor | fashion",
        )
        .with_reply(
            &step2_request("car", "tortoise", 10),
            "tank\nbackpack\ntreasure chest",
        )
        .with_reply(&templates().render_categorize("tank"), "Architecture.")
        .with_reply(&templates().render_categorize("backpack"), "fashion")
        .with_reply(
            &templates().render_categorize("treasure chest"),
            "I am not sure",
        )
}

#[test]
fn step_one_matches_listing_byte_for_byte() {
    assert_eq!(templates().render_step1("car"), STEP1_CAR);
}

#[test]
fn step_two_matches_listing_byte_for_byte() {
    let rendered = templates().render_step2("car", "protective", PRINCIPLES, 10);
    assert_eq!(rendered, STEP2_CAR_PROTECTIVE);
    assert_eq!(rendered.as_bytes(), STEP2_CAR_PROTECTIVE.as_bytes());
}

#[tokio::test]
async fn tortoise_fixture_parses_to_three_labels() {
    let (engine, _) = engine_with(car_mock());
    let request = InspirationRequest::new("car", "protective", 10).unwrap();
    let set = engine.inspirations(&request).await.unwrap();
    let labels: Vec<&str> = set.items.iter().map(|i| i.label.as_str()).collect();
    assert_eq!(labels, ["tortoise", "armadillo", "armor"]);
    assert_eq!(set.items[2].category, Category::Fashion);
    assert!(set.short);
    assert!(!set.warnings.is_empty());
}

#[tokio::test]
async fn principles_are_cached_per_subject() {
    let (engine, mock) = engine_with(car_mock());
    let first = engine.fetch_design_principles("car").await.unwrap();
    assert_eq!(first.text, PRINCIPLES);
    let calls = mock.calls();
    let second = engine.fetch_design_principles("car").await.unwrap();
    assert_eq!(first, second);
    assert_eq!(mock.calls(), calls);
}

#[tokio::test]
async fn empty_principles_are_an_error() {
    let (engine, _) = engine_with(MockLanguageModel::new().with_reply(STEP1_CAR, "  \n"));
    assert!(matches!(
        engine.fetch_design_principles("car").await,
        Err(AnalogyError::EmptyReply(_))
    ));
}

#[tokio::test]
async fn empty_reply_carries_raw_text() {
    let mock = MockLanguageModel::new()
        .with_reply(STEP1_CAR, PRINCIPLES)
        .with_reply(&step2_request("car", "protective", 10), "");
    let (engine, _) = engine_with(mock);
    let request = InspirationRequest::new("car", "protective", 10).unwrap();
    match engine.inspirations(&request).await {
        Err(AnalogyError::Unparseable { raw }) => assert_eq!(raw, ""),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[tokio::test]
async fn branch_children_carry_parent_and_categories() {
    let (engine, _) = engine_with(car_mock());
    let request = InspirationRequest::new("car", "protective", 10).unwrap();
    let set = engine.branch("tortoise", &request).await.unwrap();
    let got: Vec<(&str, Category)> = set
        .items
        .iter()
        .map(|i| (i.label.as_str(), i.category))
        .collect();
    assert_eq!(
        got,
        [
            ("tank", Category::Architecture),
            ("backpack", Category::Fashion),
            ("treasure chest", Category::Nature),
        ]
    );
    assert!(set
        .items
        .iter()
        .all(|i| i.parent.as_deref() == Some("tortoise")));
    assert_eq!(set.parent.as_deref(), Some("tortoise"));
    assert!(set.warnings.iter().any(|w| w.contains("treasure chest")));
}

#[tokio::test]
async fn categorize_uses_fixture_and_falls_back_on_failure() {
    let mock = MockLanguageModel::new()
        .with_reply(&templates().render_categorize("zen garden"), "architecture");
    let (engine, _) = engine_with(mock);
    assert_eq!(
        engine.categorize("zen garden").await,
        (Category::Architecture, None)
    );

    let (failing, _) = engine_with(
        MockLanguageModel::new().with_failure(Failure::Transport("connection refused".into())),
    );
    let (category, warning) = failing.categorize("tortoise").await;
    assert_eq!(category, Category::Nature);
    assert!(warning.unwrap().contains("connection refused"));
}

#[tokio::test]
async fn concurrent_identical_requests_share_one_backend_call() {
    let mock = car_mock().with_latency(Latency::Fixed(std::time::Duration::from_millis(50)));
    let (engine, mock) = engine_with(mock);
    let engine = Arc::new(engine);
    let request = InspirationRequest::new("car", "protective", 10).unwrap();
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let engine = engine.clone();
            let request = request.clone();
            tokio::spawn(async move { engine.inspirations(&request).await.unwrap() })
        })
        .collect();
    let mut results = Vec::new();
    for t in tasks {
        results.push(t.await.unwrap());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
    // one principles call plus one step-two call
    assert_eq!(mock.calls(), 2);

    let reseeded = InspirationRequest {
        chain_seed: 1,
        ..request
    };
    engine.inspirations(&reseeded).await.unwrap();
    assert_eq!(mock.calls(), 3);
}

#[tokio::test]
async fn missing_fixture_names_the_hash() {
    let (engine, _) = engine_with(MockLanguageModel::new());
    let err = engine.fetch_design_principles("lamp").await.unwrap_err();
    let hash = sketchloop_core::backends::prompt_hash(&templates().render_step1("lamp"));
    assert!(err.to_string().contains(&hash), "{err}");
}

#[test]
fn request_bounds() {
    assert!(InspirationRequest::new(" ", "protective", 10).is_err());
    assert!(InspirationRequest::new("car", "", 10).is_err());
    assert!(InspirationRequest::new("car", "protective", 0).is_err());
    assert!(InspirationRequest::new("car", "protective", 26).is_err());
    assert!(InspirationRequest::new("car", "protective", 25).is_ok());
}

fn decorated_item() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec![
        "tortoise",
        "Armadillo",
        "armor",
        "shell",
        "castle",
        "bunker",
        "silk",
        "river",
        "Zen",
        "garden",
        "tank",
        "dome",
    ]);
    let prefix = prop::sample::select(vec![
        "", "- ", "* ", "• ", "1. ", "12) ", "(3) ", "#4 ", "  ",
    ]);
    let suffix = prop::sample::select(vec!["", ".", "!", ";", ": strong and safe", " - protects"]);
    (prefix, prop::collection::vec(word, 1..3), suffix)
        .prop_map(|(p, words, s)| format!("{p}{}{s}", words.join("  ")))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parser_is_unique_and_idempotent(items in prop::collection::vec(decorated_item(), 0..20)) {
        let parsed = parse_reply(&items.join("\n"));
        let labels: Vec<String> = parsed.iter().map(|i| i.label.clone()).collect();
        let mut lower: Vec<String> = labels.iter().map(|l| l.to_lowercase()).collect();
        lower.sort();
        lower.dedup();
        prop_assert_eq!(lower.len(), labels.len());
        for label in &labels {
            prop_assert_eq!(normalize_label(label), Some(label.clone()));
        }
        let again: Vec<String> = parse_reply(&labels.join("\n")).into_iter().map(|i| i.label).collect();
        prop_assert_eq!(again, labels);
    }
}
