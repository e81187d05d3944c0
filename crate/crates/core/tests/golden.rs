use std::path::PathBuf;
use std::sync::Arc;

use ramo_core::catalog::{load_catalog, HeaderMap};
use ramo_core::embedding::HashingEmbedder;
use ramo_core::generation::ScriptedGenerator;
use ramo_core::prompting::{default_template, builtin_templates};
use ramo_core::recommender::{ChatSession, Recommender, RecommenderConfig};
use ramo_core::vecindex::build_index;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a golden file; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{name} drifted from its golden file");
}

fn recommender(template_id: &str) -> Recommender {
    let catalog = Arc::new(
        load_catalog(
            include_str!("../fixtures/mini_catalog.csv").as_bytes(),
            &HeaderMap::default(),
        )
        .unwrap(),
    );
    let embedder = Arc::new(HashingEmbedder::default());
    let index = Arc::new(build_index(&catalog, embedder.as_ref()).unwrap());
    let template = builtin_templates()
        .into_iter()
        .find(|t| t.id == template_id)
        .unwrap();
    Recommender::new(
        catalog,
        index,
        embedder,
        Arc::new(ScriptedGenerator::new()),
        template,
        RecommenderConfig::default(),
    )
    .unwrap()
}

#[test]
fn default_template_matches_table_text() {
    let expected = std::fs::read_to_string(golden_path("default_template.txt")).unwrap();
    assert_eq!(default_template().body(), expected);
}

#[test]
fn composed_prompts_are_byte_stable() {
    let message = "I want to learn python, can you recommend me some courses?";
    for (template, file) in [("default", "prompt_default_python.txt"), ("reasons", "prompt_reasons_python.txt")] {
        let rec = recommender(template);
        let session = ChatSession::new("golden");
        let first = rec.prepare(&session, message, rec.embedder().as_ref()).unwrap();
        let second = rec.prepare(&session, message, rec.embedder().as_ref()).unwrap();
        assert_eq!(first.prompt.serialize(), second.prompt.serialize());
        check_golden(file, &first.prompt.serialize());
    }
}
