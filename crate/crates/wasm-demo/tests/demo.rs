use ragforge_core::index::ChunkingConfig;
use ragforge_core::retrieval::{litm_reorder, RetrievalConfig};
use ragforge_wasm_demo::{layout_impl, parse_config, Demo, SAMPLES};

fn golden(name: &str) -> String {
    let path = format!(
        "{}/../core/fixtures/golden/{name}.md",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read_to_string(path).unwrap()
}

fn demo() -> Demo {
    let docs: Vec<(&str, String)> = SAMPLES
        .iter()
        .map(|(name, json)| (*name, layout_impl(json).unwrap().markdown))
        .collect();
    let borrowed: Vec<(&str, &str)> = docs.iter().map(|(n, m)| (*n, m.as_str())).collect();
    Demo::build(
        &borrowed,
        ChunkingConfig {
            size: 40,
            overlap: 8,
        },
    )
    .unwrap()
}

fn ids(docs: &[ragforge_core::retrieval::ScoredDoc]) -> Vec<&str> {
    docs.iter().map(|d| d.chunk_id.as_str()).collect()
}

#[test]
fn layout_matches_goldens() {
    for (name, json) in SAMPLES {
        assert_eq!(layout_impl(json).unwrap().markdown, golden(name), "{name}");
    }
    let crowd = layout_impl(SAMPLES[2].1).unwrap();
    assert_eq!(crowd.pages[0].mid, Some(300.0));
    assert_eq!(crowd.pages[0].left[1], "4. Results");
    assert_eq!(crowd.pages[0].right.len(), 3);
    assert_eq!(crowd.pages[0].tables, 1);
}

#[test]
fn bad_layout_input_is_an_error() {
    assert!(layout_impl("{").is_err());
    assert!(
        layout_impl(r#"{"page_no": 1, "elements": [{"text": "x", "bbox": [5, 0, 1, 1]}]}"#)
            .is_err()
    );
}

#[test]
fn weights_move_the_fused_order() {
    let demo = demo();
    let q = "How often should the brake fluid be replaced?";
    let with = |w: f64| {
        let config = RetrievalConfig {
            weights: vec![w, 1.0 - w],
            ..RetrievalConfig::default()
        };
        demo.search_impl(q, &config).unwrap()
    };
    let lexical = with(1.0);
    assert_eq!(ids(&lexical.fused)[0], ids(&lexical.bm25)[0]);
    let semantic = with(0.0);
    assert_eq!(ids(&semantic.fused)[0], ids(&semantic.vector)[0]);
}

#[test]
fn compression_stages_chain() {
    let demo = demo();
    let out = demo
        .compress_impl(
            "coolant capacity and radiator cap pressure",
            &RetrievalConfig::default(),
        )
        .unwrap();
    assert!(out.filtered.len() <= out.candidates.len());
    assert_eq!(out.reranked.len(), out.filtered.len().min(5));
    assert_eq!(out.reordered, litm_reorder(out.reranked.clone()));
    assert!(out.reranked.iter().all(|d| d.relevance_score.is_some()));
}

#[test]
fn config_parsing() {
    assert_eq!(parse_config(None).unwrap(), RetrievalConfig::default());
    let c = parse_config(Some(
        r#"{"weights": [0.8, 0.2], "bm25": {"k1": 1.2, "b": 0.5}}"#,
    ))
    .unwrap();
    assert_eq!(c.weights, [0.8, 0.2]);
    assert_eq!(c.rrf_k, 60);
    assert!(parse_config(Some(r#"{"wieghts": [1, 0]}"#)).is_err());
    let bad = RetrievalConfig {
        weights: vec![1.0],
        ..RetrievalConfig::default()
    };
    assert!(demo().search_impl("brake", &bad).is_err());
}
