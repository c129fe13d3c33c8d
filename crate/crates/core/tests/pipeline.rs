//! Cross-module integration: store -> index -> retrieve -> search, reasoning
//! enrichment over the mock backend, and the HTTP backend against a stub
//! chat-completions server.

use std::io::{Read, Write};
use std::net::TcpListener;

use rcts_core::mcts::{ActionSpace, SearchConfig};
use rcts_core::rewards::HeuristicEvaluator;
use rcts_core::{
    build_index, build_reasoning_context, parse_kb_jsonl, retrieve_top_n, run_search,
    save_kb_jsonl, GenRequest, GeneratorBackend, HashEmbedder, HttpBackend, KbEntry, KbStore,
    MockBackend, Query, ReasoningConfig, TemplateId, Termination,
};

fn synthetic_store(n: usize) -> KbStore {
    let mut store = KbStore::new();
    for i in 0..n {
        let mut entry = KbEntry::new(
            format!("kb{i:03}"),
            format!("[KB {i:03}] sample question about topic {}", i % 7),
            "B",
        );
        entry.options = Some(vec!["north".into(), "south".into(), "east".into()]);
        if i % 3 == 0 {
            entry.image_ref = Some(format!("img/{i:03}.png"));
        }
        store.insert(entry).unwrap();
    }
    store
}

#[test]
fn store_to_search_round_trip() {
    let store = synthetic_store(25);
    let provider = HashEmbedder::new(32, 5);
    let index = build_index::<f32>(&store, &provider).unwrap();
    assert_eq!(index.len(), store.len());

    // same wording as kb007 but tagged as a query, so mock rules can tell
    // the zero-shot prompt from prompts that carry knowledge-base examples
    let query = Query::new("[USER] sample question about topic 0", None);
    let query_emb = rcts_core::embed(&provider, &query.question, None).unwrap();
    let hits = retrieve_top_n(&query_emb, &index, 10, Some("kb007")).unwrap();
    assert_eq!(hits.len(), 10);
    assert!(hits.iter().all(|h| h.entry_id != "kb007"));

    let space = ActionSpace::from_hits(&hits, &store).unwrap();
    let backend = MockBackend::from_json_rules(&[
        serde_json::json!({"match": {"contains": ["[KB"]}, "response": "The answer is B."}),
        serde_json::json!({"fallback": "The answer is A."}),
    ])
    .unwrap();
    let cfg = SearchConfig {
        k: 3,
        n: 10,
        rollouts: 5,
        template: TemplateId::ScienceQa,
        ..SearchConfig::default()
    };
    let result = run_search(&query, &space, &backend, &cfg).unwrap();
    assert_eq!(result.branch.len(), 3);
    assert_eq!(result.response.answer.as_deref(), Some("B"));
    // branch responses disagree with the zero-shot "A", so no early stop
    assert_ne!(result.termination, Termination::EarlyStop);
}

#[test]
fn reasoning_enrichment_survives_persistence() {
    let mut store = synthetic_store(3);
    let backend = MockBackend::from_json_rules(&[
        serde_json::json!({
            "match": {"contains": ["**Answer:**"]},
            "responses_by_seed": {"1": "check the compass rose", "2": "look at the map edge"},
        }),
        serde_json::json!({"match": {"contains": ["compass rose"]}, "response": "The answer is B."}),
        serde_json::json!({"fallback": "The answer is C."}),
    ])
    .unwrap();
    let cfg = ReasoningConfig {
        n_candidates: 2,
        n_predictions: 4,
        ..ReasoningConfig::default()
    };
    let ids: Vec<String> = store.iter().map(|e| e.id.clone()).collect();
    for id in &ids {
        let entry = store.get_mut(id).unwrap();
        let outcome = build_reasoning_context(entry, &backend, &cfg).unwrap();
        assert_eq!(outcome.text, "check the compass rose");
        assert_eq!(outcome.score, 1.0);
        assert_eq!(outcome.n_eval, 4);
    }
    let mut buf = Vec::new();
    save_kb_jsonl(&store, &mut buf).unwrap();
    let reloaded = parse_kb_jsonl(buf.as_slice()).unwrap();
    assert!(reloaded
        .iter()
        .all(|e| e.reasoning.as_deref() == Some("check the compass rose")));
}

#[test]
fn identical_seeds_reproduce_reward_breakdowns() {
    let store = synthetic_store(12);
    let provider = HashEmbedder::new(32, 5);
    let index = build_index::<f32>(&store, &provider).unwrap();
    let query = Query::new("[Q] sample question about topic 4", None);
    let query_emb = rcts_core::embed(&provider, &query.question, None).unwrap();
    let hits = retrieve_top_n(&query_emb, &index, 8, None).unwrap();
    let space = ActionSpace::from_hits(&hits, &store).unwrap();
    let backend = MockBackend::from_json_rules(&[
        serde_json::json!({"match": {"contains": ["THOUGHT PROCESS"]}, "response": "The answer is B."}),
        serde_json::json!({"match": {"contains": ["[KB"]}, "response": "The answer is B. BECAUSE: matching samples agree."}),
        serde_json::json!({"fallback": "The answer is A."}),
    ])
    .unwrap();
    let cfg = SearchConfig {
        k: 2,
        n: 8,
        rollouts: 4,
        rng_seed: 77,
        template: TemplateId::ScienceQa,
        ..SearchConfig::default()
    };
    let run = || run_search(&query, &space, &backend, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.reward, b.reward);
    assert_eq!(a.rollouts_used, b.rollouts_used);
    assert_eq!(a.tree_size, b.tree_size);
    // branch responses carry reasoning, so the self reward is exercised
    assert!(a.reward.q_self > 0.0);
    assert_eq!(a.reward.self_verdicts.len(), cfg.reward.n_self);
    assert_eq!(a.reward.mutual_verdicts.len(), cfg.reward.n_mutual);
}

#[test]
fn mutual_samples_are_shared_across_branches() {
    let store = synthetic_store(10);
    let provider = HashEmbedder::new(32, 5);
    let index = build_index::<f32>(&store, &provider).unwrap();
    let query_emb = rcts_core::embed(&provider, "which direction", None).unwrap();
    let hits = retrieve_top_n(&query_emb, &index, 8, None).unwrap();
    let space = ActionSpace::from_hits(&hits, &store).unwrap();
    let backend = MockBackend::from_json_rules(&[serde_json::json!({"fallback": "The answer is A."})])
        .unwrap();
    let first = HeuristicEvaluator::new(
        &backend,
        &space,
        rcts_core::RewardConfig::default(),
        TemplateId::ScienceQa,
    )
    .unwrap();
    let second = HeuristicEvaluator::new(
        &backend,
        &space,
        rcts_core::RewardConfig::default(),
        TemplateId::ScienceQa,
    )
    .unwrap();
    let ids = |e: &HeuristicEvaluator| {
        e.mutual_samples().iter().map(|s| s.id.clone()).collect::<Vec<_>>()
    };
    assert_eq!(ids(&first), ids(&second));
    assert_eq!(first.mutual_samples().len(), 5);
}

/// Minimal one-shot chat-completions stub: accepts a single connection,
/// reads the request, and replays a canned body.
fn spawn_stub(body: &'static str) -> (std::thread::JoinHandle<String>, String) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = vec![0u8; 65536];
        let mut request = String::new();
        loop {
            let n = stream.read(&mut buf).unwrap();
            request.push_str(&String::from_utf8_lossy(&buf[..n]));
            if let Some(header_end) = request.find("\r\n\r\n") {
                let content_length = request
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(str::to_string))
                    .and_then(|v| v.parse::<usize>().ok())
                    .unwrap_or(0);
                if request.len() >= header_end + 4 + content_length {
                    break;
                }
            }
        }
        let response = format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            body.len(),
            body
        );
        stream.write_all(response.as_bytes()).unwrap();
        stream.flush().unwrap();
        request
    });
    (handle, format!("http://{addr}"))
}

#[test]
fn http_backend_reads_canned_completion() {
    let body = r#"{"choices": [{"message": {"role": "assistant", "content": "The answer is D."}}]}"#;
    let (handle, endpoint) = spawn_stub(body);
    let backend = HttpBackend::new(&endpoint, "stub-model").unwrap();
    let bundle = rcts_core::assemble_prompt(
        &Query::new("stub question", Some("img.png".into())),
        &[],
        TemplateId::Mmmu,
        false,
    );
    let raw = backend
        .generate(&GenRequest {
            bundle,
            seed: 11,
            temperature: 0.0,
            max_tokens: 32,
        })
        .unwrap();
    assert_eq!(raw, "The answer is D.");
    let request = handle.join().unwrap();
    assert!(request.starts_with("POST /chat/completions"));
    let json_start = request.find("\r\n\r\n").unwrap() + 4;
    let sent: serde_json::Value = serde_json::from_str(&request[json_start..]).unwrap();
    assert_eq!(sent["model"], "stub-model");
    assert_eq!(sent["seed"], 11);
    assert_eq!(sent["messages"][0]["role"], "system");
    let user = &sent["messages"][1];
    assert_eq!(user["role"], "user");
    assert_eq!(user["content"][0]["type"], "text");
    assert_eq!(user["content"][1]["type"], "image_url");
    assert_eq!(user["content"][1]["image_url"]["url"], "img.png");
}
