use std::sync::Arc;

use embedreg::embedders::mock::{hash_embedding, MockEmbedServer, MockResponse};
use embedreg::embedders::{EmbedError, Embedder, EmbeddingCache, RemoteConfig, RemoteEmbedder, TextBackend, TextEmbedder};
use embedreg::{Assignment, FunctionId, RegressionTask, StringFormat};
use serde_json::json;

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{{x0:{i}}}")).collect()
}

fn client(server: &MockEmbedServer, batch: usize, cache: Arc<EmbeddingCache>) -> RemoteEmbedder {
    let cfg = RemoteConfig {
        batch_size: batch,
        backoff_ms: 1,
        ..RemoteConfig::new(server.url(), "mock-model")
    };
    RemoteEmbedder::with_api_key(cfg, cache, Some("secret".into())).unwrap()
}

#[test]
fn passes_rows_through_in_input_order() {
    let server = MockEmbedServer::deterministic(8).unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    let t = texts(5);
    let m = c.embed_texts(&t).unwrap();
    assert_eq!((m.rows(), m.dim()), (5, 8));
    for (i, text) in t.iter().enumerate() {
        assert_eq!(m.row(i).to_vec(), hash_embedding(text, 8));
    }
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].model, "mock-model");
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer secret"));
}

#[test]
fn batches_misses_and_preserves_order_under_concurrency() {
    let server = MockEmbedServer::deterministic(4).unwrap();
    let c = client(&server, 3, Arc::new(EmbeddingCache::in_memory()));
    let t = texts(10);
    let m = c.embed_texts(&t).unwrap();
    let reqs = server.requests();
    let mut sizes: Vec<usize> = reqs.iter().map(|r| r.texts.len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 3, 3, 3]);
    let mut seen: Vec<String> = reqs.iter().flat_map(|r| r.texts.clone()).collect();
    seen.sort();
    let mut want = t.clone();
    want.sort();
    assert_eq!(seen, want);
    for (i, text) in t.iter().enumerate() {
        assert_eq!(m.row(i).to_vec(), hash_embedding(text, 4));
    }
}

#[test]
fn duplicate_texts_are_fetched_once() {
    let server = MockEmbedServer::deterministic(4).unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    let t = vec!["a".to_string(), "b".into(), "a".into()];
    let m = c.embed_texts(&t).unwrap();
    assert_eq!(server.requests()[0].texts, vec!["a", "b"]);
    assert_eq!(m.row(0), m.row(2));
}

#[test]
fn full_cache_hit_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let server = MockEmbedServer::deterministic(6).unwrap();
    let t = texts(7);
    let first = {
        let c = client(&server, 2, Arc::new(EmbeddingCache::open(&path).unwrap()));
        c.embed_texts(&t).unwrap()
    };
    let before = server.request_count();
    let c = client(&server, 2, Arc::new(EmbeddingCache::open(&path).unwrap()));
    let second = c.embed_texts(&t).unwrap();
    assert_eq!(server.request_count(), before);
    assert_eq!(c.requests_sent(), 0);
    assert_eq!(first.values(), second.values());
}

#[test]
fn retries_three_times_then_fails() {
    let server = MockEmbedServer::failing(503).unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    let err = c.embed_texts(&texts(2)).unwrap_err();
    assert!(matches!(err, EmbedError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.request_count(), 3);
}

#[test]
fn recovers_when_a_retry_succeeds() {
    let server = MockEmbedServer::start(|req| {
        if req.index < 2 {
            MockResponse::status(500)
        } else {
            let rows: Vec<Vec<f64>> = req.texts.iter().map(|t| hash_embedding(t, 3)).collect();
            MockResponse::json(json!({ "embeddings": rows }))
        }
    })
    .unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    assert_eq!(c.embed_texts(&texts(2)).unwrap().dim(), 3);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockEmbedServer::failing(400).unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    assert!(c.embed_texts(&texts(1)).is_err());
    assert_eq!(server.request_count(), 1);
}

#[test]
fn mixed_dimensions_are_rejected_and_not_cached() {
    let server = MockEmbedServer::start(|req| {
        let dim = if req.texts[0] == "{x0:0}" { 8 } else { 5 };
        let rows: Vec<Vec<f64>> = req.texts.iter().map(|t| hash_embedding(t, dim)).collect();
        MockResponse::json(json!({ "embeddings": rows }))
    })
    .unwrap();
    let cache = Arc::new(EmbeddingCache::in_memory());
    let c = client(&server, 1, cache.clone());
    let err = c.embed_texts(&texts(3)).unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch(_)), "{err}");
    assert!(cache.is_empty());
}

#[test]
fn non_finite_and_short_responses_are_rejected() {
    // JSON has no NaN literal; a huge exponent parses to infinity.
    let server = MockEmbedServer::start(|req| MockResponse {
        status: 200,
        body: format!(
            "{{\"embeddings\": [{}]}}",
            vec!["[1.0, 1e999]"; req.texts.len()].join(",")
        ),
    })
    .unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    assert!(c.embed_texts(&texts(2)).is_err());

    let short = MockEmbedServer::start(|_| MockResponse::json(json!({"embeddings": [[1.0]]}))).unwrap();
    let c = client(&short, 32, Arc::new(EmbeddingCache::in_memory()));
    assert!(matches!(c.embed_texts(&texts(2)), Err(EmbedError::Response(_))));
}

#[test]
fn text_embedder_serializes_tasks_for_the_service() {
    let server = MockEmbedServer::deterministic(8).unwrap();
    let c = client(&server, 32, Arc::new(EmbeddingCache::in_memory()));
    let embedder = TextEmbedder::new(TextBackend::Remote(c), StringFormat::full()).unwrap();
    let task = RegressionTask::synthetic(FunctionId::SPHERE, 2).unwrap();
    let xs = vec![Assignment::from_reals([0.32, -4.21])];
    let m = embedder.embed(&task, &xs).unwrap();
    assert_eq!(server.requests()[0].texts, vec!["{x0:0.32,x1:-4.21}"]);
    assert_eq!(m.provenance(), &embedder.provenance());
}
