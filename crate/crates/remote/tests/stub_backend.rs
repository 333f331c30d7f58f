use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use jointinf_core::uicl::SampledAnswer;
use jointinf_core::{AnswerSet, Instance, SupportContext};
use jointinf_remote::*;

fn config(server: &StubServer) -> BackendConfig {
    BackendConfig {
        base_url: server.base_url(),
        model: "stub-model".into(),
        api_key_env: None,
        max_concurrent: 4,
        requests_per_minute: 60_000.0,
        retry: RetryPolicy { max_attempts: 4, backoff_base_ms: 5, backoff_cap_ms: 20 },
        temperature: 0.0,
        max_tokens: 8,
        cache_dir: None,
        timeout_secs: 5,
        send_seed: true,
    }
}

#[test]
fn fixed_text_comes_back() {
    let server = StubServer::start(|_| StubResponse::completion("positive")).unwrap();
    let client = ChatClient::new(config(&server)).unwrap();
    assert_eq!(client.complete(None, "Review: ok\nSentiment:", 1).unwrap(), "positive");
    let req = &server.requests()[0];
    assert_eq!(req.method, "POST");
    assert_eq!(req.path, "/v1/chat/completions");
    let body = req.json().unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["max_tokens"], 8);
    assert_eq!(body["seed"], 1);
    assert_eq!(req.user_prompt().unwrap(), "Review: ok\nSentiment:");
}

#[test]
fn rate_limited_twice_then_success() {
    let server = StubServer::start(|r| {
        if r.index < 2 {
            StubResponse::status(429, r#"{"error":"slow down"}"#)
        } else {
            StubResponse::completion("negative")
        }
    })
    .unwrap();
    let client = ChatClient::new(config(&server)).unwrap();
    assert_eq!(client.complete(None, "p", 0).unwrap(), "negative");
    assert_eq!(server.request_count(), 3);
    let stats = client.stats();
    assert_eq!((stats.network_attempts, stats.retries, stats.completions), (3, 2, 1));
}

#[test]
fn client_errors_are_fatal_with_body() {
    let server = StubServer::start(|_| StubResponse::status(400, "bad model name")).unwrap();
    let client = ChatClient::new(config(&server)).unwrap();
    match client.complete(None, "p", 0) {
        Err(RemoteError::Http { status: 400, body }) => assert_eq!(body, "bad model name"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.request_count(), 1);
}

#[test]
fn server_errors_exhaust_retries() {
    let server = StubServer::start(|_| StubResponse::status(503, "")).unwrap();
    let client = ChatClient::new(config(&server)).unwrap();
    assert!(matches!(client.complete(None, "p", 0), Err(RemoteError::TransientExhausted { attempts: 4, .. })));
    assert_eq!(server.request_count(), 4);
}

#[test]
fn timeouts_are_retried() {
    let server = StubServer::start(|r| {
        let resp = StubResponse::completion("positive");
        if r.index == 0 {
            resp.with_delay(Duration::from_millis(2500))
        } else {
            resp
        }
    })
    .unwrap();
    let client = ChatClient::new(BackendConfig { timeout_secs: 1, ..config(&server) }).unwrap();
    assert_eq!(client.complete(None, "p", 0).unwrap(), "positive");
    assert_eq!(client.stats().network_attempts, 2);
}

#[test]
fn cache_hits_skip_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(|r| StubResponse::completion(&format!("reply {}", r.index))).unwrap();
    let cfg = BackendConfig { cache_dir: Some(dir.path().to_path_buf()), ..config(&server) };
    let client = ChatClient::new(cfg.clone()).unwrap();
    let first = client.complete(Some("sys"), "prompt", 7).unwrap();
    let path = client.cache_path(Some("sys"), "prompt", 7).unwrap();
    assert!(path.exists());
    let stored: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored["choices"][0]["message"]["content"], first.as_str());

    // a fresh client over the same cache directory never calls out
    let again = ChatClient::new(cfg).unwrap();
    assert_eq!(again.complete(Some("sys"), "prompt", 7).unwrap(), first);
    assert_eq!(server.request_count(), 1);
    assert_eq!(again.stats().cache_hits, 1);
    // another rng tag is another draw
    assert_ne!(again.complete(Some("sys"), "prompt", 8).unwrap(), first);
    assert_eq!(server.request_count(), 2);
}

#[test]
fn concurrency_ceiling_holds() {
    let server = StubServer::start(|_| StubResponse::completion("ok").with_delay(Duration::from_millis(40))).unwrap();
    let client = Arc::new(ChatClient::new(BackendConfig { max_concurrent: 3, ..config(&server) }).unwrap());
    let handles: Vec<_> = (0..24)
        .map(|i| {
            let c = client.clone();
            std::thread::spawn(move || c.complete(None, &format!("p{i}"), i).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(server.request_count(), 24);
    assert!(server.max_in_flight() <= 3, "max in flight {}", server.max_in_flight());
    assert!(server.max_in_flight() >= 2);
}

#[test]
fn requests_are_paced_by_the_budget() {
    let server = StubServer::start(|_| StubResponse::completion("ok")).unwrap();
    // 600 per minute: one request start per 100 ms
    let client = Arc::new(ChatClient::new(BackendConfig { requests_per_minute: 600.0, ..config(&server) }).unwrap());
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let c = client.clone();
            std::thread::spawn(move || c.complete(None, &format!("p{i}"), i).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let mut t = server.arrivals();
    t.sort();
    for w in t.windows(2) {
        let gap = w[1] - w[0];
        assert!(gap >= Duration::from_millis(90), "gap {gap:?}");
    }
}

#[test]
fn concurrent_identical_requests_hit_the_network_once() {
    let dir = tempfile::tempdir().unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let c2 = calls.clone();
    let server = StubServer::start(move |_| {
        c2.fetch_add(1, Ordering::SeqCst);
        StubResponse::completion("same").with_delay(Duration::from_millis(30))
    })
    .unwrap();
    let cfg = BackendConfig { cache_dir: Some(dir.path().to_path_buf()), ..config(&server) };
    let client = Arc::new(ChatClient::new(cfg).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let c = client.clone();
            std::thread::spawn(move || c.complete(None, "identical", 3).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "same");
    }
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn sampler_parses_or_rejects() {
    let replies = ["positive", "Well, it is hard to say.", "Answer: B"];
    let server = StubServer::start(move |r| StubResponse::completion(replies[r.index.min(2)])).unwrap();
    let client = ChatClient::new(config(&server)).unwrap();
    let x = Instance::with_text("q", "some text");

    let ys = AnswerSet::from_labels(&["positive", "negative"]).unwrap();
    let sst2 = PromptTemplate::builtin("sst2").unwrap();
    let s = RemoteSampler::new(&client, &sst2, &ys).unwrap();
    assert_eq!(
        s.remote_sample_answer(&x, &SupportContext::empty(), 0).unwrap(),
        SampledAnswer::Answer { index: 0, raw: Some("positive".into()) }
    );
    assert_eq!(
        s.remote_sample_answer(&x, &SupportContext::empty(), 1).unwrap(),
        SampledAnswer::Rejected { raw: "Well, it is hard to say.".into() }
    );

    let letters = AnswerSet::from_labels(&["A", "B", "C", "D"]).unwrap();
    let mc = PromptTemplate::builtin("letters").unwrap();
    let s = RemoteSampler::new(&client, &mc, &letters).unwrap();
    assert!(matches!(s.remote_sample_answer(&x, &SupportContext::empty(), 2).unwrap(), SampledAnswer::Answer { index: 1, .. }));
    let sys = server.requests()[2].json().unwrap();
    assert_eq!(sys["messages"][0]["role"], "system");
}

#[test]
fn missing_api_key_variable_is_reported_by_name() {
    let cfg = BackendConfig { api_key_env: Some("JOINTINF_SURELY_UNSET_VARIABLE".into()), ..BackendConfig::default() };
    match ChatClient::new(cfg) {
        Err(RemoteError::MissingApiKey(v)) => assert_eq!(v, "JOINTINF_SURELY_UNSET_VARIABLE"),
        other => panic!("unexpected {:?}", other.err()),
    }
}
