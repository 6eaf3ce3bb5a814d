use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use hetquery::gateway::{
    HttpReply, PromptRequest, ReqwestTransport, SamplingParams, TemplateId, Transport, TransportError,
};
use hetquery::{BackendConfig, Gateway, GatewayError};
use serde_json::{json, Value as Json};

struct Captured {
    path: String,
    auth: String,
    body: Json,
}

/// Serves `replies` in order, one connection each, and records the requests.
fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap().to_string();
            let (mut len, mut auth) = (0, String::new());
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = v.trim().to_string(),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(Captured { path, auth, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn request(temperature: f64, seed: u64) -> PromptRequest {
    PromptRequest::new(
        TemplateId::Answer,
        [("context", "[c#0] Q2 sales increased 20%."), ("question", "How did Q2 sales change?")],
        SamplingParams { temperature, max_output_chars: 10, seed },
    )
    .unwrap()
}

#[test]
fn chat_and_embedding_round_trip_over_tcp() {
    let chat = json!({"choices": [{"message": {"role": "assistant", "content": "Sales rose by twenty percent."}}]});
    let emb = json!({"data": [{"embedding": [3.0, 4.0]}]});
    let (url, server) = serve(vec![(200, chat.to_string()), (200, emb.to_string())]);
    let cfg = BackendConfig { embedding_dim: 3, ..BackendConfig::http(url) };
    let gw = Gateway::with_transport(&cfg, "sk-test", Arc::new(ReqwestTransport::new().unwrap())).unwrap();

    let c = gw.complete(&request(0.0, 9)).unwrap();
    assert_eq!(c.text, "Sales rose");
    let v = gw.embed("fever").unwrap();
    assert_eq!(v.values, [0.6, 0.8, 0.0]);

    let seen = server.join().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth, "Bearer sk-test");
    let body = &seen[0].body;
    assert_eq!(body["model"], "default");
    assert_eq!(body["seed"], 9);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 10);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("How did Q2 sales change?"));
    assert_eq!(seen[1].path, "/v1/embeddings");
    assert_eq!(seen[1].body, json!({"model": "default-embedding", "input": "fever"}));
}

#[test]
fn non_success_status_is_reported() {
    let (url, server) = serve(vec![(503, "{\"error\":\"overloaded\"}".into())]);
    let gw =
        Gateway::with_transport(&BackendConfig::http(url), "k", Arc::new(ReqwestTransport::new().unwrap())).unwrap();
    match gw.complete(&request(0.0, 0)) {
        Err(GatewayError::Status { status: 503, body }) => assert!(body.contains("overloaded")),
        other => panic!("{other:?}"),
    }
    server.join().unwrap();
}

struct Probe {
    active: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
    times: Mutex<Vec<Instant>>,
    fail_all: bool,
    fail_odd_seeds: bool,
}

impl Probe {
    fn new(fail_all: bool, fail_odd_seeds: bool) -> Arc<Self> {
        Arc::new(Probe {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            times: Mutex::new(Vec::new()),
            fail_all,
            fail_odd_seeds,
        })
    }
}

impl Transport for Probe {
    fn post_json(
        &self,
        _url: &str,
        _token: &str,
        body: &Json,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.times.lock().unwrap().push(Instant::now());
        if self.fail_all {
            return Err(TransportError("connection refused".into()));
        }
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.active.fetch_sub(1, Ordering::SeqCst);
        let seed = body["seed"].as_u64().unwrap_or(0);
        if self.fail_odd_seeds && seed % 2 == 1 {
            return Ok(HttpReply { status: 500, body: "boom".into() });
        }
        let reply = json!({"choices": [{"message": {"content": format!("answer {seed}")}}]});
        Ok(HttpReply { status: 200, body: reply.to_string() })
    }
}

#[test]
fn in_flight_requests_never_exceed_the_limit() {
    let probe = Probe::new(false, false);
    let cfg = BackendConfig { max_in_flight: 3, ..BackendConfig::http("http://probe") };
    let gw = Gateway::with_transport(&cfg, "k", probe.clone()).unwrap();
    let set = gw.sample_answers(&request(1.0, 0), 16).unwrap();
    assert_eq!(set.completions.len(), 16);
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| gw.complete(&request(0.0, 1)).unwrap());
        }
    });
    let peak = probe.peak.load(Ordering::SeqCst);
    assert!(peak <= 3, "peak {peak}");
    assert!(peak >= 2, "requests never overlapped");
}

#[test]
fn unreachable_backend_retries_with_doubling_backoff() {
    let probe = Probe::new(true, false);
    let cfg = BackendConfig { max_retries: 3, ..BackendConfig::http("http://probe") };
    let gw = Gateway::with_transport(&cfg, "k", probe.clone()).unwrap().with_backoff_base(Duration::from_millis(10));
    match gw.complete(&request(0.0, 0)) {
        Err(GatewayError::Unreachable { attempts: 4, last_error }) => assert!(last_error.contains("refused")),
        other => panic!("{other:?}"),
    }
    let times = probe.times.lock().unwrap();
    let gaps: Vec<Duration> = times.windows(2).map(|w| w[1] - w[0]).collect();
    for (k, gap) in gaps.iter().enumerate() {
        assert!(*gap >= Duration::from_millis(10 << k), "gap {k} was {gap:?}");
    }
}

#[test]
fn sample_failures_are_collected_until_all_fail() {
    let gw = Gateway::with_transport(&BackendConfig::http("http://probe"), "k", Probe::new(false, true)).unwrap();
    let set = gw.sample_answers(&request(1.0, 0), 4).unwrap();
    assert_eq!(set.completions.len(), 2);
    assert_eq!(set.failures.iter().map(|f| f.0).collect::<Vec<_>>(), [1, 3]);
    assert!(matches!(gw.sample_answers(&request(0.0, 1), 3), Err(GatewayError::AllSamplesFailed { n: 3, .. })));
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let env = |k: &str| (k == "MODEL_BACKEND").then(|| "http".to_string());
    let cfg = BackendConfig { endpoint_url: Some("http://127.0.0.1:9".into()), ..Default::default() };
    assert!(matches!(Gateway::from_config_with_env(&cfg, &env), Err(GatewayError::Config(_))));
    let no_endpoint = |k: &str| match k {
        "MODEL_BACKEND" => Some("http".to_string()),
        "MODEL_API_KEY" => Some("k".to_string()),
        _ => None,
    };
    assert!(matches!(
        Gateway::from_config_with_env(&BackendConfig::default(), &no_endpoint),
        Err(GatewayError::Config(_))
    ));
}

/// Paraphrasing backend: two wordings of one answer, and embeddings that
/// place both wordings close together.
struct Paraphraser;

const FLU_ANSWERS: [&str; 2] = ["Fever, cough, fatigue", "Symptoms include sore throat and body aches"];

impl Transport for Paraphraser {
    fn post_json(&self, url: &str, _token: &str, body: &Json, _timeout: Duration) -> Result<HttpReply, TransportError> {
        let reply = if url.ends_with("/embeddings") {
            let text = body["input"].as_str().unwrap_or("");
            let v = if FLU_ANSWERS.contains(&text) { [1.0, 0.1 * text.len() as f64 / 40.0] } else { [0.0, 1.0] };
            json!({"data": [{"embedding": v}]})
        } else {
            let seed = body["seed"].as_u64().unwrap_or(0) as usize;
            json!({"choices": [{"message": {"content": FLU_ANSWERS[seed % 2]}}]})
        };
        Ok(HttpReply { status: 200, body: reply.to_string() })
    }
}

#[test]
fn paraphrased_answers_share_a_cluster_under_embeddings() {
    use hetquery::entropy::{uncertainty_report, EquivalenceOracle, ReviewFlag};
    let gw = Gateway::with_transport(&BackendConfig::http("http://paraphraser"), "k", Arc::new(Paraphraser)).unwrap();
    let q = "What are common influenza symptoms?";
    let req = PromptRequest::new(
        TemplateId::Answer,
        [("context", ""), ("question", q)],
        SamplingParams { temperature: 1.0, max_output_chars: 200, seed: 0 },
    )
    .unwrap();
    let cosine = uncertainty_report(q, &req, 4, &EquivalenceOracle::embedding(0.8).unwrap(), &gw, 1.0).unwrap();
    assert_eq!(cosine.clusters.len(), 1);
    assert_eq!(cosine.entropy_bits, 0.0);
    assert_eq!(cosine.flag, ReviewFlag::Ok);
    let exact = uncertainty_report(q, &req, 4, &EquivalenceOracle::ExactNormalized, &gw, 1.0).unwrap();
    assert!((exact.entropy_bits - 1.0).abs() < 1e-12);
}
