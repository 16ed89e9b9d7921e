//! The HTTP client against an in-process server speaking the wire protocol.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use fecs_core::backend::wire;
use fecs_core::decoders::decode;
use fecs_core::{DecodeConfig, Error, LanguageModel, RemoteBackend, SegmentedSequence, SyntheticModelSpec};

type Hook = dyn Fn(&str, &str, &[u8]) -> Option<(u16, String)> + Send + Sync;

/// Serves `model` on an ephemeral port. `hook` may answer a request first.
fn serve(model: Arc<dyn LanguageModel>, hook: Arc<Hook>) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            let method = req.method().as_str().to_string();
            let path = req.url().to_string();
            let (status, text) =
                hook(&method, &path, &body).unwrap_or_else(|| wire::handle(model.as_ref(), &method, &path, &body));
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    addr
}

fn model(max_context: usize) -> Arc<dyn LanguageModel> {
    let params = fecs_core::backend::RandomSpecParams {
        vocab_size: 32,
        hidden_dim: 8,
        max_context,
        ..Default::default()
    };
    Arc::new(SyntheticModelSpec::random(&params, 4).unwrap().build().unwrap())
}

fn no_hook() -> Arc<Hook> {
    Arc::new(|_: &str, _: &str, _: &[u8]| None)
}

const TIMEOUT: Duration = Duration::from_secs(10);

#[test]
fn remote_matches_local() {
    let local = model(4096);
    let url = serve(local.clone(), no_hook());
    let remote = RemoteBackend::connect(&url, TIMEOUT).unwrap();
    assert_eq!(remote.info(), local.info());

    let text = "t1 t5 t9 t2 t7";
    let ids = remote.tokenize(text).unwrap();
    assert_eq!(ids, local.tokenize(text).unwrap());
    assert_eq!(remote.detokenize(&ids).unwrap(), local.detokenize(&ids).unwrap());

    let d_remote = remote.next_distribution(&ids, 32).unwrap();
    let d_local = local.next_distribution(&ids, 32).unwrap();
    assert_eq!(d_remote.entries(), d_local.entries());
    assert!((d_remote.truncation_mass() - 1.0).abs() < 1e-6);

    let hc = remote.candidate_hiddens(&ids, &[3, 4]).unwrap();
    assert_eq!(hc, local.candidate_hiddens(&ids, &[3, 4]).unwrap());

    // whole decodes agree
    let seq = SegmentedSequence::new(ids, 1, 3).unwrap();
    for cfg in [DecodeConfig::fecs(4, 0.3, 0.3), DecodeConfig::contrastive(4, 0.6), DecodeConfig::beam(3)] {
        let cfg = DecodeConfig {
            max_new_tokens: 12,
            ..cfg
        };
        let a = decode(&seq, &cfg, &remote).unwrap();
        let b = decode(&seq, &cfg, local.as_ref()).unwrap();
        assert_eq!(a.tokens, b.tokens, "{}", cfg.strategy);
    }
}

#[test]
fn overflow_surfaces_server_message() {
    let url = serve(model(8), no_hook());
    let remote = RemoteBackend::connect(&url, TIMEOUT).unwrap();
    let long: Vec<u32> = (0..20).map(|i| i % 30).collect();
    let err = remote.next_distribution(&long, 4).unwrap_err();
    match &err {
        Error::RemoteOverflow(msg) => assert!(msg.contains("max_context 8"), "{msg}"),
        other => panic!("expected overflow, got {other}"),
    }
    assert!(err.is_overflow());
    let err = remote.candidate_hiddens(&long[..8], &[1]).unwrap_err();
    assert!(err.is_overflow(), "{err}");
}

#[test]
fn decode_stops_cleanly_at_remote_overflow() {
    let url = serve(model(6), no_hook());
    let remote = RemoteBackend::connect(&url, TIMEOUT).unwrap();
    let seq = SegmentedSequence::new(vec![1, 2, 3], 0, 3).unwrap();
    let cfg = DecodeConfig {
        max_new_tokens: 10,
        stop_on_eos: false,
        ..DecodeConfig::fecs(4, 0.3, 0.3)
    };
    let out = decode(&seq, &cfg, &remote).unwrap();
    assert!(out.truncated());
    assert_eq!(out.tokens.len(), 3);
}

#[test]
fn unreachable_endpoint() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = RemoteBackend::connect(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, Error::Unreachable { .. }), "{err}");
    assert!(err.is_backend());
}

#[test]
fn rejects_non_http_endpoint() {
    assert!(RemoteBackend::connect("localhost:8000", TIMEOUT).is_err());
}

#[test]
fn protocol_version_mismatch() {
    let hook: Arc<Hook> = Arc::new(|_: &str, path: &str, _: &[u8]| {
        (path == "/info").then(|| {
            (
                200,
                r#"{"vocab_size":4,"hidden_dim":2,"eos_id":3,"max_context":8,"name":"x","protocol_version":2}"#.to_string(),
            )
        })
    });
    let url = serve(model(16), hook);
    match RemoteBackend::connect(&url, TIMEOUT).unwrap_err() {
        Error::ProtocolVersion { got, expected } => assert_eq!((got, expected), (2, 1)),
        other => panic!("{other}"),
    }
}

#[test]
fn malformed_and_failing_responses() {
    let hook: Arc<Hook> = Arc::new(|_: &str, path: &str, _: &[u8]| match path {
        "/tokenize" => Some((200, "not json".to_string())),
        "/detokenize" => Some((500, r#"{"error":"model crashed"}"#.to_string())),
        // probabilities out of order
        "/next" => Some((
            200,
            r#"{"top":[{"id":1,"prob":0.2},{"id":2,"prob":0.7}],"truncation_mass":0.9}"#.to_string(),
        )),
        _ => None,
    });
    let url = serve(model(64), hook);
    let remote = RemoteBackend::connect(&url, TIMEOUT).unwrap();
    assert!(matches!(remote.tokenize("a").unwrap_err(), Error::MalformedResponse { .. }));
    match remote.detokenize(&[1]).unwrap_err() {
        Error::Backend(msg) => assert!(msg.contains("model crashed")),
        other => panic!("{other}"),
    }
    assert!(matches!(
        remote.next_distribution(&[1], 2).unwrap_err(),
        Error::MalformedResponse { .. }
    ));
}

#[test]
fn bad_request_reported() {
    let url = serve(model(64), no_hook());
    let remote = RemoteBackend::connect(&url, TIMEOUT).unwrap();
    let err = remote.next_distribution(&[999], 2).unwrap_err();
    assert!(matches!(err, Error::Remote { status: 400, .. } | Error::UnknownToken { .. }), "{err}");
}

#[test]
fn concurrent_requests() {
    let local = model(4096);
    let url = serve(local.clone(), no_hook());
    let remote = Arc::new(RemoteBackend::connect(&url, TIMEOUT).unwrap());
    let handles: Vec<_> = (0..4u32)
        .map(|t| {
            let remote = remote.clone();
            thread::spawn(move || {
                (0..10u32)
                    .map(|i| remote.next_distribution(&[t, i % 32], 5).unwrap())
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    for (t, h) in handles.into_iter().enumerate() {
        for (i, d) in h.join().unwrap().into_iter().enumerate() {
            let want = local.next_distribution(&[t as u32, i as u32 % 32], 5).unwrap();
            assert_eq!(d.entries(), want.entries());
        }
    }
}
