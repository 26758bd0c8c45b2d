#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use sceneaug_instruct::{
    run_pipeline, HttpClient, JobStatus, ParaphraseClient, ParaphraseJob, PipelineConfig,
    RetryPolicy, TransportError,
};

/// Serves `responses.len()` requests, one canned (status, body) each, and
/// returns the request bodies it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/paraphrase", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn posts_prompt_and_reads_text() {
    let (url, server) = serve(vec![(200, r#"{"text":"Place a chair near the window"}"#.into())]);
    let client = HttpClient::new(url, Duration::from_secs(5)).unwrap();
    let out = client.paraphrase("Find the chair near the window").unwrap();
    assert_eq!(out, "Place a chair near the window");
    let bodies = server.join().unwrap();
    let v: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(v, serde_json::json!({"prompt": "Find the chair near the window"}));
}

#[test]
fn non_200_and_malformed_are_transport_errors() {
    let (url, server) = serve(vec![
        (500, r#"{"error":"boom"}"#.into()),
        (200, r#"{"txt":"oops"}"#.into()),
    ]);
    let client = HttpClient::new(url, Duration::from_secs(5)).unwrap();
    assert_eq!(client.paraphrase("x"), Err(TransportError::Status(500)));
    assert!(matches!(client.paraphrase("x"), Err(TransportError::Malformed(_))));
    server.join().unwrap();
}

#[test]
fn pipeline_retries_over_http() {
    let (url, server) = serve(vec![
        (503, "{}".into()),
        (200, r#"{"text":"Add a lamp by the bed"}"#.into()),
    ]);
    let client = HttpClient::new(url, Duration::from_secs(5)).unwrap();
    let cfg = PipelineConfig {
        retry: RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        },
        max_in_flight: 1,
        ..Default::default()
    };
    let out = run_pipeline(
        vec![ParaphraseJob::pending("1", "Find the lamp by the bed")],
        &client,
        None,
        &cfg,
    )
    .unwrap();
    assert_eq!(out.jobs[0].status, JobStatus::Clean);
    assert_eq!(out.jobs[0].current_paraphrase.as_deref(), Some("Add a lamp by the bed"));
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 2);
    assert!(bodies[1].contains("Following sentences locate ONLY ONE object in a scene."));
}

#[test]
fn unreachable_endpoint_marks_job() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let client = HttpClient::new(url, Duration::from_millis(500)).unwrap();
    let cfg = PipelineConfig {
        retry: RetryPolicy {
            attempts: 2,
            base_delay: Duration::ZERO,
        },
        ..Default::default()
    };
    let out = run_pipeline(vec![ParaphraseJob::pending("1", "Find the lamp")], &client, None, &cfg)
        .unwrap();
    assert_eq!(out.jobs[0].status, JobStatus::TransportFailed);
}
