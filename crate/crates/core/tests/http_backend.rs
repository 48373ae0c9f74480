use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use screen_schema::mllm::{Backend, DecodeParams, GenRequest, HttpBackend};
use screen_schema::Error;

/// One-shot server: answers a single request with `status` and `body` after
/// `delay`, and hands the received JSON body back through the channel.
fn serve_once(status: u16, body: &'static str, delay: Duration) -> (String, mpsc::Receiver<serde_json::Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    length = value.trim().parse().unwrap();
                }
            }
        }
        let mut payload = vec![0; length];
        reader.read_exact(&mut payload).unwrap();
        let _ = tx.send(serde_json::from_slice(&payload).unwrap());
        thread::sleep(delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
    });
    (url, rx)
}

fn request() -> GenRequest {
    GenRequest {
        prompt: "describe".into(),
        schema_text: "schema".into(),
        decode: DecodeParams::default(),
        embedding: None,
    }
}

#[test]
fn returns_text_and_sends_decoding_parameters() {
    let (url, rx) = serve_once(200, r#"{"text":"hello"}"#, Duration::ZERO);
    let response = HttpBackend::new(url, "m1").generate(&request()).unwrap();
    assert_eq!(response.answer, "hello");
    assert!(response.embedding.is_none());
    let sent = rx.recv().unwrap();
    assert_eq!(sent["model"], "m1");
    assert_eq!(sent["prompt"], "describe");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["top_p"], 0.7);
    assert_eq!(sent["max_tokens"], 256);
}

#[test]
fn server_error_is_transport() {
    let (url, _rx) = serve_once(500, "{}", Duration::ZERO);
    let err = HttpBackend::new(url, "m").generate(&request()).unwrap_err();
    assert!(matches!(err, Error::Transport { status: 500 }), "{err:?}");
    assert!(err.is_external());
}

#[test]
fn missing_text_is_protocol() {
    for body in [r#"{"answer":"x"}"#, r#"{"text":3}"#, "not json"] {
        let (url, _rx) = serve_once(200, body, Duration::ZERO);
        let err = HttpBackend::new(url, "m").generate(&request()).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{body}: {err:?}");
    }
}

#[test]
fn slow_server_times_out() {
    let (url, _rx) = serve_once(200, r#"{"text":"late"}"#, Duration::from_secs(3));
    let err = HttpBackend::new(url, "m")
        .with_timeout(Duration::from_millis(300))
        .generate(&request())
        .unwrap_err();
    assert!(matches!(err, Error::Timeout(300)), "{err:?}");
}

#[test]
fn refused_connection_is_external() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpBackend::new(format!("http://127.0.0.1:{port}/"), "m")
        .generate(&request())
        .unwrap_err();
    assert!(matches!(err, Error::Connection(_)), "{err:?}");
    assert!(err.is_external());
}
