use std::time::{Duration, Instant};

use screen_schema::frameio::Frame;
use screen_schema::ocr::{crop_pgm, ExternalProcessOcr, OcrBackend};
use screen_schema::regions::Rect;
use screen_schema::Error;

fn frame() -> Frame {
    let luma = (0..200 * 120).map(|i| (i % 251) as u8).collect();
    Frame::new(200, 120, luma, 0, 0).unwrap()
}

fn region() -> Rect {
    Rect::new(100, 50, 40, 30)
}

fn backend_error(cmd: &str) -> Error {
    ExternalProcessOcr::new(cmd).recognize(&frame(), region()).unwrap_err()
}

#[test]
fn silent_child_yields_nothing() {
    let ocr = ExternalProcessOcr::new("cat > /dev/null");
    assert!(ocr.recognize(&frame(), region()).unwrap().is_empty());
}

#[test]
fn crop_coordinates_are_translated() {
    let ocr = ExternalProcessOcr::new(
        r#"cat > /dev/null; echo '{"text":"File","x":1,"y":2,"w":20,"h":10,"conf":0.97}'"#,
    );
    let results = ocr.recognize(&frame(), region()).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].text, "File");
    assert_eq!(results[0].bbox, Rect::new(101, 52, 20, 10));
    assert_eq!(results[0].confidence, 0.97);
}

#[test]
fn child_receives_the_pgm_crop() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("crop.pgm");
    let ocr = ExternalProcessOcr::new(format!("cat > '{}'", dump.display()));
    ocr.recognize(&frame(), region()).unwrap();
    assert_eq!(std::fs::read(&dump).unwrap(), crop_pgm(&frame(), region()).unwrap());
}

#[test]
fn nonzero_exit_carries_stderr() {
    match backend_error("cat > /dev/null; echo engine exploded >&2; exit 1") {
        Error::OcrBackend { stderr, .. } => assert_eq!(stderr, "engine exploded"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_lines_are_rejected() {
    for cmd in [
        "echo 'not json'",
        r#"echo '{"text":"A","x":0,"y":0,"w":50,"h":5,"conf":0.5}'"#,
        r#"echo '{"text":"","x":0,"y":0,"w":5,"h":5,"conf":0.5}'"#,
        r#"echo '{"text":"A","x":0,"y":0,"w":5,"h":5,"conf":1.5}'"#,
    ] {
        let err = backend_error(&format!("cat > /dev/null; {cmd}"));
        assert!(matches!(err, Error::OcrBackend { .. }), "{cmd}: {err:?}");
        assert!(err.is_external());
    }
}

#[test]
fn slow_child_times_out() {
    let ocr = ExternalProcessOcr::new("sleep 5").with_timeout(Duration::from_millis(200));
    let start = Instant::now();
    let err = ocr.recognize(&frame(), region()).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(3));
    match err {
        Error::OcrBackend { message, .. } => assert!(message.contains("timed out")),
        other => panic!("unexpected {other:?}"),
    }
}
