use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_citypulse");

#[test]
fn invalid_configuration_exits_with_2() {
    let out = Command::new(BIN).args(["--decay", "1.0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("decay"));

    let out = Command::new(BIN).env("CITYPULSE_TICK_SECONDS", "soon").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tick-seconds"));

    let out = Command::new(BIN).args(["--set", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_environment_and_ports_can_be_ephemeral() {
    let mut child = Command::new(BIN)
        .args(["--http-port", "0", "--ingest-tcp-port", "0", "--tick-seconds", "2"])
        .env("CITYPULSE_TICK_SECONDS", "-5")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.starts_with("http on 127.0.0.1:"), "{line}");
    assert!(line.contains("ingest on 127.0.0.1:"), "{line}");
}
