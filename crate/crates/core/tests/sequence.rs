use std::fs;

use sentinel_core::imaging::{encode_pgm, open_sequence, Frame, ImagingError};

fn write_gray(dir: &std::path::Path, name: &str, value: f64) {
    fs::write(dir.join(name), encode_pgm(&Frame::filled(4, 3, 1, value))).unwrap();
}

#[test]
fn frames_come_back_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    write_gray(dir.path(), "b.pgm", 1.0);
    write_gray(dir.path(), "a.pgm", 0.0);
    write_gray(dir.path(), "c.pgm", 0.4);
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    fs::create_dir(dir.path().join("sub.pgm")).unwrap();

    let frames: Vec<Frame> = open_sequence(dir.path(), "*.pgm")
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    let labels: Vec<_> = frames.iter().map(|f| f.label.clone().unwrap()).collect();
    assert_eq!(labels, ["a.pgm", "b.pgm", "c.pgm"]);
    assert_eq!(frames.iter().map(|f| f.index).collect::<Vec<_>>(), [0, 1, 2]);
    assert_eq!(frames[0].pixels()[0], 0.0);
    assert_eq!(frames[1].pixels()[0], 1.0);

    // a second pass sees the same order
    let again: Vec<_> = open_sequence(dir.path(), "*.pgm")
        .unwrap()
        .map(|f| f.unwrap())
        .collect();
    assert_eq!(again, frames);
}

#[test]
fn empty_directory_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = open_sequence(dir.path(), "*").unwrap();
    assert!(src.is_empty());
    assert!(src.next().is_none());
}

#[test]
fn bad_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_gray(dir.path(), "000.pgm", 0.5);
    fs::write(dir.path().join("001.pgm"), b"P4 1 1\n\x00").unwrap();
    let results: Vec<_> = open_sequence(dir.path(), "*.pgm").unwrap().collect();
    assert!(results[0].is_ok());
    let err = results[1].as_ref().unwrap_err();
    assert!(matches!(err, ImagingError::File { name, .. } if name == "001.pgm"));
    assert!(err.to_string().contains("001.pgm"));
}

#[test]
fn missing_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        open_sequence(&dir.path().join("nope"), "*"),
        Err(ImagingError::Io { .. })
    ));
}
