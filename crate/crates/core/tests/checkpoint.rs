use std::fs;

use txspot::checkpoint::{self, decode, encode, records_of};
use txspot::model::{Model, ModelConfig};
use txspot::rfe::{PoolMode, RfeConfig};
use txspot::{CheckpointError, Error};

#[test]
fn file_round_trip_preserves_config_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { rfe: RfeConfig { mode: PoolMode::Fixed { width: 20 }, ..ModelConfig::desk().rfe }, ..ModelConfig::desk() };
    let m = Model::new(cfg.clone(), 4).unwrap();
    let p = dir.path().join("m.ckpt");
    checkpoint::save(&m, &p).unwrap();
    let back = checkpoint::load(&p).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(encode(&records_of(&back)), fs::read(&p).unwrap());
}

#[test]
fn every_single_byte_flip_is_caught() {
    let m = Model::new(ModelConfig::desk(), 1).unwrap();
    let bytes = encode(&records_of(&m));
    for pos in (0..bytes.len()).step_by(bytes.len() / 97) {
        let mut b = bytes.clone();
        b[pos] ^= 0x01;
        assert!(decode(&b).is_err(), "flip at {pos} not detected");
    }
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.ckpt");
    let m = Model::new(ModelConfig::desk(), 1).unwrap();
    let bytes = encode(&records_of(&m));
    fs::write(&p, &bytes[..bytes.len() / 3]).unwrap();
    match checkpoint::load(&p) {
        Err(Error::Checkpoint { path, kind: CheckpointError::Truncated }) => assert_eq!(path, p),
        other => panic!("{:?}", other.err()),
    }
}
