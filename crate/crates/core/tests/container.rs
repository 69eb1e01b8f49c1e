mod common;

use attrfield::config::SceneConfig;
use attrfield::container::{decode_scene, encode_scene, load_scene, save_scene, MAGIC};
use attrfield::oracle::{generate_oracle_scene, OracleOptions};
use attrfield::Error;
use common::*;

#[test]
fn round_trip_is_bit_exact() {
    let scene = busy_scene(small_dims(), 12);
    let bytes = encode_scene(&scene);
    assert_eq!(&bytes[..8], MAGIC);
    let back = decode_scene(&bytes).unwrap();
    assert_eq!(back, scene);
    assert_eq!(encode_scene(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.attrscn");
    save_scene(&scene, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_scene(&path).unwrap(), scene);
}

#[test]
fn oracle_scenes_round_trip_and_are_reproducible() {
    let cfg = SceneConfig::default();
    let opts = OracleOptions {
        orth_steps: 50,
        ..OracleOptions::default()
    };
    let (a, active) = generate_oracle_scene(4, &cfg, &opts).unwrap();
    let (b, _) = generate_oracle_scene(4, &cfg, &opts).unwrap();
    assert_eq!(encode_scene(&a), encode_scene(&b));
    assert_eq!(a.defaults.active, active);
    assert_eq!(decode_scene(&encode_scene(&a)).unwrap(), a);
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = encode_scene(&busy_scene(small_dims(), 1));
    let step = (bytes.len() / 200).max(1);
    for len in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        assert!(decode_scene(&bytes[..len]).is_err(), "prefix of {len} bytes decoded");
    }
}

#[test]
fn corruption_is_detected() {
    let bytes = encode_scene(&busy_scene(small_dims(), 2));
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode_scene(&flipped), Err(Error::Checksum { .. })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_scene(&magic), Err(Error::BadMagic)));

    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_scene(&version), Err(Error::BadVersion(99))));

    let mut longer = bytes;
    longer.push(0);
    assert!(decode_scene(&longer).is_err());
}
