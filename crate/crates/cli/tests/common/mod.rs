#![allow(dead_code)]

use std::path::{Path, PathBuf};

use attrfield_cli::args::Cli;
use attrfield_cli::error::CliResult;
use clap::Parser;

/// Parse and run an invocation, returning its result and stdout.
pub fn run(args: &[&str]) -> (CliResult<()>, String) {
    let cli = Cli::try_parse_from(std::iter::once("attrfield").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    let r = attrfield_cli::run(&cli, &mut out);
    (r, String::from_utf8(out).unwrap())
}

pub fn run_ok(args: &[&str]) -> String {
    let (r, out) = run(args);
    if let Err(e) = r {
        panic!("{args:?} failed: {e}");
    }
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small oracle written to `dir/name.attrscn`.
pub fn oracle(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let path = dir.join(format!("{name}.attrscn"));
    let seed = seed.to_string();
    run_ok(&[
        "gen-oracle",
        "--out",
        s(&path),
        "--seed",
        &seed,
        "--res",
        "8",
        "--rank",
        "2",
        "--features",
        "16",
        "--attr-dim",
        "8",
        "--orth-steps",
        "50",
    ]);
    path
}

/// Decoded 8-bit RGB PNG: (width, height, pixels).
pub fn decode_png(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let dec = png::Decoder::new(bytes);
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width as usize, info.height as usize, buf)
}
