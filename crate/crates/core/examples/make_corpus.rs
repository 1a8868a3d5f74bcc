//! Writes a seeded synthetic English-like corpus for trying the CLI.
//!
//! `cargo run --example make_corpus -- corpus.txt [bytes] [seed]`

use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: make_corpus <out> [bytes] [seed]");
        return ExitCode::from(2);
    };
    let bytes = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 20);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let text = msp::corpus::synthetic_corpus(seed, bytes);
    if let Err(e) = msp::io::write_atomic(path.as_ref(), &text) {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
