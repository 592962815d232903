//! Runs both station engines at tag level over the in-process channel and
//! checks that they end with the same secret key.

use qkdlink::model::LinkScenario;
use qkdlink::pipeline::{run_link_loopback, StationConfig};

fn main() -> qkdlink::Result<()> {
    let mut sc = LinkScenario::default().with_channel_loss(25.0);
    sc.pair_rate_hz = 2e8;
    sc.detector.evaporation = false;
    let cfg = StationConfig { duration_s: 20.0, block_bits: 4096, ..Default::default() };
    let dir = std::env::temp_dir().join("qkdlink-single-link");
    std::fs::create_dir_all(&dir)?;
    let r = run_link_loopback(&sc, &cfg, Some(&dir))?;
    println!("blocks {} (discarded {})", r.bob.blocks, r.bob.blocks_discarded);
    println!("QBERz sample {}/{}, QBERx {}/{}", r.bob.sample_errors, r.bob.sample_bits, r.bob.x_errors, r.bob.x_events);
    println!("leaked {} parity bits, secret {} bits ({:.1} bps)", r.bob.leaked_bits, r.bob.secret_bits, r.bob.skr_bps(cfg.duration_s));
    println!("keys match: {}", r.keys_match());
    println!("key stores in {}", dir.display());
    Ok(())
}
