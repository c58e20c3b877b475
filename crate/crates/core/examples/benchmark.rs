//! Trains on the phantom benchmark and prints mean per-step dice for each
//! interaction mode. An optional JSON argument overrides benchmark fields.

use std::time::Instant;

use iterseg::benchmark::Benchmark;
use iterseg::oracle::InteractionMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bench: Benchmark = match std::env::args().nth(1) {
        Some(arg) => serde_json::from_str(&arg)?,
        None => Benchmark::default(),
    };
    let t0 = Instant::now();
    let out = bench.fit(|e| {
        eprintln!(
            "{:4} {:?} reward={:.4} dice={:.3} t={:.0}s",
            e.epoch,
            e.phase,
            e.mean_reward,
            e.mean_dice,
            t0.elapsed().as_secs_f64()
        )
    })?;
    for mode in [InteractionMode::Good, InteractionMode::Without, InteractionMode::Bad] {
        let report = bench.evaluate(&out.net, mode)?;
        let dice: Vec<String> = report
            .mean
            .step_dice
            .iter()
            .map(|d| format!("{:.2}", 100.0 * d))
            .collect();
        println!("{mode:?}: {}", dice.join(" "));
    }
    Ok(())
}
