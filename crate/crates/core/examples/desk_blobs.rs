//! Runs the full pipeline on synthetic Gaussian blobs and prints the result
//! for each seed.
//!
//! cargo run --release -p cpac-core --example desk_blobs -- [seeds] [mode]

use std::time::Instant;

use cpac::admm::Mode;
use cpac::config::RunConfig;
use cpac::data::synth_blobs;
use cpac::pipeline::run_on_data;

fn main() -> cpac::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mode: Mode = args
        .get(2)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or_default();
    for seed in 0..seeds {
        let data = synth_blobs(400, 10, 4, 10.0, seed)?;
        let mut config = RunConfig::default();
        config.seed = seed;
        config.pretrain.hidden = vec![64, 64, 256, 10];
        config.pretrain.batch_size = 32;
        config.pretrain.learning_rate = 1e-3;
        config.cluster.mode = mode;
        let start = Instant::now();
        let out = run_on_data(&data, &config)?;
        let e = out.evaluation.expect("blobs carry labels");
        println!(
            "seed {seed}: {e}  tau {:.4}  edges {}  lambda {:.4}  mu2 {:.4}->{:.4}  ({:.1}s)",
            out.assignment.threshold,
            out.graph.edges().len(),
            out.stats.lambda,
            out.stats.mu2_initial,
            out.state.schedule.mu2,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
