//! Trains the reference model and writes `data/lenet5.arfw`.
//!
//! cargo run --release -p arfc-core --example train_lenet -- [mnist dir] [out]

use std::path::PathBuf;
use std::time::Instant;

use arfc_core::nn::{evaluate, load_mnist, train, write_weights, CalibrationStats, EvalNoise, Splits, TrainConfig};
use arfc_core::rng::SeedStream;

fn main() -> arfc_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data/lenet5.arfw".into()));
    let mnist = load_mnist(&dir)?;
    let seeds = SeedStream::new(20_240_501);
    let t = Instant::now();
    let model = train(&mnist.train, &TrainConfig::default(), &seeds)?;
    let splits = Splits::from_test(&mnist.test, 3000, 1000, &seeds)?;
    let stats = CalibrationStats { s_ref: vec![1.0; 5] };
    let r = evaluate(&model, &splits.eval, &EvalNoise::Clean, &stats, 1, &seeds)?;
    println!("trained in {:.1?}; clean accuracy on the evaluation split {:.4}", t.elapsed(), r.accuracy);
    write_weights(&model, std::io::BufWriter::new(std::fs::File::create(&out)?))?;
    Ok(())
}
