//! Times full-batch epochs on a damped-oscillator dataset.

use std::time::Instant;

use lmnet::dynamics::{generate_dataset, sample_box, DampedOscillator};
use lmnet::lmm::catalog;
use lmnet::model::Mlp;
use lmnet::train::{train, TrainConfig};

fn main() -> lmnet::Result<()> {
    let scheme = std::env::args().nth(1).unwrap_or_else(|| "AM1".into());
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let s = catalog(&scheme)?;
    let initials = sample_box(&[[-2.2, 2.2], [-2.2, 2.2]], 300, 0)?;
    let data = generate_dataset(&DampedOscillator, &initials, 10, s.steps(), 0.016, 100)?;
    let cfg = TrainConfig::new(s, epochs);
    let start = Instant::now();
    let (_, hist) = train(&cfg, Mlp::new(&[2, 64, 64, 2], 0)?, &data)?;
    let dt = start.elapsed().as_secs_f64();
    println!(
        "{scheme}: {} windows, {epochs} epochs in {dt:.2}s ({:.3} ms/epoch), final loss {:e}",
        data.len(),
        1e3 * dt / epochs as f64,
        hist.last().unwrap().loss
    );
    Ok(())
}
