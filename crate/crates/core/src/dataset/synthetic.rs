//! Desk-scale synthetic stand-in corpus: class-separable sinusoid-plus-spike
//! signals with 12 phase-shifted channels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ClassLabel, Dataset, EcgRecord, NUM_CHANNELS};
use crate::engine::ops::derive_rng;
use crate::error::{Error, Result};

/// Per-sample noise level.
const NOISE_SIGMA: f64 = 0.05;
/// Per-record DC wander is centered here; signals are signed millivolts.
const BASELINE: f64 = 0.0;
/// Spike amplitude added on top of the sinusoid at each spike instant.
const SPIKE_AMP: f64 = 1.0;

/// Angular frequency of class `k`: fundamentals are geometrically spaced
/// (period 96 / 1.5^k samples) and kept low enough that the window-context
/// mean attenuates but never cancels them.
fn class_omega(k: usize) -> f64 {
    2.0 * std::f64::consts::PI * 1.5f64.powi(k as i32) / 96.0
}

/// Spike interval of class `k` in samples, also ratio-spaced.
fn class_spike_interval(k: usize) -> usize {
    [18, 24, 33, 45, 60][k]
}

/// Generate `n_per_class` records per class, each with `t` samples.
/// Classes differ in fundamental frequency and spike interval; records
/// within a class differ in phase, amplitude, and noise. Deterministic per
/// seed.
pub fn generate_synthetic(n_per_class: usize, t: usize, seed: u64) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::Config("n_per_class must be >= 1".into()));
    }
    if t < 16 {
        return Err(Error::Config(format!("record length {t} below minimum 16")));
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut records = Vec::with_capacity(n_per_class * ClassLabel::ALL.len());
    for label in ClassLabel::ALL {
        let k = label.index();
        let omega = class_omega(k);
        let spike_every = class_spike_interval(k);
        for i in 0..n_per_class {
            // stream tag 3 = synthesis, keyed by class and record index
            let mut rng = derive_rng(seed, &[3, k as u64, i as u64]);
            let phase = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let amplitude = 0.8 + 0.4 * rng.gen::<f64>();
            let baseline = BASELINE + 0.4 * (rng.gen::<f64>() - 0.5);
            let spike_offset = rng.gen_range(0..spike_every);
            let mut channels = Vec::with_capacity(NUM_CHANNELS);
            for c in 0..NUM_CHANNELS {
                let channel_phase = phase + c as f64 * std::f64::consts::PI / 6.0;
                let mut ch = Vec::with_capacity(t);
                for s in 0..t {
                    let arg = omega * s as f64 + channel_phase;
                    let mut v = baseline + amplitude * arg.sin();
                    if s % spike_every == spike_offset {
                        v += SPIKE_AMP;
                    }
                    v += noise.sample(&mut rng);
                    ch.push(v);
                }
                channels.push(ch);
            }
            let record_id = format!("syn-{}-{i:04}", label.name());
            records.push(EcgRecord::new(record_id, channels, label)?);
        }
    }
    Ok(Dataset::new(records))
}
