//! Regenerates the bundled yearlong profiles in `data/`.
//!
//! ```text
//! cargo run -p dsse-core --example synth_profiles
//! ```
//!
//! The load multiplier has daily morning/evening peaks, weekday/weekend
//! structure and a summer-dominant seasonal swing, scaled to a peak of 1.0.
//! The PV series is simulated at 5-minute resolution for a 4.2 MW plant at
//! latitude 44.3 N (clear-sky geometry times a stochastic cloud factor) and
//! averaged to hourly values in kW.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use dsse_core::bundled;
use dsse_core::profiles::HOURS_PER_YEAR;

const DAYS: usize = 365;

fn bump(h: f64, center: f64, width: f64) -> f64 {
    let d = (h - center).abs().min(24.0 - (h - center).abs());
    (-0.5 * (d / width).powi(2)).exp()
}

fn load_multiplier(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut ar = 0.0;
    let mut out = Vec::with_capacity(HOURS_PER_YEAR);
    for day in 0..DAYS {
        let weekend = matches!(day % 7, 5 | 6);
        let season = 1.0 + 0.22 * (2.0 * PI * (day as f64 - 200.0) / 365.0).cos()
            + 0.08 * (4.0 * PI * (day as f64 - 20.0) / 365.0).cos();
        let day_level = 1.0 + noise.sample(rng) * 1.5;
        for hour in 0..24 {
            let h = hour as f64 + 0.5;
            let morning = if weekend { 0.15 * bump(h, 10.0, 2.5) } else { 0.22 * bump(h, 8.0, 1.8) };
            let midday = 0.18 * bump(h, 14.5, 3.5);
            let evening = 0.38 * bump(h, 19.0, 2.2);
            let shape = 0.42 + morning + midday + evening;
            ar = 0.8 * ar + noise.sample(rng);
            let w = if weekend { 0.93 } else { 1.0 };
            out.push((shape * season * w * day_level * (1.0 + ar)).max(0.05));
        }
    }
    let peak = out.iter().copied().fold(0.0, f64::max);
    out.iter().map(|v| v / peak).collect()
}

fn pv_kw(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let capacity_kw = 4200.0;
    let lat = 44.3f64.to_radians();
    let clearness = Beta::new(3.0, 1.4).unwrap();
    let flicker = Normal::new(0.0, 0.08).unwrap();
    let mut out = Vec::with_capacity(HOURS_PER_YEAR);
    for day in 0..DAYS {
        let decl = 23.45f64.to_radians() * (2.0 * PI * (284.0 + day as f64 + 1.0) / 365.0).sin();
        let kt = clearness.sample(rng);
        let mut cloud: f64 = kt;
        for hour in 0..24 {
            let mut acc = 0.0;
            for step in 0..12 {
                let t = hour as f64 + (step as f64 + 0.5) / 12.0;
                let omega = (15.0 * (t - 12.0)).to_radians();
                let sin_alt = lat.sin() * decl.sin() + lat.cos() * decl.cos() * omega.cos();
                if sin_alt <= 0.0 {
                    continue;
                }
                cloud = (0.9 * cloud + 0.1 * kt + flicker.sample(rng) * (1.0 - kt)).clamp(0.05, 1.0);
                acc += capacity_kw * sin_alt.powf(1.15) * cloud;
            }
            let v = acc / 12.0;
            out.push(if v < 0.05 { 0.0 } else { (v * 100.0).round() / 100.0 });
        }
    }
    out
}

fn write(path: std::path::PathBuf, header: &[&str], values: &[f64], decimals: usize) {
    let mut s = String::new();
    for h in header {
        writeln!(s, "# {h}").unwrap();
    }
    for v in values {
        writeln!(s, "{v:.decimals$}").unwrap();
    }
    std::fs::write(&path, s).unwrap();
    println!("wrote {} ({} values)", path.display(), values.len());
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_180_601);
    let load = load_multiplier(&mut rng);
    let pv = pv_kw(&mut rng);
    write(
        bundled::data(bundled::LOAD_MULTIPLIER),
        &[
            "Synthetic hourly load multiplier, 8760 values starting Jan 1 00:00, peak 1.0.",
            "Generated by crates/core/examples/synth_profiles.rs (seed 20180601).",
        ],
        &load,
        4,
    );
    write(
        bundled::data(bundled::PV_PROFILE),
        &[
            "Synthetic hourly PV output in kW of a 4.2 MW plant at 44.3 N, 8760 values starting Jan 1 00:00.",
            "Hourly means of a 5-minute simulation; normalise before use.",
            "Generated by crates/core/examples/synth_profiles.rs (seed 20180601).",
        ],
        &pv,
        2,
    );
}
