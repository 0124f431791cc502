//! Frame-level subgroup gains with a video-level permutation test.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed_n, rng};

/// Ground-truth speeds above this (10 m/s) are excluded from subgroups.
pub const SUBGROUP_SPEED_LIMIT_KMH: f64 = 36.0;

/// Per-video, per-group sums of `|e_A| - |e_B|` and frame counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoDiffs {
    pub sums: [f64; 2],
    pub counts: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub observed: f64,
    pub permutations: usize,
    pub p_value: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Gain on group 0 (pedestrian).
    Group0,
    /// Gain on group 1 (other).
    Group1,
    /// Group-0 gain minus group-1 gain.
    Difference,
}

fn gains(videos: &[VideoDiffs], flips: impl Fn(usize) -> bool) -> [f64; 2] {
    let mut s = [0.0; 2];
    let mut n = [0usize; 2];
    for (v, d) in videos.iter().enumerate() {
        let sign = if flips(v) { -1.0 } else { 1.0 };
        for g in 0..2 {
            s[g] += sign * d.sums[g];
            n[g] += d.counts[g];
        }
    }
    [s[0] / n[0].max(1) as f64, s[1] / n[1].max(1) as f64]
}

fn statistic(g: [f64; 2], which: Statistic) -> f64 {
    match which {
        Statistic::Group0 => g[0],
        Statistic::Group1 => g[1],
        Statistic::Difference => g[0] - g[1],
    }
}

/// Observed group gains (mean over frames of `|e_A| - |e_B|`).
pub fn observed_gains(videos: &[VideoDiffs]) -> [f64; 2] {
    gains(videos, |_| false)
}

/// Two-sided test that permutes model labels per video: each video's
/// difference vector is negated with probability one half.
pub fn permutation_test(videos: &[VideoDiffs], which: Statistic, permutations: usize, seed: u64) -> PermutationTestResult {
    let observed = statistic(observed_gains(videos), which);
    let mut r = rng(derive_seed_n(seed, "permutation", which as u64));
    let mut extreme = 0usize;
    let mut flips = vec![false; videos.len()];
    for _ in 0..permutations {
        for f in flips.iter_mut() {
            *f = r.gen::<bool>();
        }
        let s = statistic(gains(videos, |v| flips[v]), which);
        if s.abs() >= observed.abs() - 1e-12 {
            extreme += 1;
        }
    }
    PermutationTestResult {
        observed,
        permutations,
        p_value: (1 + extreme) as f64 / (1 + permutations) as f64,
        seed,
    }
}

/// Kolmogorov–Smirnov statistic of samples against Uniform(0, 1) and its
/// asymptotic p-value.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - v).max(v - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_q(lambda))
}

/// `Q(λ) = 2 Σ (-1)^(k-1) exp(-2 k² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Outcome of running the permutation test on simulated null data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub p_values: Vec<f64>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// Repeats the gain-difference test on data where both models' errors are
/// exchangeable within every video (shared per-video difficulty, i.i.d.
/// frame noise), so p-values should be uniform.
pub fn null_calibration(repetitions: usize, videos: usize, frames: usize, permutations: usize, seed: u64) -> NullCalibration {
    let mut p_values = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut r = rng(derive_seed_n(seed, "null-data", rep as u64));
        let data: Vec<VideoDiffs> = (0..videos)
            .map(|_| {
                let difficulty: f64 = r.gen_range(1.0..6.0);
                let ped_share: f64 = r.gen_range(0.1..0.6);
                let mut d = VideoDiffs::default();
                for _ in 0..frames {
                    let g = usize::from(r.gen::<f64>() >= ped_share);
                    let a: f64 = difficulty * r.gen::<f64>() * 2.0;
                    let b: f64 = difficulty * r.gen::<f64>() * 2.0;
                    d.sums[g] += a - b;
                    d.counts[g] += 1;
                }
                d
            })
            .collect();
        let seed_rep = derive_seed_n(seed, "null-test", rep as u64);
        p_values.push(permutation_test(&data, Statistic::Difference, permutations, seed_rep).p_value);
    }
    let (ks_statistic, ks_p_value) = ks_uniform(&p_values);
    NullCalibration {
        p_values,
        ks_statistic,
        ks_p_value,
    }
}
