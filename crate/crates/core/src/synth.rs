//! Deterministic synthetic sagittal "spine" images with exact disc labels.
//!
//! Discs are wide, flat Gaussian blobs along a gently curved column. A
//! parallel column of rounder, dimmer blobs (vertebral bodies) sits beside
//! it as a distractor, over a smooth textured background with pixel noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::targets::{normalize01, LabeledCase};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub num_discs: usize,
    pub spacing_mm: (f64, f64),
    /// Row of the first (most superior) disc is drawn from this range.
    pub first_row: (f64, f64),
    pub spacing_mean_px: f64,
    /// Uniform jitter added to every inter-disc spacing, in pixels.
    pub spacing_jitter_px: f64,
    /// Uniform jitter of the column's horizontal position around the centre.
    pub column_jitter_px: f64,
    /// Amplitude of the sinusoidal bend of the column, in pixels.
    pub curvature_px: f64,
    /// Disc blob standard deviations (rows, cols).
    pub disc_sigma: (f64, f64),
    pub disc_intensity: f64,
    /// Horizontal offset of the distractor column; 0 disables it.
    pub distractor_offset_px: f64,
    pub distractor_sigma: (f64, f64),
    pub distractor_intensity: f64,
    pub texture_amplitude: f64,
    pub noise_std: f64,
    pub missing_prob: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            num_discs: 5,
            spacing_mm: (1.0, 1.0),
            first_row: (10.0, 16.0),
            spacing_mean_px: 9.0,
            spacing_jitter_px: 0.8,
            column_jitter_px: 5.0,
            curvature_px: 3.0,
            disc_sigma: (1.2, 3.2),
            disc_intensity: 1.0,
            distractor_offset_px: 9.0,
            distractor_sigma: (2.2, 2.2),
            distractor_intensity: 0.6,
            texture_amplitude: 0.12,
            noise_std: 0.04,
            missing_prob: 0.0,
            seed: 0,
            n_train: 70,
            n_val: 10,
            n_test: 20,
        }
    }
}

/// Dataset split a generated case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SynthConfig {
    pub fn total_cases(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Checks that the worst-case geometry keeps every disc inside the image.
    pub fn validate(&self) -> Result<()> {
        if self.rows < 4 || self.cols < 4 || self.num_discs == 0 {
            return Err(Error::Config("image must be at least 4x4 with one disc".into()));
        }
        if !(0.0..=1.0).contains(&self.missing_prob) {
            return Err(Error::Config("missing_prob must lie in [0, 1]".into()));
        }
        if self.first_row.0 > self.first_row.1 || self.spacing_mean_px <= self.spacing_jitter_px {
            return Err(Error::Config("invalid first_row range or spacing jitter".into()));
        }
        if self.noise_std < 0.0 || self.spacing_jitter_px < 0.0 || self.column_jitter_px < 0.0 {
            return Err(Error::Config("noise and jitter must be non-negative".into()));
        }
        let last = self.first_row.1
            + (self.num_discs - 1) as f64 * (self.spacing_mean_px + self.spacing_jitter_px);
        if self.first_row.0 < 0.0 || last > (self.rows - 1) as f64 {
            return Err(Error::Config(format!(
                "discs may reach row {last:.1}, outside a {}-row image",
                self.rows
            )));
        }
        let reach = self.column_jitter_px + self.curvature_px.abs();
        let half = (self.cols - 1) as f64 / 2.0;
        if reach > half {
            return Err(Error::Config(format!(
                "column may wander {reach:.1} px from the centre of a {}-col image",
                self.cols
            )));
        }
        Ok(())
    }
}

fn gaussian_blob(img: &mut [f64], rows: usize, cols: usize, center: (f64, f64), sigma: (f64, f64), amp: f64) {
    let (cr, cc) = center;
    let reach_r = (4.0 * sigma.0).ceil() as isize;
    let reach_c = (4.0 * sigma.1).ceil() as isize;
    let (r0, c0) = (cr.round() as isize, cc.round() as isize);
    for y in (r0 - reach_r).max(0)..=(r0 + reach_r).min(rows as isize - 1) {
        let dy = (y as f64 - cr) / sigma.0;
        for x in (c0 - reach_c).max(0)..=(c0 + reach_c).min(cols as isize - 1) {
            let dx = (x as f64 - cc) / sigma.1;
            img[y as usize * cols + x as usize] += amp * (-0.5 * (dy * dy + dx * dx)).exp();
        }
    }
}

/// Generates case `index`; identical `(cfg, index)` give identical cases.
pub fn generate_case(cfg: &SynthConfig, index: usize) -> Result<LabeledCase> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (rows, cols) = (cfg.rows, cfg.cols);
    let uniform = |rng: &mut ChaCha8Rng, half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };

    let first = if cfg.first_row.1 > cfg.first_row.0 {
        rng.random_range(cfg.first_row.0..=cfg.first_row.1)
    } else {
        cfg.first_row.0
    };
    let center_col = (cols - 1) as f64 / 2.0 + uniform(&mut rng, cfg.column_jitter_px);
    let phase = rng.random_range(0.0..2.0 * PI);
    let period = rows as f64 * 1.5;
    let column_at = |r: f64| center_col + cfg.curvature_px * (2.0 * PI * r / period + phase).sin();

    let mut disc_rows = Vec::with_capacity(cfg.num_discs);
    let mut r = first;
    for i in 0..cfg.num_discs {
        if i > 0 {
            r += cfg.spacing_mean_px + uniform(&mut rng, cfg.spacing_jitter_px);
        }
        disc_rows.push(r);
    }
    let discs: Vec<(f64, f64)> = disc_rows
        .iter()
        .map(|&r| (r.round(), column_at(r).round()))
        .collect();
    let missing: Vec<bool> = (0..cfg.num_discs)
        .map(|_| rng.random_bool(cfg.missing_prob))
        .collect();

    let mut img = vec![0.0f64; rows * cols];
    if cfg.texture_amplitude > 0.0 {
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.02..0.12),
                    rng.random_range(0.02..0.12),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        for y in 0..rows {
            for x in 0..cols {
                let t: f64 = waves
                    .iter()
                    .map(|&(fy, fx, ph, a)| a * (2.0 * PI * (fy * y as f64 + fx * x as f64) + ph).sin())
                    .sum();
                img[y * cols + x] += cfg.texture_amplitude * t / 4.0;
            }
        }
    }
    if cfg.distractor_offset_px != 0.0 {
        // vertebral bodies sit between consecutive discs, plus one on each end
        let mut body_rows = Vec::with_capacity(cfg.num_discs + 1);
        body_rows.push(disc_rows[0] - cfg.spacing_mean_px / 2.0);
        for w in disc_rows.windows(2) {
            body_rows.push((w[0] + w[1]) / 2.0);
        }
        body_rows.push(disc_rows[cfg.num_discs - 1] + cfg.spacing_mean_px / 2.0);
        for br in body_rows {
            let amp = cfg.distractor_intensity * rng.random_range(0.85..1.15);
            let center = (br, column_at(br) - cfg.distractor_offset_px);
            gaussian_blob(&mut img, rows, cols, center, cfg.distractor_sigma, amp);
        }
    }
    for (i, &(r, c)) in discs.iter().enumerate() {
        let amp = cfg.disc_intensity * rng.random_range(0.85..1.15);
        if !missing[i] {
            gaussian_blob(&mut img, rows, cols, (r, c), cfg.disc_sigma, amp);
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for v in img.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let image = Tensor::new(vec![rows, cols], img.into_iter().map(|v| v as f32).collect())?;
    let case = LabeledCase {
        image: normalize01(&image),
        spacing_mm: cfg.spacing_mm,
        discs: discs
            .into_iter()
            .zip(&missing)
            .map(|(p, &m)| (!m).then_some(p))
            .collect(),
    };
    case.validate()?;
    Ok(case)
}

/// Generates every case of the configured splits, in index order.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<(Split, LabeledCase)>> {
    cfg.validate()?;
    par::map_range(cfg.total_cases(), |i| generate_case(cfg, i).map(|c| (cfg.split_of(i), c)))
        .into_iter()
        .collect()
}
