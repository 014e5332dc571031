//! Synthetic multi-view data with a shared latent state and director-style
//! missingness, used as ground truth for imputation and pipeline tests.
//!
//! Each frame draws a latent vector `z`. Camera `k` renders
//! `W_k z + sigma * noise`, and the selected camera is the one with the
//! largest salience `bias_k + s_k . z`. Views the director did not select are
//! then hidden with probability `p_miss`; the selected view is never hidden.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraId, Dataset, DatasetConfig, FeatureBlock, MultiViewSample};
use crate::par::{self, Exec};
use crate::seed;

/// Missing fields take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "F")]
    pub f: usize,
    pub n_samples: usize,
    pub n_sequences: usize,
    pub latent_dim: usize,
    /// Standard deviation of per-scalar rendering noise.
    pub sigma: f64,
    pub p_miss: f64,
    pub seed: u64,
    /// AR(1) coefficient of the latent state along a sequence; 0 gives i.i.d. frames.
    #[serde(default)]
    pub temporal_corr: f64,
    /// Per-camera salience offsets; empty means all zero.
    #[serde(default)]
    pub salience_bias: Vec<f64>,
    /// Explicit `F x latent_dim` view maps, one per camera. Drawn at random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_maps: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default = "default_game")]
    pub game_id: String,
}

fn default_game() -> String {
    "synth".into()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 3,
            f: 8,
            n_samples: 2000,
            n_sequences: 6,
            latent_dim: 4,
            sigma: 0.05,
            p_miss: 0.5,
            seed: 7,
            temporal_corr: 0.0,
            salience_bias: Vec::new(),
            view_maps: None,
            game_id: default_game(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k < 2 || self.f == 0 {
            return bad(format!("need K >= 2 and F >= 1, got K={} F={}", self.k, self.f));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if !(self.sigma >= 0.0) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.p_miss) {
            return bad(format!("p_miss must lie in [0, 1], got {}", self.p_miss));
        }
        if !(-1.0 < self.temporal_corr && self.temporal_corr < 1.0) {
            return bad(format!("temporal_corr must lie in (-1, 1), got {}", self.temporal_corr));
        }
        if self.n_sequences == 0 || self.n_sequences > self.n_samples.max(1) {
            return bad(format!(
                "{} sequences for {} samples",
                self.n_sequences, self.n_samples
            ));
        }
        if !self.salience_bias.is_empty() && self.salience_bias.len() != self.k {
            return bad(format!("{} salience offsets for K={}", self.salience_bias.len(), self.k));
        }
        if let Some(maps) = &self.view_maps {
            let ok = maps.len() == self.k
                && maps
                    .iter()
                    .all(|m| m.len() == self.f && m.iter().all(|r| r.len() == self.latent_dim));
            if !ok {
                return bad("view_maps must be K matrices of F x latent_dim".into());
            }
        }
        Ok(())
    }
}

/// Fixed rendering and salience model shared by every draw from it, so that
/// separate "games" can come from the same stadium.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    k: usize,
    f: usize,
    latent_dim: usize,
    sigma: f64,
    temporal_corr: f64,
    maps: Vec<Vec<Vec<f64>>>,
    salience: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl SyntheticWorld {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(config.seed, "synth.world", 0);
        let l = config.latent_dim;
        let scale = 1.0 / (l as f64).sqrt();
        let maps = match &config.view_maps {
            Some(m) => m.clone(),
            None => (0..config.k)
                .map(|_| {
                    (0..config.f)
                        .map(|_| {
                            (0..l)
                                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        };
        let salience = (0..config.k)
            .map(|k| {
                if l >= config.k {
                    (0..l).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
                } else {
                    let v: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / norm).collect()
                }
            })
            .collect();
        let bias = if config.salience_bias.is_empty() {
            vec![0.0; config.k]
        } else {
            config.salience_bias.clone()
        };
        Ok(Self {
            k: config.k,
            f: config.f,
            latent_dim: l,
            sigma: config.sigma,
            temporal_corr: config.temporal_corr,
            maps,
            salience,
            bias,
        })
    }

    pub fn view_maps(&self) -> &[Vec<Vec<f64>>] {
        &self.maps
    }

    /// Camera the director picks for latent state `z`.
    pub fn label_of(&self, z: &[f64]) -> CameraId {
        let scores: Vec<f64> = self
            .salience
            .iter()
            .zip(&self.bias)
            .map(|(s, b)| b + s.iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        crate::forest::argmax(&scores)
    }

    /// Noise-free rendering of camera `k`.
    pub fn render(&self, k: usize, z: &[f64]) -> Vec<f64> {
        self.maps[k]
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// Draw `(visible, truth)` with `n` frames over `n_sequences` sequences.
    /// `stream` selects an independent sample stream under `seed`.
    pub fn sample(
        &self,
        n: usize,
        n_sequences: usize,
        p_miss: f64,
        seed: u64,
        game_id: &str,
    ) -> Result<(Dataset, Dataset)> {
        if n_sequences == 0 || n_sequences > n.max(1) {
            return Err(Error::InvalidInput(format!("{n_sequences} sequences for {n} samples")));
        }
        let per_seq: Vec<usize> = (0..n_sequences)
            .map(|j| n / n_sequences + usize::from(j < n % n_sequences))
            .collect();
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let chunks = par::map_indexed(Exec::default(), n_sequences, |j| {
            let mut rng = seed::stream(seed, &format!("synth.{game_id}.seq"), j as u64);
            let innovation = (1.0 - self.temporal_corr * self.temporal_corr).sqrt();
            let mut z: Vec<f64> = (0..self.latent_dim).map(|_| noise.sample(&mut rng)).collect();
            let mut out = Vec::with_capacity(per_seq[j]);
            for frame in 0..per_seq[j] {
                if frame > 0 {
                    for v in z.iter_mut() {
                        *v = self.temporal_corr * *v + innovation * noise.sample(&mut rng);
                    }
                }
                let label = self.label_of(&z);
                let blocks: Vec<Vec<f64>> = (0..self.k)
                    .map(|k| {
                        let mut b = self.render(k, &z);
                        if self.sigma > 0.0 {
                            for v in b.iter_mut() {
                                *v += self.sigma * noise.sample(&mut rng);
                            }
                        }
                        b
                    })
                    .collect();
                let hide = rng.random::<f64>() < p_miss;
                let truth = MultiViewSample {
                    game_id: game_id.to_string(),
                    sequence_id: format!("{game_id}-seq{j:03}"),
                    frame_index: frame as i64,
                    label,
                    blocks: blocks.into_iter().map(FeatureBlock::Present).collect(),
                };
                let mut visible = truth.clone();
                if hide {
                    for (k, b) in visible.blocks.iter_mut().enumerate() {
                        if k != label.index() {
                            *b = FeatureBlock::Missing;
                        }
                    }
                }
                out.push((visible, truth));
            }
            out
        });
        let (visible, truth): (Vec<_>, Vec<_>) = chunks.into_iter().flatten().unzip();
        let config = DatasetConfig::new(self.k, self.f);
        Ok((Dataset::new(config.clone(), visible)?, Dataset::new(config, truth)?))
    }
}

/// Draw a dataset from the world described by `config`.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, Dataset)> {
    SyntheticWorld::new(config)?.sample(
        config.n_samples,
        config.n_sequences,
        config.p_miss,
        config.seed,
        &config.game_id,
    )
}
