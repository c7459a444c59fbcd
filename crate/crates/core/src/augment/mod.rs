//! Spectrogram augmentations and the two-view pipeline.

mod fader;
mod mixup;
mod norm;
mod rrc;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fader::{linear_fader, random_linear_fader};
pub use mixup::{gaussian_noise_mix, log_mixup_exp, mixup, mixup_draw, MixupQueue, DEFAULT_QUEUE_CAPACITY};
pub use norm::{batch_moments, post_norm, pre_norm, NormStats, POST_NORM_EPS};
pub use rrc::{crop_size, cubic_kernel, random_resize_crop, resize_bicubic, resize_crop, RrcConfig};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::Real;

/// One stage of an augmentation branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Mixup,
    Gaussian,
    Rrc,
    Rlf,
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixup" => Ok(Block::Mixup),
            "gaussian" | "noise" => Ok(Block::Gaussian),
            "rrc" => Ok(Block::Rrc),
            "rlf" => Ok(Block::Rlf),
            other => Err(Error::Config(format!("unknown augmentation block `{other}`"))),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Mixup => "mixup",
            Block::Gaussian => "gaussian",
            Block::Rrc => "rrc",
            Block::Rlf => "rlf",
        })
    }
}

/// Parses a comma-separated chain such as `mixup,rrc,rlf`; `none` or an empty
/// string yields no blocks.
pub fn parse_chain(s: &str) -> Result<Vec<Block>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

pub fn format_chain(blocks: &[Block]) -> String {
    if blocks.is_empty() {
        "none".to_string()
    } else {
        blocks.iter().map(Block::to_string).collect::<Vec<_>>().join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub blocks: Vec<Block>,
    pub mixup_alpha: f64,
    pub queue_capacity: usize,
    pub rrc: RrcConfig,
    /// Standard deviation of the Gaussian noise spectrogram.
    pub noise_std: f64,
    pub noise_alpha: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blocks: vec![Block::Mixup, Block::Rrc, Block::Rlf],
            mixup_alpha: 0.2,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            rrc: RrcConfig::default(),
            noise_std: 0.4,
            noise_alpha: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn with_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.rrc.validate()?;
        if !(0.0..=1.0).contains(&self.mixup_alpha) || !(0.0..=1.0).contains(&self.noise_alpha) {
            return Err(Error::Config("mixing ratios must lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) || self.queue_capacity == 0 {
            return Err(Error::Config("noise std must be >= 0 and queue capacity > 0".into()));
        }
        Ok(())
    }

    pub fn new_queue<T: Real>(&self) -> MixupQueue<T> {
        MixupQueue::new(self.queue_capacity, self.mixup_alpha)
    }
}

/// Runs one augmentation branch over a pre-normalized spectrogram. Mixup reads
/// from the queue but does not push; see [`make_views_with`].
pub fn apply_chain<T: Real, R: Rng + ?Sized>(
    x: &Spectrogram<T>,
    cfg: &AugmentConfig,
    queue: &MixupQueue<T>,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let mut y = x.clone();
    for block in &cfg.blocks {
        y = match block {
            Block::Mixup => mixup_draw(&y, queue, rng)?,
            Block::Gaussian => gaussian_noise_mix(&y, cfg.noise_std, cfg.noise_alpha, rng)?,
            Block::Rrc => random_resize_crop(&y, &cfg.rrc, rng)?,
            Block::Rlf => random_linear_fader(&y, rng),
        };
    }
    Ok(y)
}

/// Two augmented views of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair<T = f32> {
    pub v1: Spectrogram<T>,
    pub v2: Spectrogram<T>,
}

/// Pre-norm, two independent branches, post-norm on each view. The
/// pre-normalized input is enqueued once, after both branches have drawn
/// from the queue.
pub fn make_views_with<T: Real, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    x: &Spectrogram<T>,
    stats: &NormStats,
    cfg: &AugmentConfig,
    queue: &mut MixupQueue<T>,
    rng1: &mut R1,
    rng2: &mut R2,
) -> Result<ViewPair<T>> {
    let (mut a, mut b, xn) = branches(x, stats, cfg, queue, rng1, rng2)?;
    post_norm(std::slice::from_mut(&mut a));
    post_norm(std::slice::from_mut(&mut b));
    queue.push(xn)?;
    Ok(ViewPair { v1: a, v2: b })
}

/// [`make_views_with`] seeding each branch from `rng`.
pub fn make_views<T: Real, R: RngCore + ?Sized>(
    x: &Spectrogram<T>,
    stats: &NormStats,
    cfg: &AugmentConfig,
    queue: &mut MixupQueue<T>,
    rng: &mut R,
) -> Result<ViewPair<T>> {
    let mut r1 = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut r2 = ChaCha8Rng::seed_from_u64(rng.next_u64());
    make_views_with(x, stats, cfg, queue, &mut r1, &mut r2)
}

fn branches<T: Real, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    x: &Spectrogram<T>,
    stats: &NormStats,
    cfg: &AugmentConfig,
    queue: &MixupQueue<T>,
    rng1: &mut R1,
    rng2: &mut R2,
) -> Result<(Spectrogram<T>, Spectrogram<T>, Spectrogram<T>)> {
    let xn = pre_norm(x, stats)?;
    let a = apply_chain(&xn, cfg, queue, rng1)?;
    let b = apply_chain(&xn, cfg, queue, rng2)?;
    Ok((a, b, xn))
}

/// Views for a whole batch; post-norm statistics are taken over each batch
/// of views (first views together, second views together).
pub fn make_view_batch<T: Real, R: RngCore + ?Sized>(
    xs: &[Spectrogram<T>],
    stats: &NormStats,
    cfg: &AugmentConfig,
    queue: &mut MixupQueue<T>,
    rng: &mut R,
) -> Result<(Vec<Spectrogram<T>>, Vec<Spectrogram<T>>)> {
    let mut v1 = Vec::with_capacity(xs.len());
    let mut v2 = Vec::with_capacity(xs.len());
    for x in xs {
        let mut r1 = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let mut r2 = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let (a, b, xn) = branches(x, stats, cfg, queue, &mut r1, &mut r2)?;
        queue.push(xn)?;
        v1.push(a);
        v2.push(b);
    }
    post_norm(&mut v1);
    post_norm(&mut v2);
    Ok((v1, v2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(seed: u64) -> Spectrogram<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram::new(16, 24, (0..16 * 24).map(|_| rng.random_range(-12.0..0.0)).collect()).unwrap()
    }

    #[test]
    fn chain_parsing() {
        assert_eq!(parse_chain("none").unwrap(), vec![]);
        assert_eq!(parse_chain("mixup,rrc,rlf").unwrap(), AugmentConfig::default().blocks);
        assert_eq!(format_chain(&parse_chain("rlf, gaussian").unwrap()), "rlf,gaussian");
        assert!(matches!(parse_chain("mixup,blur"), Err(Error::Config(_))));
    }

    #[test]
    fn identical_branch_seeds_give_identical_views() {
        let stats = NormStats::new(-6.0, 3.0).unwrap();
        let cfg = AugmentConfig::default();
        let mut q = cfg.new_queue();
        q.push(input(9)).unwrap();
        let x = input(1);
        let pair = make_views_with(
            &x,
            &stats,
            &cfg,
            &mut q,
            &mut ChaCha8Rng::seed_from_u64(3),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(pair.v1, pair.v2);
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn no_blocks_gives_standardized_input() {
        let stats = NormStats::new(-6.0, 3.0).unwrap();
        let cfg = AugmentConfig::with_blocks(vec![]);
        let mut q = cfg.new_queue();
        let x = input(2);
        let pair = make_views(&x, &stats, &cfg, &mut q, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut expect = vec![x.map(|v| (v + 6.0) / 3.0)];
        post_norm(&mut expect);
        for (a, b) in pair.v1.values().iter().zip(expect[0].values()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(pair.v1, pair.v2);
    }

    #[test]
    fn single_block_matches_direct_call() {
        let stats = NormStats::new(-5.0, 2.0).unwrap();
        let x = input(4);
        for block in [Block::Rrc, Block::Rlf, Block::Gaussian] {
            let cfg = AugmentConfig::with_blocks(vec![block]);
            let mut q = cfg.new_queue();
            let pair = make_views_with(
                &x,
                &stats,
                &cfg,
                &mut q,
                &mut ChaCha8Rng::seed_from_u64(11),
                &mut ChaCha8Rng::seed_from_u64(12),
            )
            .unwrap();
            let xn = pre_norm(&x, &stats).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let direct = match block {
                Block::Rrc => random_resize_crop(&xn, &cfg.rrc, &mut rng).unwrap(),
                Block::Rlf => random_linear_fader(&xn, &mut rng),
                Block::Gaussian => gaussian_noise_mix(&xn, 0.4, 0.2, &mut rng).unwrap(),
                Block::Mixup => unreachable!(),
            };
            let mut direct = vec![direct];
            post_norm(&mut direct);
            assert_eq!(pair.v1, direct[0], "{block}");
        }
    }

    #[test]
    fn batch_views_are_standardized() {
        let stats = NormStats::new(-6.0, 3.0).unwrap();
        let cfg = AugmentConfig::default();
        let mut q = cfg.new_queue();
        let xs: Vec<_> = (0..4).map(input).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (v1, v2) = make_view_batch(&xs, &stats, &cfg, &mut q, &mut rng).unwrap();
        for vs in [&v1, &v2] {
            let (m, s) = batch_moments(vs);
            assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-4);
            assert!(vs.iter().all(|v| v.shape() == [16, 24]));
        }
        assert_eq!(q.len(), 4);
        assert_ne!(v1, v2);
    }
}
