//! Convolutional audio encoder with local/global feature concatenation and
//! temporal mean+max pooling, plus its global-pooling ablations.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::{BatchNorm, Conv2d, Dropout, ForwardCtx, Linear, Module, Real, Tape, Tensor, Var};

/// How conv features `[B, C, F, T]` become per-frame vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReshapingMode {
    /// Flatten channels and frequency: `D = C * F`.
    Full,
    /// Average over frequency: `D = C`.
    FreqMean,
    /// Average over channels: `D = F`.
    ChannelMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalPooling {
    MeanMax,
    Mean,
    Max,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($variant => $name,)+
                })
            }
        }
    };
}

str_enum!(ReshapingMode, "reshaping mode",
    ReshapingMode::Full => "full",
    ReshapingMode::FreqMean => "freq_mean",
    ReshapingMode::ChannelMean => "channel_mean");
str_enum!(TemporalPooling, "temporal pooling",
    TemporalPooling::MeanMax => "mean_max",
    TemporalPooling::Mean => "mean",
    TemporalPooling::Max => "max");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Mel bins of the input.
    pub n_mels: usize,
    pub reshaping_mode: ReshapingMode,
    pub use_mlp: bool,
    /// Concatenate local (reshaped) and global (MLP) features before pooling.
    /// Without it the MLP output alone is pooled.
    pub use_concat: bool,
    pub temporal_pooling: TemporalPooling,
    pub conv_blocks: usize,
    pub channels: usize,
    pub mlp_hidden: usize,
    pub dropout_p: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            reshaping_mode: ReshapingMode::Full,
            use_mlp: true,
            use_concat: true,
            temporal_pooling: TemporalPooling::MeanMax,
            conv_blocks: 2,
            channels: 64,
            mlp_hidden: 2048,
            dropout_p: 0.3,
        }
    }
}

/// Names of the seven global-pooling configurations, indexed from 1.
pub const ABLATION_ROWS: [&str; 7] = [
    "base",
    "frequency mean pooling",
    "channel mean pooling",
    "global feature only",
    "local feature only",
    "temporal mean pooling",
    "temporal max pooling",
];

impl EncoderConfig {
    /// Configuration for ablation row `row` (1 to 7) on top of `self`.
    pub fn ablation(&self, row: usize) -> Result<Self> {
        let mut c = self.clone();
        match row {
            1 => {}
            2 => c.reshaping_mode = ReshapingMode::FreqMean,
            3 => c.reshaping_mode = ReshapingMode::ChannelMean,
            4 => c.use_concat = false,
            5 => c.use_mlp = false,
            6 => c.temporal_pooling = TemporalPooling::Mean,
            7 => c.temporal_pooling = TemporalPooling::Max,
            _ => return Err(Error::Config(format!("ablation row {row} not in 1..=7"))),
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks == 0 || self.channels == 0 || self.n_mels >> self.conv_blocks == 0 {
            return Err(Error::Config(format!(
                "{} conv blocks leave no frequency bins of {}",
                self.conv_blocks, self.n_mels
            )));
        }
        if self.use_mlp && self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Frequency bins after the conv blocks.
    pub fn pooled_freq(&self) -> usize {
        self.n_mels >> self.conv_blocks
    }

    /// Minimum number of input frames.
    pub fn min_frames(&self) -> usize {
        1 << self.conv_blocks
    }

    /// Per-frame dimension after reshaping.
    pub fn local_dim(&self) -> usize {
        match self.reshaping_mode {
            ReshapingMode::Full => self.channels * self.pooled_freq(),
            ReshapingMode::FreqMean => self.channels,
            ReshapingMode::ChannelMean => self.pooled_freq(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match (self.use_mlp, self.use_concat) {
            (false, _) => self.local_dim(),
            (true, false) => self.mlp_hidden,
            (true, true) => self.local_dim() + self.mlp_hidden,
        }
    }

    /// Shape after every stage for a `[batch, 1, n_mels, frames]` input.
    pub fn stage_shapes(&self, batch: usize, frames: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let (mut f, mut t) = (self.n_mels, frames);
        for i in 1..=self.conv_blocks {
            f /= 2;
            t /= 2;
            out.push((format!("conv{i}"), vec![batch, self.channels, f, t]));
        }
        out.push(("reshaping".into(), vec![batch, t, self.local_dim()]));
        if self.use_mlp {
            out.push(("mlp".into(), vec![batch, t, self.mlp_hidden]));
            if self.use_concat {
                out.push(("concat".into(), vec![batch, t, self.embedding_dim()]));
            }
        }
        out.push(("pooling".into(), vec![batch, self.embedding_dim()]));
        out
    }
}

/// Trainable parameter count implied by `cfg` (batch-norm running statistics
/// excluded).
pub fn parameter_count(cfg: &EncoderConfig) -> usize {
    let mut n = 0;
    let mut cin = 1;
    for _ in 0..cfg.conv_blocks {
        n += cfg.channels * cin * 9 + cfg.channels; // conv
        n += 2 * cfg.channels; // bn
        cin = cfg.channels;
    }
    if cfg.use_mlp {
        n += cfg.local_dim() * cfg.mlp_hidden + cfg.mlp_hidden;
        n += cfg.mlp_hidden * cfg.mlp_hidden + cfg.mlp_hidden;
    }
    n
}

/// Temporal pooling of `[B, T, D]` features recorded on a tape.
pub fn pool_temporal_var<T: Real>(tape: &mut Tape<T>, h: Var, mode: TemporalPooling) -> Result<Var> {
    match mode {
        TemporalPooling::Mean => tape.mean_axis(h, 1),
        TemporalPooling::Max => tape.max_axis(h, 1),
        TemporalPooling::MeanMax => {
            let mean = tape.mean_axis(h, 1)?;
            let max = tape.max_axis(h, 1)?;
            tape.add(mean, max)
        }
    }
}

/// Temporal pooling of a `[B, T, D]` tensor into `[B, D]`.
pub fn pool_temporal<T: Real>(h: &Tensor<T>, mode: TemporalPooling) -> Result<Tensor<T>> {
    if h.rank() != 3 {
        return Err(Error::contract(format!("pooling expects [B, T, D], got {:?}", h.shape())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(h.shape().to_vec(), h.data().to_vec())?;
    let y = pool_temporal_var(&mut tape, x, mode)?;
    Ok(tape.to_tensor(y))
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Real> {
    pub config: EncoderConfig,
    pub convs: Vec<(Conv2d<T>, BatchNorm<T>)>,
    pub fc1: Option<Linear<T>>,
    pub fc2: Option<Linear<T>>,
    pub dropout: Dropout,
}

impl<T: Real> Encoder<T> {
    pub fn new(config: EncoderConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.conv_blocks);
        let mut cin = 1;
        for i in 1..=config.conv_blocks {
            convs.push((
                Conv2d::new(&format!("encoder.conv{i}"), cin, config.channels, 3, rng),
                BatchNorm::new(&format!("encoder.bn{i}"), config.channels),
            ));
            cin = config.channels;
        }
        let (fc1, fc2) = if config.use_mlp {
            (
                Some(Linear::new("encoder.fc1", config.local_dim(), config.mlp_hidden, rng)),
                Some(Linear::new("encoder.fc2", config.mlp_hidden, config.mlp_hidden, rng)),
            )
        } else {
            (None, None)
        };
        let dropout = Dropout { p: config.dropout_p };
        Ok(Self {
            config,
            convs,
            fc1,
            fc2,
            dropout,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != c.n_mels {
            return Err(Error::contract(format!(
                "encoder expects [B, 1, {}, T], got {shape:?}",
                c.n_mels
            )));
        }
        if shape[3] < c.min_frames() {
            return Err(Error::contract(format!(
                "{} frames is too short for {} conv blocks (need {})",
                shape[3],
                c.conv_blocks,
                c.min_frames()
            )));
        }
        Ok(())
    }

    /// Forward pass returning every named stage output, ending with the
    /// pooled `[B, D]` embedding.
    pub fn forward_stages(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Vec<(String, Var)>> {
        self.check_input(tape.shape(x))?;
        let mut stages = Vec::new();
        let mut h = x;
        for (i, (conv, bn)) in self.convs.iter_mut().enumerate() {
            h = conv.forward(tape, h)?;
            h = bn.forward(tape, h, ctx)?;
            h = tape.relu(h);
            h = tape.max_pool2d(h)?;
            stages.push((format!("conv{}", i + 1), h));
        }
        let local = match self.config.reshaping_mode {
            ReshapingMode::Full => {
                let p = tape.permute(h, &[0, 3, 1, 2])?;
                let s = tape.shape(p).to_vec();
                tape.reshape(p, vec![s[0], s[1], s[2] * s[3]])?
            }
            ReshapingMode::FreqMean => {
                let m = tape.mean_axis(h, 2)?;
                tape.permute(m, &[0, 2, 1])?
            }
            ReshapingMode::ChannelMean => {
                let m = tape.mean_axis(h, 1)?;
                tape.permute(m, &[0, 2, 1])?
            }
        };
        stages.push(("reshaping".into(), local));
        let features = match (&self.fc1, &self.fc2) {
            (Some(fc1), Some(fc2)) => {
                let mut g = fc1.forward(tape, local)?;
                g = tape.relu(g);
                g = self.dropout.forward(tape, g, ctx)?;
                g = fc2.forward(tape, g)?;
                g = tape.relu(g);
                stages.push(("mlp".into(), g));
                if self.config.use_concat {
                    let c = tape.concat(&[local, g], 2)?;
                    stages.push(("concat".into(), c));
                    c
                } else {
                    g
                }
            }
            _ => local,
        };
        let pooled = pool_temporal_var(tape, features, self.config.temporal_pooling)?;
        stages.push(("pooling".into(), pooled));
        Ok(stages)
    }

    /// `[B, 1, F, T]` to `[B, D]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let stages = self.forward_stages(tape, x, ctx)?;
        Ok(stages.last().expect("pooling stage always present").1)
    }

    /// Embeds a batch of equally shaped spectrograms without recording
    /// gradients.
    pub fn encode(&mut self, batch: &[Spectrogram<T>], ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let x = batch_tensor(batch)?;
        let mut tape = Tape::new();
        tape.set_freeze_params(true);
        let xv = tape.leaf(&x);
        let y = self.forward(&mut tape, xv, ctx)?;
        tape.check_finite(y, "embedding")?;
        Ok(tape.to_tensor(y))
    }
}

/// Stacks spectrograms `[F, T]` into a `[B, 1, F, T]` tensor.
pub fn batch_tensor<T: Real>(batch: &[Spectrogram<T>]) -> Result<Tensor<T>> {
    let first = batch.first().ok_or_else(|| Error::contract("empty batch"))?;
    let [f, t] = first.shape();
    let mut data = Vec::with_capacity(batch.len() * f * t);
    for s in batch {
        if s.shape() != [f, t] {
            return Err(Error::contract(format!(
                "batch mixes shapes {:?} and {:?}",
                [f, t],
                s.shape()
            )));
        }
        data.extend_from_slice(s.values());
    }
    Tensor::new(vec![batch.len(), 1, f, t], data)
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (c, b) in &self.convs {
            c.visit_params(f);
            b.visit_params(f);
        }
        for l in [&self.fc1, &self.fc2].into_iter().flatten() {
            l.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (c, b) in &mut self.convs {
            c.visit_params_mut(f);
            b.visit_params_mut(f);
        }
        for l in [&mut self.fc1, &mut self.fc2].into_iter().flatten() {
            l.visit_params_mut(f);
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (_, b) in &self.convs {
            b.visit_buffers(f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (_, b) in &mut self.convs {
            b.visit_buffers_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            n_mels: 16,
            channels: 4,
            mlp_hidden: 8,
            ..Default::default()
        }
    }

    /// Independent per-layer tally from layer geometries.
    fn tally(cfg: &EncoderConfig) -> usize {
        let conv = |cin: usize, cout: usize| cout * cin * 3 * 3 + cout;
        let bn = |c: usize| 2 * c;
        let fc = |i: usize, o: usize| i * o + o;
        let mut total = conv(1, cfg.channels) + bn(cfg.channels);
        for _ in 1..cfg.conv_blocks {
            total += conv(cfg.channels, cfg.channels) + bn(cfg.channels);
        }
        if cfg.use_mlp {
            total += fc(cfg.local_dim(), cfg.mlp_hidden) + fc(cfg.mlp_hidden, cfg.mlp_hidden);
        }
        total
    }

    #[test]
    fn default_parameter_count() {
        let cfg = EncoderConfig::default();
        assert_eq!(parameter_count(&cfg), 6_333_376);
        let local = EncoderConfig { use_mlp: false, ..cfg.clone() };
        assert_eq!(parameter_count(&local), 640 + 128 + 36_928 + 128);
        let tiny = EncoderConfig { mlp_hidden: 1, ..cfg };
        assert_eq!(parameter_count(&tiny), tally(&tiny));
    }

    #[test]
    fn module_count_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for row in 1..=7 {
            let cfg = small().ablation(row).unwrap();
            let enc = Encoder::<f32>::new(cfg.clone(), &mut rng).unwrap();
            assert_eq!(enc.param_count(), parameter_count(&cfg));
            assert_eq!(enc.param_count(), tally(&cfg));
        }
    }

    #[test]
    fn stage_shapes_follow_table() {
        let shapes = EncoderConfig::default().stage_shapes(8, 96);
        let expect: Vec<(&str, Vec<usize>)> = vec![
            ("conv1", vec![8, 64, 32, 48]),
            ("conv2", vec![8, 64, 16, 24]),
            ("reshaping", vec![8, 24, 1024]),
            ("mlp", vec![8, 24, 2048]),
            ("concat", vec![8, 24, 3072]),
            ("pooling", vec![8, 3072]),
        ];
        for ((n, s), (en, es)) in shapes.iter().zip(&expect) {
            assert_eq!((n.as_str(), s), (*en, es));
        }
    }

    #[test]
    fn forward_matches_stage_shapes_for_every_ablation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = [16 + 8, 4 + 8, 4 + 8, 8, 16, 24, 24];
        for row in 1..=7 {
            let cfg = small().ablation(row).unwrap();
            assert_eq!(cfg.embedding_dim(), dims[row - 1], "row {row}");
            let mut enc = Encoder::<f32>::new(cfg.clone(), &mut rng).unwrap();
            let mut tape = Tape::new();
            let x = Tensor::new(vec![3, 1, 16, 12], (0..3 * 16 * 12).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
            let xv = tape.leaf(&x);
            let mut r2 = ChaCha8Rng::seed_from_u64(2);
            let mut ctx = ForwardCtx::train(&mut r2);
            let stages = enc.forward_stages(&mut tape, xv, &mut ctx).unwrap();
            let expect = cfg.stage_shapes(3, 12);
            assert_eq!(stages.len(), expect.len());
            for ((n, v), (en, es)) in stages.iter().zip(&expect) {
                assert_eq!(n, en);
                assert_eq!(tape.shape(*v), es.as_slice(), "row {row} stage {n}");
            }
        }
    }

    #[test]
    fn default_ablation_dimensions() {
        let base = EncoderConfig::default();
        let dims: Vec<usize> = (1..=7).map(|r| base.ablation(r).unwrap().embedding_dim()).collect();
        assert_eq!(dims, vec![3072, 2112, 2064, 2048, 1024, 3072, 3072]);
        assert!(base.ablation(8).is_err());
    }

    #[test]
    fn too_few_frames_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = Encoder::<f32>::new(small(), &mut rng).unwrap();
        let mut ctx = ForwardCtx::train(&mut rng);
        let short = vec![Spectrogram::<f32>::zeros(16, 3)];
        assert!(matches!(enc.encode(&short, &mut ctx), Err(Error::Contract(_))));
        let wrong = vec![Spectrogram::<f32>::zeros(15, 8)];
        assert!(matches!(enc.encode(&wrong, &mut ctx), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_examples() {
        let h = Tensor::new(vec![1, 2, 1], vec![1.0f64, 3.0]).unwrap();
        assert_eq!(pool_temporal(&h, TemporalPooling::Mean).unwrap().data(), &[2.0]);
        assert_eq!(pool_temporal(&h, TemporalPooling::Max).unwrap().data(), &[3.0]);
        assert_eq!(pool_temporal(&h, TemporalPooling::MeanMax).unwrap().data(), &[5.0]);
        let one = Tensor::new(vec![1, 1, 2], vec![1.5f64, -2.0]).unwrap();
        assert_eq!(pool_temporal(&one, TemporalPooling::MeanMax).unwrap().data(), &[3.0, -4.0]);
        let c = Tensor::full(vec![2, 5, 3], 0.7f64);
        assert!(pool_temporal(&c, TemporalPooling::MeanMax)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 1.4).abs() < 1e-15));
    }

    #[test]
    fn checkpoint_names_are_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::<f32>::new(small(), &mut rng).unwrap();
        let names: Vec<String> = enc.named_state().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "encoder.conv1.weight");
        assert_eq!(&names[..8], &[
            "encoder.conv1.weight",
            "encoder.conv1.bias",
            "encoder.bn1.gamma",
            "encoder.bn1.beta",
            "encoder.conv2.weight",
            "encoder.conv2.bias",
            "encoder.bn2.gamma",
            "encoder.bn2.beta",
        ]);
        assert!(names.contains(&"encoder.fc2.bias".to_string()));
        assert!(names.contains(&"encoder.bn2.running_var".to_string()));
    }

    #[test]
    fn config_strings_roundtrip() {
        for m in ["full", "freq_mean", "channel_mean"] {
            assert_eq!(m.parse::<ReshapingMode>().unwrap().to_string(), m);
        }
        for m in ["mean_max", "mean", "max"] {
            assert_eq!(m.parse::<TemporalPooling>().unwrap().to_string(), m);
        }
        assert!("avg".parse::<TemporalPooling>().is_err());
    }

    proptest! {
        #[test]
        fn mean_max_is_sum_and_time_order_free(seed in any::<u64>(), t in 1usize..8, d in 1usize..5) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..2 * t * d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h = Tensor::new(vec![2, t, d], vals.clone()).unwrap();
            let mm = pool_temporal(&h, TemporalPooling::MeanMax).unwrap();
            let mean = pool_temporal(&h, TemporalPooling::Mean).unwrap();
            let max = pool_temporal(&h, TemporalPooling::Max).unwrap();
            for i in 0..mm.numel() {
                prop_assert!((mm.data()[i] - (mean.data()[i] + max.data()[i])).abs() < 1e-12);
            }
            // cyclic rotation by one frame
            let mut rot = vec![0.0; vals.len()];
            for b in 0..2 {
                for k in 0..t {
                    for j in 0..d {
                        rot[(b * t + (k + 1) % t) * d + j] = vals[(b * t + k) * d + j];
                    }
                }
            }
            let rot = Tensor::new(vec![2, t, d], rot).unwrap();
            prop_assert_eq!(pool_temporal(&rot, TemporalPooling::Max).unwrap(), max);
            let rmean = pool_temporal(&rot, TemporalPooling::Mean).unwrap();
            for i in 0..rmean.numel() {
                prop_assert!((rmean.data()[i] - mean.data()[i]).abs() < 1e-12);
            }
        }
    }
}
