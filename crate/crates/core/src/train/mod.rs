//! Fusion layer, losses, optimizer and the alternating two-stream schedule.

mod fusion;
mod loss;
mod sgd;

use serde::{Deserialize, Serialize};

pub use fusion::{fuse, fuse_backward, fusion_layer, FusionLayer};
pub use loss::{balanced_cross_entropy, stream2_loss, LossReport, PROB_EPS};
pub use sgd::{sgd_step, SgdParams};

use crate::error::{Error, Result};
use crate::eval::max_f_measure;
use crate::maps::{BinaryMask, RgbImage, SaliencyMap};
use crate::network::Network;
use crate::segpool::{render_s2, segment_features, segment_labels, FeatureGeometry};
use crate::superpix::{multiscale, Segmentation, SlicParams};
use crate::tensor::LayerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Rate for layers with a single output channel.
    pub lr_new: f64,
    pub lr_base: f64,
    /// Rate for every segment-regressor layer.
    pub regressor_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_per_alternation: usize,
    pub alternations: usize,
    /// Segment-stream epochs run before the first alternation.
    pub pretrain_epochs: usize,
    /// Square side images are resized to before training; `None` keeps sizes.
    pub input_size: Option<usize>,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_new: 0.01,
            lr_base: 0.001,
            regressor_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs_per_alternation: 1,
            alternations: 8,
            pretrain_epochs: 2,
            input_size: Some(321),
            batch_size: 1,
        }
    }
}

impl TrainConfig {
    /// Settings for overfitting a handful of small synthetic images with a
    /// narrow, randomly initialised network: native resolution, longer
    /// phases and much smaller backbone rates.
    pub fn synthetic() -> Self {
        TrainConfig {
            lr_new: 3e-5,
            lr_base: 1e-7,
            epochs_per_alternation: 20,
            input_size: None,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_new, self.lr_base, self.regressor_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1) and weight decay non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs_per_alternation == 0 {
            return Err(Error::InvalidConfig("batch size and epochs per alternation must be positive".into()));
        }
        if self.input_size == Some(0) {
            return Err(Error::InvalidConfig("input size must be positive".into()));
        }
        Ok(())
    }

    fn sgd_for(&self, p: &LayerParams, phase: Phase) -> SgdParams {
        let lr = match phase {
            Phase::Segment => self.regressor_lr,
            Phase::Pixel if p.outputs() == 1 => self.lr_new,
            Phase::Pixel => self.lr_base,
        };
        SgdParams {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Multi-scale stream and fusion layer against the balanced loss.
    Pixel,
    /// Segment regressor against the squared error.
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-image loss over the epoch.
    pub loss: f64,
    /// maxF of the fused maps seen during a pixel epoch.
    pub train_max_f: Option<f64>,
}

/// Progress through the schedule, enough to resume.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub completed_epochs: usize,
    pub trace: Vec<LossRecord>,
}

/// One training image with its segmentations and segment labels.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: RgbImage,
    pub gt: BinaryMask,
    pub segs: Vec<Segmentation>,
    pub seg_labels: Vec<Vec<f64>>,
}

impl TrainSample {
    pub fn new(image: RgbImage, gt: BinaryMask, scales: &[usize], slic: &SlicParams) -> Result<Self> {
        if image.width != gt.width || image.height != gt.height {
            return Err(Error::Dataset(format!(
                "image is {}x{} but its ground truth is {}x{}",
                image.width, image.height, gt.width, gt.height
            )));
        }
        let segs = multiscale(&image, scales, slic)?;
        let seg_labels = segs
            .iter()
            .map(|s| segment_labels(s, &gt.data))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainSample {
            image,
            gt,
            segs,
            seg_labels,
        })
    }

    /// Resizes to `input_size` (when set) before segmenting.
    pub fn prepare(
        image: RgbImage,
        gt: BinaryMask,
        input_size: Option<usize>,
        scales: &[usize],
        slic: &SlicParams,
    ) -> Result<Self> {
        let (image, gt) = match input_size {
            Some(s) if image.width != s || image.height != s => (image.resize(s, s), gt.resize(s, s)),
            _ => (image, gt),
        };
        Self::new(image, gt, scales, slic)
    }

    fn degenerate(&self) -> bool {
        let pos = self.gt.salient_count();
        pos == 0 || pos == self.gt.len()
    }
}

/// Phases in order: pretraining epochs, then alternating blocks. Empty when
/// there are no alternations.
pub fn schedule(config: &TrainConfig) -> Vec<Phase> {
    if config.alternations == 0 {
        return Vec::new();
    }
    let mut v = vec![Phase::Segment; config.pretrain_epochs];
    for _ in 0..config.alternations {
        v.extend(std::iter::repeat_n(Phase::Pixel, config.epochs_per_alternation));
        v.extend(std::iter::repeat_n(Phase::Segment, config.epochs_per_alternation));
    }
    v
}

/// Runs the remaining epochs of the schedule, calling `on_epoch` after each.
pub fn alternate_train<F>(
    net: &mut Network,
    samples: &[TrainSample],
    config: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&Network, &TrainState) -> Result<()>,
{
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let plan = schedule(config);
    // Segment features depend only on the multi-scale stream, which is
    // frozen between pixel epochs.
    let mut features: Option<Vec<Vec<f64>>> = None;
    while state.completed_epochs < plan.len() {
        let epoch = state.completed_epochs;
        let phase = plan[epoch];
        let record = match phase {
            Phase::Pixel => {
                features = None;
                pixel_epoch(net, samples, config, epoch)?
            }
            Phase::Segment => {
                if features.is_none() {
                    features = Some(sample_features(net, samples)?);
                }
                segment_epoch(net, samples, features.as_deref().expect("filled above"), config, epoch)?
            }
        };
        log::info!(
            "epoch {epoch} {:?}: loss {:.6}{}",
            phase,
            record.loss,
            record.train_max_f.map(|f| format!(" maxF {f:.4}")).unwrap_or_default()
        );
        state.trace.push(record);
        state.completed_epochs += 1;
        on_epoch(net, state)?;
    }
    Ok(())
}

fn non_finite(epoch: usize, phase: Phase, image: usize, loss: f64) -> Error {
    Error::NonFinite(format!("loss {loss} at epoch {epoch} ({phase:?}), image {image}"))
}

fn pixel_epoch(net: &mut Network, samples: &[TrainSample], config: &TrainConfig, epoch: usize) -> Result<LossRecord> {
    let mut total = 0.0;
    let mut used = 0usize;
    let mut maps: Vec<SaliencyMap> = Vec::new();
    let mut gts: Vec<BinaryMask> = Vec::new();
    let mut pending = 0usize;
    net.msfcn.zero_grad();
    net.fusion.zero_grad();
    for (i, s) in samples.iter().enumerate() {
        if s.degenerate() {
            log::warn!("image {i}: ground truth is uniform, skipped for the pixel loss");
            continue;
        }
        let (out, cache) = net.msfcn.forward_train(&s.image)?;
        let scores = net.segment_scores(&out, &s.segs)?;
        let s2 = render_s2(&scores, &s.segs)?;
        let fused = fuse(&out.s1, &s2, &net.fusion)?;
        let rep = balanced_cross_entropy(&fused, &s.gt)?;
        if !rep.loss.is_finite() {
            return Err(non_finite(epoch, Phase::Pixel, i, rep.loss));
        }
        let (d1, _) = fuse_backward(&out.s1, &s2, &fused, &rep.grad, &mut net.fusion)?;
        net.msfcn.backward(&cache, &d1)?;
        total += rep.loss;
        used += 1;
        maps.push(fused);
        gts.push(s.gt.clone());
        pending += 1;
        if pending == config.batch_size {
            step_pixel(net, config);
            pending = 0;
        }
    }
    if pending > 0 {
        step_pixel(net, config);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite(format!("parameters after epoch {epoch} (Pixel)")));
    }
    Ok(LossRecord {
        epoch,
        phase: Phase::Pixel,
        loss: if used == 0 { 0.0 } else { total / used as f64 },
        train_max_f: if maps.is_empty() { None } else { Some(max_f_measure(&maps, &gts)?) },
    })
}

fn step_pixel(net: &mut Network, config: &TrainConfig) {
    for l in net.msfcn.layers_mut() {
        let opt = config.sgd_for(&l.params, Phase::Pixel);
        sgd_step(&mut l.params, &opt);
        l.params.zero_grad();
    }
    let opt = config.sgd_for(&net.fusion, Phase::Pixel);
    sgd_step(&mut net.fusion, &opt);
    net.fusion.zero_grad();
}

/// Segment features of every sample at every scale, concatenated per sample.
fn sample_features(net: &Network, samples: &[TrainSample]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            let out = net.msfcn.forward(&s.image)?;
            let geom = FeatureGeometry::for_network(&net.msfcn, s.image.height, s.image.width)?;
            let mut feats = Vec::new();
            for seg in &s.segs {
                feats.extend(segment_features(&out.conv5_3, seg, &geom, net.config.pool_grid)?);
            }
            Ok(feats)
        })
        .collect()
}

fn segment_epoch(
    net: &mut Network,
    samples: &[TrainSample],
    features: &[Vec<f64>],
    config: &TrainConfig,
    epoch: usize,
) -> Result<LossRecord> {
    let len = net.config.segment_feature_len();
    let mut total = 0.0;
    let mut pending = 0usize;
    net.regressor.zero_grad();
    for (i, (s, feats)) in samples.iter().zip(features).enumerate() {
        let labels: Vec<f64> = s.seg_labels.concat();
        let cache = net.regressor.forward_train(feats, feats.len() / len)?;
        let (loss, grad) = stream2_loss(cache.scores(), &labels)?;
        if !loss.is_finite() {
            return Err(non_finite(epoch, Phase::Segment, i, loss));
        }
        net.regressor.backward(&cache, &grad)?;
        total += loss;
        pending += 1;
        if pending == config.batch_size || i + 1 == samples.len() {
            for l in net.regressor.layers_mut() {
                let opt = config.sgd_for(l, Phase::Segment);
                sgd_step(l, &opt);
                l.zero_grad();
            }
            pending = 0;
        }
    }
    Ok(LossRecord {
        epoch,
        phase: Phase::Segment,
        loss: total / samples.len() as f64,
        train_max_f: None,
    })
}
