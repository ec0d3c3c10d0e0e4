//! The full two-stream model and its on-disk checkpoint format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{RgbImage, SaliencyMap};
use crate::msfcn::{build_msfcn, MsFcn, MsFcnOutput, NetworkConfig};
use crate::segpool::{render_s2, segment_features, FeatureGeometry, SegmentRegressor};
use crate::superpix::Segmentation;
use crate::tensor::{LayerParams, Shape, Tensor};
use crate::train::{fuse, fusion_layer, FusionLayer};

const MANIFEST_VERSION: &str = "deepcontrast-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub msfcn: MsFcn,
    pub regressor: SegmentRegressor,
    pub fusion: FusionLayer,
}

/// All maps produced for one image.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub s1: SaliencyMap,
    pub s2: SaliencyMap,
    pub fused: SaliencyMap,
}

pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    let msfcn = build_msfcn(config, seed)?;
    let regressor = SegmentRegressor::new(
        config.segment_feature_len(),
        config.regressor_hidden,
        seed.wrapping_add(0x5eed),
    );
    Ok(Network {
        config: config.clone(),
        msfcn,
        regressor,
        fusion: fusion_layer(config.fusion_init),
    })
}

impl Network {
    /// Every parameter block with a stable name.
    pub fn named_params(&self) -> Vec<(String, &LayerParams)> {
        let mut v: Vec<(String, &LayerParams)> =
            self.msfcn.layers().into_iter().map(|l| (l.name.clone(), &l.params)).collect();
        for (i, l) in self.regressor.layers().into_iter().enumerate() {
            v.push((format!("regressor_{}", i + 1), l));
        }
        v.push(("fusion".into(), &self.fusion));
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut LayerParams)> {
        let mut v: Vec<(String, &mut LayerParams)> = self
            .msfcn
            .layers_mut()
            .into_iter()
            .map(|l| (l.name.clone(), &mut l.params))
            .collect();
        for (i, l) in self.regressor.layers_mut().into_iter().enumerate() {
            v.push((format!("regressor_{}", i + 1), l));
        }
        v.push(("fusion".into(), &mut self.fusion));
        v
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, p)| p.is_finite())
    }

    /// Regressor scores of every segment at every scale from one feature map.
    pub fn segment_scores(&self, out: &MsFcnOutput, segs: &[Segmentation]) -> Result<Vec<Vec<f64>>> {
        let (h, w) = (out.s1.height, out.s1.width);
        let geom = FeatureGeometry::for_network(&self.msfcn, h, w)?;
        let len = self.config.segment_feature_len();
        segs.iter()
            .map(|seg| {
                let feats = segment_features(&out.conv5_3, seg, &geom, self.config.pool_grid)?;
                self.regressor.forward(&feats, feats.len() / len)
            })
            .collect()
    }

    /// Runs both streams and the fusion layer.
    pub fn predict(&self, image: &RgbImage, segs: &[Segmentation]) -> Result<Prediction> {
        let out = self.msfcn.forward(image)?;
        let scores = self.segment_scores(&out, segs)?;
        let s2 = render_s2(&scores, segs)?;
        let fused = fuse(&out.s1, &s2, &self.fusion)?;
        Ok(Prediction { s1: out.s1, s2, fused })
    }

    /// Writes `manifest.txt` and one blob per weight, bias and velocity.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!("{MANIFEST_VERSION}\n");
        let cfg = serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let _ = writeln!(manifest, "config {cfg}");
        for l in self.msfcn.layers() {
            let s = &l.spec;
            let _ = writeln!(
                manifest,
                "layer {} conv in={} out={} k={}x{} s={}x{} p={}x{} d={}x{} relu={}",
                l.name,
                s.in_channels,
                s.out_channels,
                s.kernel.0,
                s.kernel.1,
                s.stride.0,
                s.stride.1,
                s.pad.0,
                s.pad.1,
                s.dilation.0,
                s.dilation.1,
                l.relu as u8
            );
        }
        for (name, p) in self.named_params().into_iter().skip(self.msfcn.layers().len()) {
            let ws = p.weight.shape();
            let _ = writeln!(manifest, "layer {name} affine in={} out={}", ws.c, ws.n);
        }
        for (name, p) in self.named_params() {
            let out = p.outputs();
            let bias_shape = Shape::new(1, out, 1, 1);
            p.weight.save(&dir.join(format!("{name}.weight.bin")))?;
            Tensor::from_vec(bias_shape, p.bias.clone())?.save(&dir.join(format!("{name}.bias.bin")))?;
            Tensor::from_vec(p.weight.shape(), p.weight_velocity.clone())?
                .save(&dir.join(format!("{name}.weight_velocity.bin")))?;
            Tensor::from_vec(bias_shape, p.bias_velocity.clone())?
                .save(&dir.join(format!("{name}.bias_velocity.bin")))?;
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Network> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_VERSION) {
            return Err(Error::Checkpoint(format!("{}: unsupported manifest version", path.display())));
        }
        let cfg = lines
            .next()
            .and_then(|l| l.strip_prefix("config "))
            .ok_or_else(|| Error::Checkpoint("manifest lacks a config line".into()))?;
        let config: NetworkConfig =
            serde_json::from_str(cfg).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
        let mut net = build_network(&config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let listed: Vec<&str> = lines
            .filter_map(|l| l.strip_prefix("layer "))
            .filter_map(|l| l.split_whitespace().next())
            .collect();
        let expected: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        if listed != expected {
            return Err(Error::Checkpoint(format!(
                "layer list does not match the configured network ({} listed, {} expected)",
                listed.len(),
                expected.len()
            )));
        }
        for (name, p) in net.named_params_mut() {
            let load = |suffix: &str, want: Shape| -> Result<Vec<f64>> {
                let t = Tensor::load(&dir.join(format!("{name}.{suffix}.bin")))?;
                if t.shape() != want {
                    return Err(Error::Checkpoint(format!(
                        "{name}.{suffix}: shape {} does not match {}",
                        t.shape(),
                        want
                    )));
                }
                Ok(t.into_data())
            };
            let ws = p.weight.shape();
            let bs = Shape::new(1, p.outputs(), 1, 1);
            let w = load("weight", ws)?;
            p.weight.data_mut().copy_from_slice(&w);
            p.bias = load("bias", bs)?;
            p.weight_velocity = load("weight_velocity", ws)?;
            p.bias_velocity = load("bias_velocity", bs)?;
            p.zero_grad();
        }
        if !net.is_finite() {
            return Err(Error::Checkpoint(format!("{}: non-finite parameters", dir.display())));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        let mut c = NetworkConfig::default().with_width_scale(1.0 / 32.0);
        c.regressor_hidden = 8;
        c
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = build_network(&tiny(), 11).unwrap();
        net.fusion.weight_velocity[1] = 0.25;
        net.save(dir.path()).unwrap();
        let back = Network::load(dir.path()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn missing_blob_is_a_checkpoint_or_io_error() {
        let dir = tempfile::tempdir().unwrap();
        build_network(&tiny(), 1).unwrap().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("fusion.bias.bin")).unwrap();
        assert!(Network::load(dir.path()).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(build_network(&tiny(), 5).unwrap(), build_network(&tiny(), 5).unwrap());
        assert_ne!(build_network(&tiny(), 5).unwrap(), build_network(&tiny(), 6).unwrap());
    }
}
