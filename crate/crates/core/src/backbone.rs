//! VGG-16-shaped convolutional feature extractor with total stride 8.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv, Init};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Var};

/// VGG-16 convolution widths.
pub const VGG16_CHANNELS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
/// Convolutions per VGG block.
pub const BLOCK_SIZES: [usize; 5] = [2, 2, 3, 3, 3];
/// 1-based blocks followed by a 2×2/2 max pool.
pub const POOL_AFTER: [usize; 3] = [1, 2, 4];
pub const STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    /// Leading conv layers that never receive updates.
    pub frozen_prefix: usize,
    pub init: Init,
}

impl BackboneConfig {
    /// VGG-16 widths multiplied by `channel_scale`, rounded up and floored
    /// at 8.
    pub fn scaled(channel_scale: Float) -> Self {
        let channels = VGG16_CHANNELS
            .iter()
            .map(|&c| ((c as Float * channel_scale).ceil() as usize).max(8))
            .collect();
        BackboneConfig { channels, frozen_prefix: 4, init: Init::he() }
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("13 layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 13 || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "backbone needs 13 positive channel counts, got {:?}",
                self.channels
            )));
        }
        if self.frozen_prefix > 13 {
            return Err(Error::Config(format!("frozen_prefix {} exceeds 13 layers", self.frozen_prefix)));
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::scaled(1.0 / 8.0)
    }
}

/// Indices (0-based) of conv layers followed by pooling.
fn pooled_layers() -> [usize; 3] {
    let mut ends = [0usize; 5];
    let mut acc = 0;
    for (b, &n) in BLOCK_SIZES.iter().enumerate() {
        acc += n;
        ends[b] = acc - 1;
    }
    POOL_AFTER.map(|b| ends[b - 1])
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub convs: Vec<Conv>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut cin = 3;
        let mut convs = Vec::with_capacity(13);
        for (i, &cout) in config.channels.iter().enumerate() {
            convs.push(Conv::new(
                store,
                &format!("backbone.conv{}", i + 1),
                cin,
                cout,
                (3, 3),
                (1, 1),
                config.init,
                rng,
            ));
            cin = cout;
        }
        Ok(Backbone { config, convs })
    }

    pub fn frozen_params(&self) -> Vec<ParamId> {
        self.convs[..self.config.frozen_prefix].iter().flat_map(|c| c.params()).collect()
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        self.convs[self.config.frozen_prefix..].iter().flat_map(|c| c.params()).collect()
    }

    /// `[3×H×W] → [C×⌊H/8⌋×⌊W/8⌋]`.
    pub fn extract_features(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::dim(format!("extract_features: expected [3×H×W], got {s:?}")));
        }
        if s[1] < STRIDE || s[2] < STRIDE {
            return Err(Error::dim(format!("extract_features: image {}×{} smaller than 8×8", s[1], s[2])));
        }
        let pools = pooled_layers();
        let mut x = image;
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(g, store, x)?;
            x = g.relu(y);
            if pools.contains(&i) {
                let sh = g.shape(x).to_vec();
                let (h2, w2) = (sh[1] / 2, sh[2] / 2);
                x = g.max_pool_region(x, (0, 2 * h2), (0, 2 * w2), h2, w2)?;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ParamStore, Backbone) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bb = Backbone::new(&mut store, BackboneConfig::scaled(1.0 / 64.0), &mut rng).unwrap();
        (store, bb)
    }

    #[test]
    fn schedule_scaling() {
        let c = BackboneConfig::scaled(1.0 / 8.0);
        assert_eq!(c.channels, vec![8, 8, 16, 16, 32, 32, 32, 64, 64, 64, 64, 64, 64]);
        assert_eq!(pooled_layers(), [1, 3, 9]);
        assert!(BackboneConfig { channels: vec![8; 12], ..c }.validate().is_err());
    }

    #[test]
    fn stride_arithmetic() {
        let (store, bb) = tiny();
        for (h, w, fh, fw) in [(64, 64, 8, 8), (48, 120, 6, 15), (8, 8, 1, 1)] {
            let mut g = Graph::new();
            let x = g.input(Tensor::zeros(vec![3, h, w]));
            let f = bb.extract_features(&mut g, &store, x).unwrap();
            assert_eq!(g.shape(f), &[bb.config.out_channels(), fh, fw]);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![3, 7, 64]));
        assert!(bb.extract_features(&mut g, &store, x).is_err());
    }

    #[test]
    fn finite_and_deterministic() {
        let (store, bb) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Float> = (0..3 * 32 * 40).map(|_| rng.random::<Float>() - 0.5).collect();
        let run = || {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![3, 32, 40], data.clone()).unwrap());
            let f = bb.extract_features(&mut g, &store, x).unwrap();
            g.value(f).to_vec()
        };
        let a = run();
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(a.iter().any(|&v| v != 0.0));
        assert_eq!(a, run());
    }
}
