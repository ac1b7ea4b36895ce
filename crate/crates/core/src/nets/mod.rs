//! Network definitions: layers, the two transforms and the full model.

pub mod codecnet;
pub mod layers;
pub mod mofnet;
pub mod params;

use rand::SeedableRng;
use sha2::{Digest, Sha256};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use codecnet::CodecNet;
pub use mofnet::{MofNet, MofnetOutput};
pub use params::{Builder, Ctx, Mode, ParamId, ParamStore};

use crate::entropy::EntropyModel;
use crate::error::{Error, Result};

/// Parameter-name prefixes of the four jointly trained groups.
pub const GROUPS: [&str; 4] = ["mofnet.", "codecnet.", "mofnet_entropy.", "codecnet_entropy."];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width of every transform and latent group.
    pub features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { features: 128 }
    }
}

/// MOFNet, CodecNet and one entropy model for each, plus their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub mofnet: MofNet,
    pub codecnet: CodecNet,
    pub mofnet_entropy: EntropyModel,
    pub codecnet_entropy: EntropyModel,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let f = config.features;
        if f < 4 {
            return Err(Error::InvalidInput(format!("feature width must be at least 4, got {f}")));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let mofnet = MofNet::new(&mut b, "mofnet", f);
        let codecnet = CodecNet::new(&mut b, "codecnet", f);
        let mofnet_entropy = EntropyModel::new(&mut b, "mofnet_entropy", f);
        let codecnet_entropy = EntropyModel::new(&mut b, "codecnet_entropy", f);
        mofnet.init_output(&mut store);
        Ok(Model {
            config,
            store,
            mofnet,
            codecnet,
            mofnet_entropy,
            codecnet_entropy,
        })
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// SHA-256 over the configuration and every named parameter.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.config.features as u64).to_le_bytes());
        for (name, t) in self.store.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn eval_ctx(&self) -> Ctx {
        Ctx::eval(&self.store)
    }

    pub fn train_ctx(&self, seed: u64) -> Ctx {
        Ctx::train(&self.store, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lvc_autodiff::{Tensor, Var};
    use rand::Rng;

    fn frame(n: usize, h: usize, w: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Var::constant(Tensor::from_fn([n, 3, h, w], |_| rng.gen_range(0.0..1.0)))
    }

    #[test]
    fn full_width_parameter_count() {
        let full = Model::new(ModelConfig { features: 128 }, 0).unwrap();
        let count = full.param_count();
        assert!((15_000_000..=25_000_000).contains(&count), "{count}");
        let half = Model::new(ModelConfig { features: 64 }, 0).unwrap().param_count();
        let ratio = count as f64 / half as f64;
        assert!((3.5..4.1).contains(&ratio), "{ratio}");
        let per_group: usize = GROUPS.iter().map(|g| full.store.param_count_with_prefix(g)).sum();
        assert_eq!(per_group, count);
    }

    #[test]
    fn transform_shapes() {
        let m = Model::new(ModelConfig { features: 8 }, 1).unwrap();
        let ctx = m.eval_ctx();
        let (x, p, f) = (frame(1, 64, 64, 1), frame(1, 64, 64, 2), frame(1, 64, 64, 3));
        let y = m.mofnet.analysis(&ctx, &x, &p, &f).unwrap();
        assert_eq!(y.shape(), [1, 8, 4, 4]);
        let yp = m.mofnet.shortcut(&ctx, &p, &f).unwrap();
        assert_eq!(yp.shape(), [1, 8, 16, 16]);
        let out = m.mofnet.synthesis(&ctx, &y, &yp).unwrap();
        assert_eq!(out.v_p.shape(), [1, 2, 64, 64]);
        assert_eq!(out.alpha.shape(), [1, 1, 64, 64]);
        let yc = m.codecnet.analysis(&ctx, &x, &p).unwrap();
        assert_eq!(yc.shape(), [1, 8, 4, 4]);
        let ycp = m.codecnet.shortcut(&ctx, &p).unwrap();
        assert_eq!(ycp.shape(), [1, 8, 4, 4]);
        assert_eq!(m.codecnet.synthesis(&ctx, &yc, &ycp).unwrap().shape(), [1, 3, 64, 64]);
        assert!(m.mofnet.synthesis(&ctx, &y, &y).is_err());
        assert!(m.codecnet.synthesis(&ctx, &yc, &yp).is_err());
        assert!(m.mofnet.analysis(&ctx, &frame(1, 48, 40, 4), &p, &f).is_err());
    }

    #[test]
    fn weight_maps_stay_in_unit_interval_for_wild_latents() {
        let m = Model::new(ModelConfig { features: 4 }, 2).unwrap();
        let ctx = m.eval_ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = Var::constant(Tensor::from_fn([1, 4, 2, 2], |_| rng.gen_range(-500.0..500.0)));
        let yp = Var::constant(Tensor::from_fn([1, 4, 8, 8], |_| rng.gen_range(-500.0..500.0)));
        let out = m.mofnet.synthesis(&ctx, &y, &yp).unwrap();
        for map in [&out.alpha, &out.beta] {
            assert!(map.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let zero_sent = m.mofnet.synthesis(&ctx, &y.mul_scalar(0.0), &yp).unwrap();
        let zero_short = m.mofnet.synthesis(&ctx, &y, &yp.mul_scalar(0.0)).unwrap();
        assert!(zero_sent.v_f.value().all_finite() && zero_short.v_f.value().all_finite());
    }

    #[test]
    fn fresh_model_starts_near_an_even_blend() {
        let m = Model::new(ModelConfig { features: 8 }, 3).unwrap();
        let ctx = m.eval_ctx();
        let (x, p, f) = (frame(1, 32, 32, 1), frame(1, 32, 32, 2), frame(1, 32, 32, 3));
        let y = m.mofnet.analysis(&ctx, &x, &p, &f).unwrap().round();
        let yp = m.mofnet.shortcut(&ctx, &p, &f).unwrap();
        let out = m.mofnet.synthesis(&ctx, &y, &yp).unwrap();
        assert!((out.beta.value().mean() - 0.5).abs() < 0.2);
        assert!(out.v_p.value().data().iter().all(|v| v.abs() < 5.0));
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = Model::new(ModelConfig { features: 4 }, 0).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let id = b.store.ids().next().unwrap();
        let mut t = b.store.get(id).clone();
        t.data_mut()[0] += 1e-12;
        b.store.set(id, t);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn tiny_widths_are_rejected() {
        assert!(Model::new(ModelConfig { features: 3 }, 0).is_err());
    }
}
