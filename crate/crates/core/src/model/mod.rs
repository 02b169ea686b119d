//! Transformer encoder with an MLM head and an entity concept prediction
//! head. Every layer carries its own backward pass; gradients are stored in
//! a structure of the same type as the parameters.

mod attention;
pub mod checkpoint;
mod encoder;
mod heads;
mod layers;
pub(crate) mod params;

pub use attention::SelfAttention;
pub use checkpoint::{load_model, save_model, CheckpointConfig};
pub use encoder::{Block, Embeddings, Encoder, EncoderCache, EncoderConfig};
pub use heads::{ecp_forward, mlm_forward, span_representation, EcpCache, EcpHead, MlmCache, MlmHead};
pub use layers::{gelu, gelu_grad, GeluKind, LayerNorm, Linear};
pub use params::{ParamKind, ParamMut, ParamRef, Params};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptModel<T> {
    pub encoder: Encoder<T>,
    pub mlm: MlmHead<T>,
    pub ecp: EcpHead<T>,
}

impl<T: Scalar> ConceptModel<T> {
    pub fn zeros(config: &EncoderConfig, concepts: usize) -> Result<Self> {
        if concepts == 0 {
            return Err(Error::Config("concept vocabulary is empty".into()));
        }
        let encoder = Encoder::zeros(config)?;
        Ok(Self {
            mlm: MlmHead::zeros(config.hidden, config.vocab_size, config.layer_norm_eps, config.gelu),
            ecp: EcpHead::zeros(config.hidden, concepts, config.gelu),
            encoder,
        })
    }

    /// Randomly initialized model. Each tensor has its own seed stream, so
    /// the encoder initialization does not depend on the concept count.
    pub fn new(config: &EncoderConfig, concepts: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config, concepts)?;
        m.initialize(seed, INIT_STD);
        Ok(m)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }
}

impl<T: Scalar> Params<T> for ConceptModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.encoder.collect(&params::join(prefix, "encoder"), out);
        self.mlm.collect(&params::join(prefix, "mlm"), out);
        self.ecp.collect(&params::join(prefix, "ecp"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.encoder.collect_mut(&params::join(prefix, "encoder"), out);
        self.mlm.collect_mut(&params::join(prefix, "mlm"), out);
        self.ecp.collect_mut(&params::join(prefix, "ecp"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_batch, PretrainExample};
    use tempfile::tempdir;

    fn tiny(vocab: usize) -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            intermediate: 16,
            vocab_size: vocab,
            max_positions: 16,
            dropout: 0.0,
            gelu: GeluKind::Exact,
            layer_norm_eps: 1e-12,
        }
    }

    fn batch() -> crate::corpus::PretrainBatch {
        let a = PretrainExample::new("a".into(), vec![0, 7, 8, 9, 1], vec![]);
        let b = PretrainExample::new("b".into(), vec![0, 5, 1], vec![]);
        build_batch(&[a, b], 16).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(10);
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(EncoderConfig::desk(100).validate().is_ok());
        assert!(EncoderConfig::base(100).validate().is_ok());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = ConceptModel::<f32>::new(&tiny(12), 3, 1).unwrap();
        let b = batch();
        let h1 = m.encoder.encode(&b).unwrap();
        let h2 = m.encoder.encode(&b).unwrap();
        assert_eq!(h1.dim(), (2, 5, 8));
        assert_eq!(h1, h2);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let m = ConceptModel::<f32>::new(&tiny(12), 3, 1).unwrap();
        assert!(m.encoder.forward_row(&[0, 12], &[true, true], None).is_err());
        let long = vec![0u32; 17];
        assert!(m.encoder.forward_row(&long, &[true; 17], None).is_err());
    }

    #[test]
    fn padding_is_never_attended() {
        let m = ConceptModel::<f64>::new(&tiny(12), 3, 2).unwrap();
        let mask = [true, true, true, false, false];
        let (a, _) = m.encoder.forward_row(&[0, 7, 1, 3, 3], &mask, None).unwrap();
        let (b, _) = m.encoder.forward_row(&[0, 7, 1, 9, 4], &mask, None).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn zero_parameters_give_identical_rows() {
        let mut m = ConceptModel::<f64>::zeros(&tiny(12), 3).unwrap();
        m.fill(0.0);
        let (h, _) = m.encoder.forward_row(&[0, 7, 8, 1], &[true; 4], None).unwrap();
        for i in 1..4 {
            assert_eq!(h.row(i), h.row(0));
        }
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_independent_of_concept_count() {
        let a = ConceptModel::<f32>::new(&tiny(12), 3, 5).unwrap();
        let b = ConceptModel::<f32>::new(&tiny(12), 7, 5).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.mlm, b.mlm);
        assert_eq!(a.ecp.hidden, b.ecp.hidden);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let m = ConceptModel::<f32>::new(&tiny(12), 3, 3).unwrap();
        let ids: Vec<String> = ["c0", "c1", "c2"].iter().map(|s| s.to_string()).collect();
        save_model(&path, &m, &ids, None).unwrap();
        let (loaded, cfg) = load_model::<f32>(&path).unwrap();
        assert_eq!(cfg.concepts, ids);
        assert_eq!(loaded, m);
        let b = batch();
        assert_eq!(loaded.encoder.encode(&b).unwrap(), m.encoder.encode(&b).unwrap());
        // overwrite in place
        save_model(&path, &m, &ids, None).unwrap();
        assert!(load_model::<f64>(&path).is_ok());
    }

    #[test]
    fn checkpoint_shape_mismatch_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let m = ConceptModel::<f32>::new(&tiny(12), 3, 3).unwrap();
        let ids: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        save_model(&path, &m, &ids, None).unwrap();
        let tensors = checkpoint::read_tensors(&path.join(checkpoint::MODEL_FILE)).unwrap();
        let mut other = ConceptModel::<f32>::zeros(&tiny(13), 3).unwrap();
        let err = checkpoint::load_params(&mut other, &tensors, "", true).unwrap_err();
        assert!(err.to_string().contains("encoder.embeddings.word"));
        let mut missing = ConceptModel::<f32>::zeros(&EncoderConfig { layers: 2, ..tiny(12) }, 3).unwrap();
        assert!(checkpoint::load_params(&mut missing, &tensors, "", true).is_err());
        assert!(checkpoint::decode_tensors(b"CPTT\x01\x00\x00\x00\x05\x00\x00\x00", "x").is_err());
    }
}
