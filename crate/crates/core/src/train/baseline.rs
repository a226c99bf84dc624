use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{run_backbone, ArchSpec, Backbone, BackboneNodes};
use crate::error::{dim_err, Result};
use crate::model::Classifier;
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape, Tensor};

/// The unmodified network: backbone, flattened final feature map, one
/// linear classifier.
///
/// Seeded identically to a [`NeuroViewModel`](crate::neuroview::NeuroViewModel)
/// with the same spec and seed, so the two backbones start from the same
/// weights and only the head differs.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel<T> {
    pub spec: ArchSpec,
    pub seed: u64,
    pub backbone: Backbone<T>,
    /// `[num_classes, C*H*W of the final map]`
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

impl<T: Scalar> BaselineModel<T> {
    pub fn new(spec: ArchSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::init(&spec, &mut rng)?;
        Self::with_backbone(spec, seed, backbone)
    }

    pub fn with_backbone(spec: ArchSpec, seed: u64, backbone: Backbone<T>) -> Result<Self> {
        let [c, h, w] = spec.output_shape()?;
        let k = spec.num_classes;
        Ok(BaselineModel {
            fc_weight: Tensor::zeros(&[k, c * h * w]),
            fc_bias: Tensor::zeros(&[k]),
            spec,
            seed,
            backbone,
        })
    }
}

impl<T: Scalar> Classifier<T> for BaselineModel<T> {
    fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut ps = self.backbone.params();
        ps.push(&self.fc_weight);
        ps.push(&self.fc_bias);
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut ps = self.backbone.params_mut();
        ps.push(&mut self.fc_weight);
        ps.push(&mut self.fc_bias);
        ps
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for block in self.spec.unit_layout() {
            names.push(format!("backbone.layer{}.kernel", block.layer));
            names.push(format!("backbone.layer{}.bias", block.layer));
        }
        names.push("fc.weight".into());
        names.push("fc.bias".into());
        names
    }

    fn logits_on_tape(&self, tape: &mut Tape<T>, params: &[NodeId], inputs: &[NodeId]) -> Result<NodeId> {
        let n = 2 * self.backbone.convs.len();
        if params.len() != n + 2 {
            return Err(dim_err!("expected {} parameter nodes, got {}", n + 2, params.len()));
        }
        let [x] = inputs else {
            return Err(dim_err!("baseline model takes exactly one view, got {}", inputs.len()));
        };
        let nodes = BackboneNodes { convs: params[..n].chunks(2).map(|p| (p[0], p[1])).collect() };
        let out = run_backbone(&self.spec, tape, &nodes, *x)?;
        let flat = tape.flatten(out.output)?;
        tape.linear(flat, params[n], params[n + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuroview::{NeuroViewConfig, NeuroViewModel};

    #[test]
    fn shares_backbone_init_with_neuroview_counterpart() {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let base = BaselineModel::<f32>::new(spec.clone(), 21).unwrap();
        let nv = NeuroViewModel::<f32>::new(spec, NeuroViewConfig::default(), 21).unwrap();
        assert_eq!(base.backbone, nv.backbones[0]);
        assert_eq!(base.fc_weight.shape(), &[10, 64 * 3 * 3]);
    }

    #[test]
    fn rejects_multiple_views() {
        let spec = ArchSpec::preset("vgg-mini").unwrap();
        let m = BaselineModel::<f32>::new(spec, 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 28, 28]);
        assert!(m.logits(&[x.clone(), x]).is_err());
    }
}
