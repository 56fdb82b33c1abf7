//! Finite-difference check of the hand-written backward pass.
//!
//! ReLU has a kink at 0. With zero biases a layer whose input is all zero
//! sits exactly on it and the central difference is one-sided, so a pair
//! that kills every unit reports an error near 1 without any backprop bug.
//!
//! cargo run --release --example gradient_check

use sparse_cf::corpus::{FeatureSchema, FeatureSetKind, ItemFeatures};
use sparse_cf::nn::{dcf_gradient_check, Activation, DcfConfig, DcfModel, Encoder};

const SEED: u64 = 1;

fn main() {
    let schema = FeatureSchema::new([("title", FeatureSetKind::Sequential), ("aspects", FeatureSetKind::Bag)]);
    let s = ItemFeatures::new(vec![vec![3, 1, 4, 1], vec![2, 5]]);
    let r = ItemFeatures::new(vec![vec![5, 9], vec![]]);
    for encoder in [Encoder::Mean, Encoder::Rnn] {
        for activation in [Activation::Tanh, Activation::Relu] {
            for tied in [false, true] {
                let config = DcfConfig {
                    encoder,
                    d_emb: 4,
                    d_item: 6,
                    d_head: 5,
                    d_rnn: 3,
                    tied,
                    activation,
                };
                let model = DcfModel::init(config, schema.clone(), &[10, 6], SEED).unwrap();
                let check = dcf_gradient_check(&model, &s, &r, 1e-5).unwrap();
                println!(
                    "{encoder:?} {activation:?} tied={tied}: {} parameters, max relative error {:.2e}",
                    check.n_params, check.max_relative_error
                );
            }
        }
    }
}
