//! Dense tensors, a reverse-mode tape, the layers used by EEGNet and
//! CharRNN, both losses, Adam and the two learning-rate schedules.

mod config;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
mod optim;
pub mod rng;
mod scalar;
mod sched;
mod tensor;

pub use config::{LabelOneHot, LossKind, TrainConfig};
pub use graph::{Backward, BackwardCtx, Gradients, Graph, Var};
pub use ops::conv::{conv2d, depthwise_conv2d, separable_param_counts, Padding};
pub use ops::loss::{cross_entropy, hinge_loss, softmax, PROB_FLOOR};
pub use ops::lstm::{lstm_cell, lstm_param_count, lstm_sequence, LstmWeights};
pub use ops::norm::{BatchNormMode, BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use optim::{Adam, AdamState};
pub use scalar::Scalar;
pub use sched::{cosine_lr, Plateau, SchedulerKind};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::standard_suite;

    #[test]
    fn every_op_matches_finite_differences() {
        let results = standard_suite(11).unwrap();
        assert!(results.len() >= 3 * 16);
        for r in &results {
            assert!(
                r.max_rel_error < 1e-4,
                "{} {:?}: relative error {}",
                r.op,
                r.shape,
                r.max_rel_error
            );
        }
    }
}
