//! Task costs, evaluation metrics, negative sampling, and the auxiliary and
//! primary objectives built on the model families.

mod cost;
mod likelihood;
mod metrics;
mod objectives;
mod sampling;

pub use cost::{f1_score, TaskCost};
pub use likelihood::{mbce, token_cross_entropy};
pub use metrics::{example_f1, macro_f1, micro_f1, multi_label_scores, token_accuracy, MultiLabelScores, Scores};
pub use objectives::{
    aux_loss, cd_from_terms, cd_prim, ssvm_margin, ssvm_prim, AuxLoss, CdLoss, PrimaryLoss, SsvmLoss,
};
pub use sampling::{bernoulli_from_uniform, sample_bernoulli, NegativeSampleSet};
