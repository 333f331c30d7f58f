//! Joint inference over a whole task with a frozen conditional model.
//!
//! Instead of predicting each instance independently, a labeling of the full
//! dataset is scored by how well the model predicts each label from the
//! others placed in context. This crate provides that objective (exact and
//! Monte Carlo), a brute-force oracle for tiny tasks, and the two approximate
//! maximizers: unsupervised fine-tuning of a task encoder ([`uft`]) and
//! multi-turn unsupervised in-context learning ([`uicl`]).

pub mod answer_parse;
pub mod error;
pub mod fixtures;
pub mod math;
pub mod model;
pub mod multitoken;
pub mod objective;
pub mod par;
pub mod rng;
pub mod solver;
pub mod synthetic;
pub mod uft;
pub mod uicl;

pub use error::{Error, Result};
pub use fixtures::Fixture;
pub use model::{
    Answer, AnswerSet, ConditionalModel, IndexedScorer, Instance, ModelScorer, Payload, SupportContext,
    SupportExample, TaskDataset,
};
pub use objective::{exact_joint_objective, mc_joint_objective, zero_shot_objective, Labeling, ObjectiveEstimate};
pub use solver::{brute_force_argmax, SolverConfig, SolverResult};
pub use synthetic::{generate_synthetic_task, SyntheticModel, SyntheticModelParams, SyntheticTaskConfig};
