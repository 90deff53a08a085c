//! Evaluation of the hand-state regressors: fold plans, the per-user,
//! ablation, cross-session and leave-one-user-out protocols, and result
//! tables with cross-user confidence intervals.

pub mod error;
pub mod folds;
pub mod protocols;
pub mod report;

pub use error::{EvalError, Result};
pub use folds::{make_fold_plan, Fold, FoldPlan};
pub use protocols::{
    cross_validate_user, evaluate_ensemble, run_ablation, run_cross_session, run_leave_one_user_out,
    run_per_user_cv, switching_sequences, train_online_model, AlignedDataset, AlignedSequence, EvalConfig, HeldOut,
    UserCv,
};
pub use report::{aggregate, result_rows, Cell, Metric, MetricsReport, ResultRow};
