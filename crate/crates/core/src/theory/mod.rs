//! Closed-form predictions and their Monte Carlo and simulation checks.

mod eos;
mod expectation;
mod regime;

pub use eos::{sam_eos_lambda, sam_normalized_eig, EosQuery};
pub use expectation::{
    draw_q, mc_estimate_one_step, thm1_prediction, thm3_prediction, thm3_prediction_fixed_size, BatchStepMeans,
    OneStepEstimate, OneStepTemplate, QDraw, TheoremReport, MIN_DRAWS,
};
pub use regime::{
    classify_regime, verify_regime_empirically, PerturbationRun, Regime, RegimeCheck, RegimeCheckSpec,
    RegimeVerdict, MIN_R_SQUARED,
};
