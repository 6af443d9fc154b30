//! Synthetic experiments around attention: cone-constrained band ensembles,
//! witnesses for the coherent-band lower bounds, causal attention with sink
//! diagnostics, and synthetic dumps.

mod attention;
mod bounds;
mod cone;
mod scaling;
mod sink;

pub use attention::{attention_entropy, causal_attention, causal_attention_matrix, sink_score, AttentionEntropy};
pub use bounds::{
    lemma1_check, run_sweep, verify_lower_bounds, BoundId, BoundParams, BoundWitness, SweepPoint, SweepSpec,
    WITNESS_REL_TOL,
};
pub use cone::{generate_cone_keys, ConeEnsembleSpec};
pub use scaling::{scaling_study, LinearFit, ScalingRow, ScalingStudy};
pub use sink::{sink_scenario, synth_dump, SinkScenario, SinkScenarioSpec, SinkScores, SynthSpec};
