//! Fidelity metrics, prompt faithfulness, significance testing and the
//! experiment harnesses built on them.

mod geometry;
mod harness;
mod metrics;
mod stats;

pub use geometry::{composition_probe, GeometryItem, GeometryReport};
pub use harness::{
    automated_fidelity, classifier_f1, controllability, detect, embedding_diagnostics,
    hardest_negative_gap, latent_diagnostics, loss_variance, n_sweep, n_sweep_over,
    prompt_faithfulness, prompt_faithfulness_at, single_distortion_items, single_faithfulness,
    tau_sweep, weighting_ablation, weighting_ablation_over, write_report, AblationReport,
    AblationRow, ControllabilityReport, HarnessConfig, LatentDiagnostics, NSweepReport, NSweepRow,
    Reference, SingleItem, TauEncoder, TauPoint, Trial, DEFAULT_TAUS, N_SWEEP,
};
pub use metrics::{is_faithful, micro_f1, mse, psnr, ssim, MetricReport, PSNR_CAP};
pub use stats::{
    incomplete_beta, ln_gamma, paired_t_test, student_t_cdf, t_test_differences, TTest,
};
