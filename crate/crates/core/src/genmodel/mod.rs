//! Generative models behind the virtual CMDP.

pub mod eacgmm;
pub mod em;
pub mod gmm;
pub mod halfmoons;
pub mod vae;
pub mod virtual_cmdp;

pub use eacgmm::{ea_cgmm_infer, ConditionalModel, Inference, DEFAULT_ALPHA};
pub use em::{em_fit, em_fit_with, EmConfig, EmFit};
pub use gmm::{gmm_log_likelihood, gmm_sample, log_sum_exp, softmax, Gmm};
pub use halfmoons::{
    branch_values, kmeans2_1d, make_moons, run_halfmoons, HalfMoonsConfig, HalfMoonsReport, HalfMoonsRun,
};
pub use vae::{generate_gmm, mean_nll, vae_chmdn_train, VaeChmdn, VaeChmdnSpec, VaeConfig, VaeLoss, VaeTrained};
pub use virtual_cmdp::{
    fit_virtual_cmdp, FidelityReport, FitConfig, RegressorRow, StateLayout, TransitionFidelity, VirtualCmdp, VirtualEnv,
};
