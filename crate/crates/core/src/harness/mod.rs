//! Deployment-condition studies: frame degradations, misalignment sweeps,
//! transfer attacks and energy accounting.

pub mod attack;
pub mod energy;
pub mod perturb;
pub mod sweep;

pub use attack::{
    apply_delta, apply_delta_videos, attack_eval, attack_train, balanced_subset, craft_perturbations,
    surrogate_loss, train_classifier, AttackConfig, AttackRow, AttackSpec, ClassifierConfig, ConvClassifier,
    UniversalPerturbation,
};
pub use energy::{energy_report, EnergyModel, EnergyReport};
pub use perturb::{jpeg_roundtrip, perturb, perturb_videos, quant_table, Perturbation, PerturbationKind};
pub use sweep::{
    accuracy_envelope, degradation_sweep, misalignment_grid, misalignment_sweep, MisalignmentRow, Summary, SweepRow,
};
