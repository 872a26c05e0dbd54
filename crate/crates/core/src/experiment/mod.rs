//! Experiment configuration, training loops and the command layer.

mod commands;
mod config;
mod study;
mod train;

pub use commands::{
    checkpoint_path, cmd_attack, cmd_compare, cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, cmd_viz_masks,
    dataset_path, line_plot, load_data, load_model, manifest_path, plane_to_bytes, write_pgm, GenDataOutput,
    OutputLock, SweepCell, SweepOutput, SweepSpec, TrainOutput, VizOutput, SWEEP_HEADER, SWEEP_SUMMARY_HEADER,
};
pub use config::{
    AttackSection, DataSection, EvalSection, ExperimentConfig, LfmSection, MethodFlags, ModelSection, RunSection,
    SweepSection, TrainSection,
};
pub use study::{median, paired_study, PairedStudy, StudyArm, STUDY_HEADER};
pub use train::{
    classification_accuracy, images_of, init_model, labels_of, random_retrieval_map, retrieval_eval, train,
    train_log_csv, EpochLog, TrainOutcome, TRAIN_LOG_HEADER,
};
