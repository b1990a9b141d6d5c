//! Imitation learning: synthetic instructions, per-step examples with
//! expert labels, a linear two-head policy, behavioral cloning and DAGGER.

mod examples;
mod instruction;
mod policy;
mod rollout;
mod storage;
mod train;

pub use examples::{
    build_input, emit_dataset, emit_step_examples, progress_class, record_episode, sim_for, sort_examples,
    HistoryEntry, StepExample, StepInput, StepLabels, DEFAULT_MASK_RATE, PROGRESS_CLASSES,
};
pub use instruction::{
    make_episodes, mask_instruction, reference_buckets, synthesize_instruction, Episode, Instruction,
    InstructionConfig, DEFAULT_VOCAB_SIZE, DIRECTION_TOKEN_BASE, FILLER_TOKEN_BASE, LANGUAGE_TAGS, MASK_TOKEN,
};
pub use policy::{argmax, LinearPolicy, LossWeights, PolicyDocument, PolicyShape, Scores, Tensor, DEFAULT_EMBED_DIM};
pub use rollout::{
    dagger_iteration, evaluate_policy, rollout, run_rollouts, score_records, start_state, Policy, PolicyEvaluation,
    RandomPolicy, StartMode, StopPolicy,
};
pub use storage::{load_dataset, save_dataset, EXAMPLES_BIN, EXAMPLE_MAGIC, INDEX_JSONL};
pub use train::{accuracy, train, Optimizer, TrainConfig, TrainReport};
