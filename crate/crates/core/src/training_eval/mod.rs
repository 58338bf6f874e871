//! Loss, optimisation, checkpoints, metrics and the ablation runner.

mod ablation;
mod checkpoint;
mod config;
mod evaluate;
mod metrics;
mod optim;
mod trainer;

pub use ablation::{ablation_run, default_grid, AblationCell, AblationReport, AblationRow, CellSummary};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::TrainConfig;
pub use evaluate::{evaluate, predict_conversation};
pub use metrics::{ClassMetrics, Counts, MetricsReport};
pub use optim::Adam;
pub use trainer::{batch_grad, batch_loss, conversation_loss, train, EpochLog, TrainOutcome};
