//! Command implementations behind the `rsfield` binary: dataset synthesis,
//! joint training, global-shutter rendering from a checkpoint, and metric
//! evaluation. Kept in a library so integration tests drive the same code
//! paths as the executable.

pub mod commands;

pub use commands::{cmd_eval, cmd_render, cmd_synth, cmd_train, EvalArgs, RenderArgs};

/// Process exit code for an error: 2 for configuration problems,
/// 3 for runtime/numerical failures.
pub fn exit_code(err: &rsfield_core::Error) -> i32 {
    if err.is_config() {
        2
    } else {
        3
    }
}
