//! The command layer: config resolution, the commands, manifests and the
//! exit-code contract.

mod config;
mod run;

pub use config::{
    merge, preset_defaults, read_config_file, resolve, set_path, BatchConfig, ClassRef, CommandKind, DataConfig,
    ImageSource, InitConfig, Method, Overrides, Preset, RunConfig, SuperstimulusConfig, SynthConfig, TermConfig,
    TermEntry,
};
pub use run::{
    inspect, run, EvalReport, RunManifest, SnapshotRecord, SuperstimulusRecord, Timing, CHECKPOINT_FILE, CORPUS_DIR,
    ENGINE_VERSION, MANIFEST_FILE, METRICS_FILE,
};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
/// Anything not covered by the contract, such as a failed write.
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MISSING_INPUT: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::Shape { .. }
        | Error::InvalidLayer { .. }
        | Error::UnknownClass(_)
        | Error::OutOfRange(_)
        | Error::ClassSetMismatch(..)
        | Error::Arity { .. }
        | Error::FromImageUnsupported(_)
        | Error::Unsupported(_)
        | Error::Empty(_)
        | Error::NotScalar(_) => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::NumericalFailure { .. } | Error::Divergence { .. } => EXIT_NUMERICAL,
        Error::MissingInput(_)
        | Error::MissingFile { .. }
        | Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncation { .. }
        | Error::Malformed { .. }
        | Error::MalformedHeader(_)
        | Error::LabelMismatch { .. } => EXIT_MISSING_INPUT,
        Error::Io { source, .. } | Error::Stream(source) if source.kind() == std::io::ErrorKind::NotFound => {
            EXIT_MISSING_INPUT
        }
        Error::Io { .. } | Error::Stream(_) => EXIT_OTHER,
    }
}
