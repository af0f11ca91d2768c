//! Config file loading and the flags > file > defaults merge.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::args::{AblateArgs, EditArgs, EvalArgs, GenDataArgs, PretrainArgs, OUT_ROOT_ENV};
use crate::error::CliError;

/// One optional table per subcommand plus a top-level seed.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub gen_data: GenDataArgs,
    pub pretrain: PretrainArgs,
    pub edit: EditArgs,
    pub eval: EvalArgs,
    pub ablate: AblateArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }
}

/// Fills every `None` of `self` from `file`; `self` holds the flags.
pub trait Overlay {
    fn overlay(self, file: Self) -> Self;
}

macro_rules! overlay {
    ($ty:ty { $($opt:ident),* } flags { $($flag:ident),* }) => {
        impl Overlay for $ty {
            fn overlay(self, file: Self) -> Self {
                Self {
                    $($opt: self.$opt.or(file.$opt),)*
                    $($flag: self.$flag || file.$flag,)*
                }
            }
        }
    };
}

overlay!(GenDataArgs { facts, rephrases, irrelevant, out } flags {});
overlay!(PretrainArgs {
    benchmark, out, d_model, layers, heads, d_ffn, ffn, edit_layer, max_seq_len, steps,
    batch_size, lr, warmup
} flags {});
overlay!(EditArgs {
    backbone, benchmark, strategy, selection, k, tau, steps, lr, grad_clip, centering_n,
    snapshot_every, stop_after, resume, out
} flags { no_conditional_activation });
overlay!(EvalArgs {
    backbone, benchmark, state, up_to, window, tau, out
} flags { no_conditional_activation });
overlay!(AblateArgs {
    backbone, benchmark, axis, values, edits, k, tau, steps, lr, window, out
} flags {});

/// Directory that relative default outputs land in: `$MEMOIR_OUT_DIR`, or
/// `memoir-out` under the working directory.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("memoir-out"))
}

pub const DEFAULT_BENCHMARK: &str = "benchmark.jsonl";
pub const DEFAULT_BACKBONE: &str = "backbone.ckpt";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_and_file_fills_gaps() {
        let flags = EditArgs {
            k: Some(32),
            ..Default::default()
        };
        let file: FileConfig = toml::from_str(
            "seed = 3\n[edit]\nk = 64\ntau = 0.5\nno_conditional_activation = true\n",
        )
        .unwrap();
        assert_eq!(file.seed, Some(3));
        let merged = flags.overlay(file.edit);
        assert_eq!(merged.k, Some(32));
        assert_eq!(merged.tau, Some(0.5));
        assert!(merged.no_conditional_activation);
        assert_eq!(merged.steps, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[edit]\nkk = 1\n").is_err());
        assert!(toml::from_str::<FileConfig>("[nope]\n").is_err());
    }
}
