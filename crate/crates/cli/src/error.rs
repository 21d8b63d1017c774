use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::MissingFile(_) | Self::Config(_) => 2,
            Self::Runtime(_) | Self::Io { .. } => 1,
        }
    }
}

pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
