use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {}: run `annotrel {command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },
    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn stage<E: std::error::Error + Send + Sync + 'static>(context: impl Into<String>) -> impl FnOnce(E) -> CliError {
        let context = context.into();
        move |e| CliError::Stage { context, source: Box::new(e) }
    }

    /// Process exit code: 2 for configuration problems, 3 for a missing
    /// upstream artifact, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }

    /// Machine-readable form printed to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Stage { .. } => "stage",
            CliError::Io { .. } => "io",
        };
        let mut v = serde_json::json!({ "error": kind, "message": self.to_string() });
        if let CliError::MissingArtifact { path, command } = self {
            v["artifact"] = path.display().to_string().into();
            v["producer"] = (*command).into();
        }
        v
    }
}
