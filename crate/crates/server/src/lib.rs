//! Project files, the HTTP API over a project and the `topicscope` command
//! line built on them.

pub mod api;
pub mod project;

pub use api::{router, AppState};
pub use project::{CorpusRef, Project, ProjectError};

/// Default listening port when neither `--port` nor `TOPICSCOPE_PORT` is given.
pub const DEFAULT_PORT: u16 = 8750;
