pub mod app;
pub mod classify;
mod error;
pub mod events;
pub mod mock_llm;
pub mod scenario;
pub mod sessions;
pub mod study;

pub use app::{router, serve, AppState};
pub use classify::{ClassifyRequest, ClassifyResult, ClassifyTask, Classifier, StageResult};
pub use error::{parse_body, ApiError, ApiJson};
pub use scenario::{Scenario, ScenarioBank, ScenarioView};
pub use study::Study;
