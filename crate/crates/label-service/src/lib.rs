//! Local labeling endpoint: serves the highest-loss pairs, records
//! must-link / cannot-link answers in a crash-safe journal, and runs
//! constrained retraining rounds in the background.
//!
//! Endpoints: `GET /pairs?count=K`, `POST /labels`, `POST /round`,
//! `GET /status`, `GET /embedding`.

mod routes;
mod session;

pub use routes::{router, serve, ApiError, EXHAUSTED_HEADER};
pub use session::{
    journal_path, Embedding, EmbeddingPoint, ImagePayload, LabelAck, LabelSession, Metrics, PairBatch, PairPayload,
    PointPayload, SessionError, SessionResult, StatusSnapshot, TrainingState, JOURNAL_FILE,
};
