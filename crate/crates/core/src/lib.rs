//! Event ingestion, sessionization, word rendering and tokenization for
//! player telemetry, plus a synthetic corpus generator with planted
//! personas.

pub mod error;
pub mod event;
pub mod ingest;
pub mod schema;
pub mod session;
pub mod synth;
pub mod vocab;
pub mod words;

pub use error::{CoreError, Result};
pub use event::{Category, EventLog, FieldValue, RawEvent, ValueKind};
pub use ingest::{parse_events, sort_events, validate_event, ParseMode, ParseReport};
pub use schema::EventSchema;
pub use session::{segment, Session, DEFAULT_GAP_MS};
pub use vocab::{build_vocab, Vocabulary};
pub use words::{assemble_document, PreprocessConfig, WordSequence};
