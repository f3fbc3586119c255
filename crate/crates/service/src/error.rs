//! Machine-readable error bodies shared by the REST API and the CLI.

use overseec_engine::interpret::InterpretError;
use overseec_engine::segment::SegError;
use overseec_engine::session::EngineError;
use overseec_engine::store::StoreError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable error category, e.g. `not_found` or `syntax`.
    pub error: String,
    pub message: String,
    /// Position of a DSL syntax error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error: error.into(),
            message: message.into(),
            line: None,
            column: None,
        }
    }

    /// HTTP status for this category.
    pub fn status(&self) -> u16 {
        match self.error.as_str() {
            "not_found" => 404,
            "bad_request" | "bad_image" | "bad_ref" => 400,
            "syntax" | "validation" | "plan" | "missing_masks" | "empty_class_set" | "conflict" => 422,
            "backend" | "interpret" | "segment" => 502,
            _ => 500,
        }
    }
}

impl From<&StoreError> for ErrorBody {
    fn from(e: &StoreError) -> Self {
        let kind = match e {
            StoreError::NotFound(_) => "not_found",
            StoreError::BadRef(_) | StoreError::BadKey(_) => "bad_ref",
            StoreError::Corrupt { .. } => "corrupt",
            StoreError::Json { .. } | StoreError::Io { .. } => "store",
        };
        ErrorBody::new(kind, e.to_string())
    }
}

impl From<&EngineError> for ErrorBody {
    fn from(e: &EngineError) -> Self {
        let kind = match e {
            EngineError::Store(s) => return s.into(),
            EngineError::Image(_) => "bad_image",
            EngineError::Interpret(InterpretError::EmptyPrompt) => "bad_request",
            EngineError::Interpret(InterpretError::EmptyClassSet) => "empty_class_set",
            EngineError::Interpret(InterpretError::Backend(_)) => "backend",
            EngineError::Interpret(_) => "interpret",
            EngineError::Segment(SegError::EmptyClassSet) => "empty_class_set",
            EngineError::Segment(SegError::TileTooLarge { .. }) => "bad_request",
            EngineError::Segment(_) => "segment",
            EngineError::Syntax(d) => {
                return ErrorBody {
                    line: Some(d.line),
                    column: Some(d.column),
                    ..ErrorBody::new("syntax", d.to_string())
                }
            }
            EngineError::Validation(_) => "validation",
            EngineError::Eval(_) => "evaluate",
            EngineError::Plan(_) => "plan",
            EngineError::Raster(_) => "raster",
            EngineError::MissingMasks(_) => "missing_masks",
            EngineError::NothingToCompose => "bad_request",
        };
        ErrorBody::new(kind, e.to_string())
    }
}

impl From<EngineError> for ErrorBody {
    fn from(e: EngineError) -> Self {
        (&e).into()
    }
}

impl From<StoreError> for ErrorBody {
    fn from(e: StoreError) -> Self {
        (&e).into()
    }
}
