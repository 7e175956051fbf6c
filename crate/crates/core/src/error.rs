use thiserror::Error;

use crate::graph::{EntityId, EntityKind, LinkKind};

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("link kind {kind} requires {expected_parent} -> {expected_child}, got {parent} -> {child}")]
    KindPair {
        kind: LinkKind,
        expected_parent: EntityKind,
        expected_child: EntityKind,
        parent: EntityKind,
        child: EntityKind,
    },

    #[error("self link on {0}")]
    SelfLink(EntityId),

    #[error("no link kind connects {parent} -> {child}")]
    NoLinkKind { parent: EntityKind, child: EntityKind },

    #[error("invalid entity id {0:?}")]
    InvalidEntity(String),

    #[error("unknown link kind {0:?}")]
    UnknownLinkKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} is outside the open interval (0, 1)")]
    Domain(f64),

    #[error("prior fit failed ({reason}); apply the fallback prior")]
    Fit { reason: String },

    #[error("no prior fitted for station {0}")]
    MissingPrior(EntityId),

    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),

    #[error("entities missing from embedding table: {}", join_ids(.0))]
    MissingEntities(Vec<EntityId>),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("empty group")]
    EmptyGroup,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("[{stage}] {inner}")]
    Stage { stage: &'static str, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_ids(ids: &[EntityId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub(crate) fn fit(reason: impl Into<String>) -> Self {
        Error::Fit {
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            inner: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
