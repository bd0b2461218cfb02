use std::path::PathBuf;

use crate::codec::CodecError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content; `context` names the file and, when known, the
    /// line or field that failed.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// A loaded object violates one of its structural invariants.
    #[error("{0}")]
    Invalid(String),

    #[error("invalid bit depth {0}: must be within 1..=32")]
    InvalidBitDepth(u32),

    #[error("non-finite feature value at element {0}")]
    NonFinite(usize),

    #[error("non-positive bandwidth {0} B/s")]
    NonPositiveBandwidth(f64),

    #[error("cell (layer {layer}, bits {bits}) is outside the lookup grid")]
    OutOfGrid { layer: usize, bits: u8 },

    #[error("missing calibration cells: {}", format_cells(.0))]
    MissingCells(Vec<(usize, u8)>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no feasible decision cell")]
    Infeasible,

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("network error with {peer}: {source}")]
    Net {
        peer: String,
        #[source]
        source: std::io::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// The peer answered with an ERROR message.
    #[error("peer rejected request: {0}")]
    Remote(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn net(peer: impl ToString, source: std::io::Error) -> Self {
        Error::Net {
            peer: peer.to_string(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

fn format_cells(cells: &[(usize, u8)]) -> String {
    const SHOWN: usize = 16;
    let mut s = cells
        .iter()
        .take(SHOWN)
        .map(|(i, c)| format!("({i},{c})"))
        .collect::<Vec<_>>()
        .join(" ");
    if cells.len() > SHOWN {
        s.push_str(&format!(" ... and {} more", cells.len() - SHOWN));
    }
    s
}
