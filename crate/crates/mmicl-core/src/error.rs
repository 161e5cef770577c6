//! Crate-wide error type. Variants are tagged by subsystem so the CLI can
//! print module-qualified context without extra wrapping.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    Vocab(String),
    Quantize(String),
    Prompt(String),
    /// Model emitted fewer target tokens than the task needs.
    IncompleteOutput { got: usize, need: usize },
    /// Malformed token frame; position is the offset within the parsed span.
    Parse { position: usize, message: String },
    Model(String),
    Train(String),
    NonFiniteGradient { param: String },
    Data(String),
    InsufficientPool { class: String, need: usize, have: usize },
    Eval(String),
    Config(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Vocab(m) => write!(f, "vocab: {m}"),
            Error::Quantize(m) => write!(f, "quantizers: {m}"),
            Error::Prompt(m) => write!(f, "prompts: {m}"),
            Error::IncompleteOutput { got, need } => {
                write!(f, "prompts: incomplete output, got {got} of {need} target tokens")
            }
            Error::Parse { position, message } => {
                write!(f, "prompts: parse error at token {position}: {message}")
            }
            Error::Model(m) => write!(f, "model: {m}"),
            Error::Train(m) => write!(f, "training: {m}"),
            Error::NonFiniteGradient { param } => {
                write!(f, "training: non-finite gradient in parameter '{param}'")
            }
            Error::Data(m) => write!(f, "synthdata: {m}"),
            Error::InsufficientPool { class, need, have } => write!(
                f,
                "synthdata: pool for class '{class}' has {have} entries, need {need}"
            ),
            Error::Eval(m) => write!(f, "eval: {m}"),
            Error::Config(m) => write!(f, "config: {m}"),
            Error::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
