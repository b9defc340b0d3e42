use alloc::string::String;

/// Errors raised by the core algorithms. Each variant names the module whose
/// contract was violated so callers can surface module-qualified messages.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("seqcore: {0}")]
    Sequence(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("quantizer: {0}")]
    Quantizer(String),
    #[error("neural: {0}")]
    Neural(String),
    #[error("mlm: {0}")]
    Mlm(String),
    #[error("corrector: {0}")]
    Corrector(String),
    #[error("phonemap: {0}")]
    PhoneMap(String),
    #[error("adapt: {0}")]
    Adapt(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
