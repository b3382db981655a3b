use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the simulator core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid dimensions, rates, counts or other configuration values.
    Config(String),
    /// Two parameter trees or matrices that must agree in shape do not.
    Shape(String),
    /// Malformed training or evaluation data (e.g. label out of range).
    Data(String),
    /// A dropout mapping does not fit the architecture it is applied to.
    Mapping(String),
    /// A federated round could not be completed.
    Round(String),
    /// The client has no local data and is skipped for the round.
    EmptyClient(usize),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Mapping(msg) => write!(f, "mapping error: {msg}"),
            Error::Round(msg) => write!(f, "round error: {msg}"),
            Error::EmptyClient(k) => write!(f, "client {k} has no data"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
