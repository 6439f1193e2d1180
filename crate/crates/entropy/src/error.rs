use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("precision {0} outside the supported range [8, 24]")]
    InvalidPrecision(u32),
    #[error("tail mass {0} outside (0, 0.01]")]
    InvalidTailMass(f64),
    #[error("scale {scale} is below the floor {floor}")]
    ScaleBelowFloor { scale: f64, floor: f64 },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("symbol {symbol} outside [{min}, {max}] and the table has no escape")]
    SymbolOutOfRange { symbol: i32, min: i32, max: i32 },
    #[error("{symbols} symbols but {indexes} table indexes")]
    LengthMismatch { symbols: usize, indexes: usize },
    #[error("table index {index} out of range for {tables} tables")]
    TableIndexOutOfRange { index: u32, tables: usize },
    #[error("truncated stream")]
    Truncated,
    #[error("corrupted stream: {0}")]
    Corrupt(&'static str),
    #[error("{0} unread bytes after the last symbol")]
    TrailingData(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("a container holds at most 255 streams, got {0}")]
    TooManyStreams(usize),
    #[error("image dimensions must be positive, got {0}x{1}")]
    InvalidDimensions(u32, u32),
}

pub type Result<T, E = EntropyError> = std::result::Result<T, E>;
