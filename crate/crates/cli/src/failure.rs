/// An error with its process exit code: 1 for pipeline failures, 2 for usage and I/O.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    pub fn pipeline(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }
}

pub trait ResultExt<T> {
    /// Usage or I/O failure (exit 2).
    fn usage(self) -> Result<T, Failure>;
    /// Pipeline failure (exit 1).
    fn pipeline(self) -> Result<T, Failure>;
    /// Usage failure with context naming what was being read or written.
    fn usage_ctx(self, what: impl std::fmt::Display) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(Failure::usage)
    }

    fn pipeline(self) -> Result<T, Failure> {
        self.map_err(Failure::pipeline)
    }

    fn usage_ctx(self, what: impl std::fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(e.into().context(what.to_string())))
    }
}
