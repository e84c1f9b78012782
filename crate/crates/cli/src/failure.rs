use std::fmt::Display;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(msg: impl Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn context(mut self, ctx: impl Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

fn core_is_config(e: &rfn_core::Error) -> bool {
    matches!(e, rfn_core::Error::InvalidConfig(_) | rfn_core::Error::Parse { .. })
}

impl From<rfn_core::Error> for Failure {
    fn from(e: rfn_core::Error) -> Self {
        Self {
            code: if core_is_config(&e) { EXIT_CONFIG } else { EXIT_RUNTIME },
            error: e.into(),
        }
    }
}

impl From<rfn_model::Error> for Failure {
    fn from(e: rfn_model::Error) -> Self {
        Self {
            code: if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME },
            error: e.into(),
        }
    }
}

impl From<image::ImageError> for Failure {
    fn from(e: image::ImageError) -> Self {
        Self {
            code: EXIT_RUNTIME,
            error: e.into(),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
