//! Exit-code contract: 2 input error, 3 data error, 4 compatibility error.

use std::fmt::Display;

pub const INPUT: u8 = 2;
pub const DATA: u8 = 3;
pub const COMPAT: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

pub fn fail(code: u8, msg: impl Display) -> Failure {
    Failure { code, error: anyhow::anyhow!("{msg}") }
}

pub trait ExitContext<T> {
    fn or_exit(self, code: u8, ctx: impl Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for std::result::Result<T, E> {
    fn or_exit(self, code: u8, ctx: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure { code, error: e.into().context(ctx.to_string()) })
    }
}
