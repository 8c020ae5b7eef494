/// Process exit codes.
pub const RUNTIME: u8 = 1;
pub const BAD_INPUT: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn runtime(e: impl ToString) -> Self {
        Self { code: RUNTIME, message: e.to_string() }
    }

    pub fn bad_input(e: impl ToString) -> Self {
        Self { code: BAD_INPUT, message: e.to_string() }
    }
}
