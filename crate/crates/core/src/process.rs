//! External command invocation shared by the upscaler and detector adapters.
//!
//! Both protocols use the same contract: the command receives one directory
//! path as its final argument and must exit 0.

use std::path::Path;
use std::process::Command;

use crate::error::{Error, Result};

/// A program plus fixed leading arguments; the exchange or tiles directory is
/// appended as the sole trailing argument on each invocation.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommand {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Split a command line on whitespace. Arguments with embedded spaces
    /// are not supported by this form; construct with [`ExternalCommand::new`]
    /// instead when they are needed.
    pub fn parse(command_line: &str) -> Result<Self> {
        let mut parts = command_line.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or(Error::EmptyCommand)?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }

    pub fn display(&self) -> String {
        let mut s = self.program.clone();
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s
    }

    /// Run the command with `dir` appended, capturing output. Nonzero exit is
    /// an error carrying the captured stderr.
    pub fn run_on_dir(&self, dir: &Path) -> Result<()> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(dir)
            .output()
            .map_err(|source| Error::io(&self.program, source))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let stderr = if stderr.trim().is_empty() {
                String::new()
            } else {
                format!(": {}", stderr.trim())
            };
            return Err(Error::CommandFailed {
                command: self.display(),
                status: output.status.to_string(),
                stderr,
            });
        }
        Ok(())
    }
}
