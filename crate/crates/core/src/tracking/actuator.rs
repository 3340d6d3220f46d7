//! The command seam toward servo/laser hardware drivers, which live out of
//! repo. The default transport writes line-delimited commands to an external
//! process's stdin:
//!
//! ```text
//! POSE <n_pan> <n_tilt>
//! LASER ON
//! LASER OFF
//! ```
//!
//! with normalized commands in [−1, 1].

use std::io::Write;
use std::process::{Child, ChildStdin, Command, Stdio};

/// Sink for normalized pose and laser commands.
pub trait Actuator {
    fn pose(&mut self, n_pan: f64, n_tilt: f64) -> std::io::Result<()>;
    fn laser(&mut self, on: bool) -> std::io::Result<()>;
}

/// Writes the line protocol to a spawned driver process.
pub struct CommandActuator {
    child: Child,
    stdin: ChildStdin,
}

impl CommandActuator {
    pub fn spawn(command: &[String]) -> std::io::Result<Self> {
        let Some((exe, args)) = command.split_first() else {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "actuator command is empty",
            ));
        };
        let mut child = Command::new(exe)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::inherit())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin was piped");
        Ok(Self { child, stdin })
    }
}

impl Actuator for CommandActuator {
    fn pose(&mut self, n_pan: f64, n_tilt: f64) -> std::io::Result<()> {
        writeln!(self.stdin, "POSE {n_pan} {n_tilt}")?;
        self.stdin.flush()
    }

    fn laser(&mut self, on: bool) -> std::io::Result<()> {
        writeln!(self.stdin, "LASER {}", if on { "ON" } else { "OFF" })?;
        self.stdin.flush()
    }
}

impl Drop for CommandActuator {
    fn drop(&mut self) {
        // Closing stdin signals the driver to exit; reap without blocking
        // forever by giving it a kill if it ignores EOF.
        let _ = self.stdin.flush();
        std::thread::sleep(std::time::Duration::from_millis(20));
        match self.child.try_wait() {
            Ok(Some(_)) => {}
            _ => {
                let _ = self.child.kill();
                let _ = self.child.wait();
            }
        }
    }
}

/// Discards all commands; used when no hardware is attached.
#[derive(Debug, Default)]
pub struct NullActuator;

impl Actuator for NullActuator {
    fn pose(&mut self, _n_pan: f64, _n_tilt: f64) -> std::io::Result<()> {
        Ok(())
    }

    fn laser(&mut self, _on: bool) -> std::io::Result<()> {
        Ok(())
    }
}
