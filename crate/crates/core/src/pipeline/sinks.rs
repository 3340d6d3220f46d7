//! Alert sinks: side channels fired on enter/clear/fault transitions. Sink
//! failures are recorded, never fatal to the loop.

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::events::{SinkKind, SinkResult};

/// Timeout for one external sink command.
pub const SINK_TIMEOUT: Duration = Duration::from_millis(1000);

/// Target context handed to sinks alongside the transition kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SinkContext {
    pub frame_id: u64,
    /// Center of the selected target in pixels, when one exists.
    pub target_center: Option<(f64, f64)>,
}

pub trait AlertSink {
    fn name(&self) -> &str;
    /// Fires once; errors are reported, not propagated.
    fn fire(&mut self, kind: SinkKind, ctx: &SinkContext) -> Result<(), String>;
}

/// Runs every sink and collects per-sink outcomes.
pub fn fire_sinks(
    sinks: &mut [Box<dyn AlertSink>],
    kind: SinkKind,
    ctx: &SinkContext,
) -> Vec<SinkResult> {
    sinks
        .iter_mut()
        .map(|sink| match sink.fire(kind, ctx) {
            Ok(()) => SinkResult {
                sink: sink.name().to_string(),
                kind,
                ok: true,
                detail: None,
            },
            Err(detail) => {
                log::warn!("sink {} failed on {}: {detail}", sink.name(), kind.token());
                SinkResult {
                    sink: sink.name().to_string(),
                    kind,
                    ok: false,
                    detail: Some(detail),
                }
            }
        })
        .collect()
}

/// Writes one log line per transition through the `log` facade.
#[derive(Debug, Default)]
pub struct LogSink;

impl AlertSink for LogSink {
    fn name(&self) -> &str {
        "log"
    }

    fn fire(&mut self, kind: SinkKind, ctx: &SinkContext) -> Result<(), String> {
        match ctx.target_center {
            Some((u, v)) => log::info!(
                "alert {} frame {} target ({u:.1}, {v:.1})",
                kind.token(),
                ctx.frame_id
            ),
            None => log::info!("alert {} frame {}", kind.token(), ctx.frame_id),
        }
        Ok(())
    }
}

/// Invokes an external command per transition with
/// argv = [command..., kind, frame_id, u, v]; "-" stands in for the center
/// when no target exists. The child gets one second before it is killed.
#[derive(Debug, Clone)]
pub struct CommandSink {
    command: Vec<String>,
}

impl CommandSink {
    pub fn new(command: Vec<String>) -> Result<Self, String> {
        if command.is_empty() {
            return Err("command sink needs a non-empty command".into());
        }
        Ok(Self { command })
    }
}

impl AlertSink for CommandSink {
    fn name(&self) -> &str {
        "command"
    }

    fn fire(&mut self, kind: SinkKind, ctx: &SinkContext) -> Result<(), String> {
        let (u, v) = match ctx.target_center {
            Some((u, v)) => (u.to_string(), v.to_string()),
            None => ("-".to_string(), "-".to_string()),
        };
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(kind.token())
            .arg(ctx.frame_id.to_string())
            .arg(u)
            .arg(v)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.command[0]))?;
        let start = Instant::now();
        loop {
            match child.try_wait() {
                Ok(Some(status)) if status.success() => return Ok(()),
                Ok(Some(status)) => return Err(format!("exit status {status}")),
                Ok(None) => {
                    if start.elapsed() >= SINK_TIMEOUT {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(format!("timed out after {SINK_TIMEOUT:?}"));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(format!("wait: {e}")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(frame_id: u64, center: Option<(f64, f64)>) -> SinkContext {
        SinkContext {
            frame_id,
            target_center: center,
        }
    }

    #[test]
    fn command_sink_receives_the_argv_contract() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fired.txt");
        let mut sink = CommandSink::new(vec![
            "/bin/sh".into(),
            "-c".into(),
            format!("printf '%s %s %s %s' \"$1\" \"$2\" \"$3\" \"$4\" > {}", out.display()),
            "sink".into(),
        ])
        .unwrap();
        sink.fire(SinkKind::Enter, &ctx(7, Some((409.5, 210.0))))
            .unwrap();
        assert_eq!(
            std::fs::read_to_string(&out).unwrap(),
            "enter 7 409.5 210"
        );

        sink.fire(SinkKind::Clear, &ctx(9, None)).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "clear 9 - -");
    }

    #[test]
    fn failures_are_reported_not_fatal() {
        let mut sinks: Vec<Box<dyn AlertSink>> = vec![
            Box::new(CommandSink::new(vec!["false".into()]).unwrap()),
            Box::new(LogSink),
            Box::new(CommandSink::new(vec!["/no/such/binary-zzz".into()]).unwrap()),
        ];
        let results = fire_sinks(&mut sinks, SinkKind::Enter, &ctx(1, None));
        assert_eq!(results.len(), 3);
        assert!(!results[0].ok && results[0].detail.is_some());
        assert!(results[1].ok);
        assert!(!results[2].ok);
    }

    #[test]
    fn slow_commands_are_killed_at_the_deadline() {
        // The event args land in $0..; the script ignores them and hangs.
        let mut sink =
            CommandSink::new(vec!["sh".into(), "-c".into(), "sleep 30".into()]).unwrap();
        let start = Instant::now();
        let err = sink.fire(SinkKind::Fault, &ctx(0, None)).unwrap_err();
        assert!(err.contains("timed out"), "{err}");
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn empty_command_is_rejected() {
        assert!(CommandSink::new(vec![]).is_err());
    }
}
