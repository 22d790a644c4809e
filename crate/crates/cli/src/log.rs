//! Stderr logging. `MANNING_PC_LOG` selects `quiet`, `warn`, `info`
//! (default) or `debug`.

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Quiet,
    Warn,
    Info,
    Debug,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        match std::env::var("MANNING_PC_LOG")
            .unwrap_or_default()
            .to_ascii_lowercase()
            .as_str()
        {
            "quiet" | "off" | "error" => Level::Quiet,
            "warn" => Level::Warn,
            "debug" | "trace" => Level::Debug,
            _ => Level::Info,
        }
    })
}

pub fn warn(msg: impl AsRef<str>) {
    if level() >= Level::Warn {
        eprintln!("warning: {}", msg.as_ref());
    }
}

pub fn info(msg: impl AsRef<str>) {
    if level() >= Level::Info {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn debug(msg: impl AsRef<str>) {
    if level() >= Level::Debug {
        eprintln!("debug: {}", msg.as_ref());
    }
}
