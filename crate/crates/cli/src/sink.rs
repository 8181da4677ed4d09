//! Publish targets for `tune`.
//!
//! No sink talks to a live directory server. The LDIF sink writes change
//! records an operator can apply with `ldapmodify`; the webhook sink posts
//! one JSON document per publish, at most once, with a 10 second timeout.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use idletune_core::{Publication, Publisher};
use serde::Serialize;

use crate::error::CliError;

pub const WEBHOOK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkSpec {
    Stdout,
    File(PathBuf),
    Ldif(PathBuf),
    Webhook(String),
}

impl FromStr for SinkSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| CliError::Usage(format!("--sink {s:?}: {m}"));
        if s == "stdout" {
            return Ok(SinkSpec::Stdout);
        }
        let (kind, target) = s
            .split_once(':')
            .ok_or_else(|| bad("expected stdout, file:<path>, ldif:<path> or webhook:<url>"))?;
        if target.is_empty() {
            return Err(bad("empty target"));
        }
        match kind {
            "file" => Ok(SinkSpec::File(target.into())),
            "ldif" => Ok(SinkSpec::Ldif(target.into())),
            "webhook" => {
                validate_url(target).map_err(|m| bad(&m))?;
                Ok(SinkSpec::Webhook(target.to_owned()))
            }
            _ => Err(bad("unknown sink kind")),
        }
    }
}

fn validate_url(url: &str) -> Result<(), String> {
    let uri: ureq::http::Uri = url.parse().map_err(|e| format!("malformed URL: {e}"))?;
    match uri.scheme_str() {
        Some("http") | Some("https") => {}
        _ => return Err("URL scheme must be http or https".into()),
    }
    if uri.host().is_none_or(str::is_empty) {
        return Err("URL has no host".into());
    }
    Ok(())
}

/// Idle timeout rounded up to whole seconds, as the directory stores it.
pub fn directory_timeout_secs(timeout_s: f64) -> u64 {
    timeout_s.ceil().max(1.0) as u64
}

/// LDIF change record setting `nsslapd-idletimeout`.
pub fn ldif_record(timeout_s: f64) -> String {
    format!(
        "dn: cn=config\nchangetype: modify\nreplace: nsslapd-idletimeout\nnsslapd-idletimeout: {}\n",
        directory_timeout_secs(timeout_s)
    )
}

#[derive(Serialize)]
struct PublishLine<'a> {
    publish: &'a Publication,
}

/// JSON line describing one publish.
pub fn publish_line(publication: &Publication) -> String {
    serde_json::to_string(&PublishLine { publish: publication }).expect("publication serializes")
}

pub enum Sink {
    Stdout,
    File(BufWriter<File>),
    Ldif { out: BufWriter<File>, records: u64 },
    Webhook { agent: ureq::Agent, url: String },
}

impl Sink {
    /// Opens the target. File targets are truncated here so an unwritable
    /// path fails before any window is processed.
    pub fn open(spec: &SinkSpec) -> Result<Self, CliError> {
        let create = |path: &PathBuf| {
            File::create(path)
                .map(BufWriter::new)
                .map_err(|e| CliError::Usage(format!("cannot write sink {}: {e}", path.display())))
        };
        Ok(match spec {
            SinkSpec::Stdout => Sink::Stdout,
            SinkSpec::File(path) => Sink::File(create(path)?),
            SinkSpec::Ldif(path) => Sink::Ldif {
                out: create(path)?,
                records: 0,
            },
            SinkSpec::Webhook(url) => {
                let config = ureq::Agent::config_builder()
                    .timeout_global(Some(WEBHOOK_TIMEOUT))
                    .build();
                Sink::Webhook {
                    agent: ureq::Agent::new_with_config(config),
                    url: url.clone(),
                }
            }
        })
    }

    fn write(&mut self, publication: &Publication) -> io::Result<()> {
        match self {
            Sink::Stdout => {
                let mut out = io::stdout().lock();
                writeln!(out, "{}", publish_line(publication))?;
                out.flush()
            }
            Sink::File(out) => {
                writeln!(out, "{}", publish_line(publication))?;
                out.flush()
            }
            Sink::Ldif { out, records } => {
                if *records > 0 {
                    writeln!(out)?;
                }
                out.write_all(ldif_record(publication.timeout_s).as_bytes())?;
                *records += 1;
                out.flush()
            }
            Sink::Webhook { agent, url } => agent
                .post(url.as_str())
                .header("content-type", "application/json")
                .send(serde_json::to_string(publication).expect("publication serializes"))
                .map(drop)
                .map_err(io::Error::other),
        }
    }
}

impl Publisher for Sink {
    fn publish(&mut self, publication: &Publication) -> Result<(), String> {
        self.write(publication).map_err(|e| e.to_string())
    }
}
