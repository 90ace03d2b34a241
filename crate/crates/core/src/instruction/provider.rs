//! External language-model provider.
//!
//! The provider is any executable. It receives one JSON line on stdin,
//! `{"instruction": "...", "items": ["...", ...]}`, and must answer with a
//! single UTF-8 prompt line on stdout within the timeout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{encode_instruction, AffordanceTable, Instruction, InstructionError, Prompt, PromptSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmProvider {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Fall back to the built-in encoder when the provider fails.
    #[serde(default)]
    pub fallback: bool,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl LlmProvider {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout_ms: default_timeout_ms(),
            fallback: false,
        }
    }

    pub fn with_fallback(mut self, fallback: bool) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_ms = timeout.as_millis() as u64;
        self
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    instruction: &'a str,
    items: &'a [String],
}

fn query(instr: &Instruction, items: &[String], provider: &LlmProvider) -> Result<String, InstructionError> {
    let (program, args) = provider
        .command
        .split_first()
        .ok_or_else(|| InstructionError::ProviderTimeout("empty provider command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| InstructionError::ProviderTimeout(format!("{program}: {e}")))?;

    let mut request = serde_json::to_string(&ProviderRequest {
        instruction: instr.raw(),
        items,
    })
    .expect("request serializes");
    request.push('\n');
    if let Some(mut stdin) = child.stdin.take() {
        // A provider that exits without reading shows up as an empty reply.
        let _ = stdin.write_all(request.as_bytes());
    }

    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut line = String::new();
        let res = BufReader::new(stdout).read_line(&mut line).map(|_| line);
        let _ = tx.send(res);
    });

    let reply = rx.recv_timeout(Duration::from_millis(provider.timeout_ms));
    if child.try_wait().ok().flatten().is_none() {
        let _ = child.kill();
    }
    let _ = child.wait();
    match reply {
        Ok(Ok(line)) => {
            let line = line.trim();
            if line.is_empty() {
                Err(InstructionError::MalformedReply("empty reply line".into()))
            } else {
                Ok(line.to_string())
            }
        }
        Ok(Err(e)) => Err(InstructionError::MalformedReply(e.to_string())),
        Err(_) => Err(InstructionError::ProviderTimeout(format!(
            "no reply from {program} within {} ms",
            provider.timeout_ms
        ))),
    }
}

/// Asks the external provider for a prompt, optionally falling back to the
/// built-in encoder on any provider failure.
pub fn external_prompt(
    instr: &Instruction,
    provider: &LlmProvider,
    items: &[String],
    table: &AffordanceTable,
) -> Result<Prompt, InstructionError> {
    match query(instr, items, provider) {
        Ok(text) => Ok(Prompt {
            text,
            source: PromptSource::ExternalLlm,
            matched_item: None,
        }),
        Err(_) if provider.fallback => Ok(encode_instruction(instr, items, table)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> LlmProvider {
        LlmProvider::new(vec!["sh".into(), "-c".into(), script.into()])
    }

    fn items() -> Vec<String> {
        vec!["pink toy".into(), "blue backpack".into()]
    }

    #[test]
    fn echoes_first_reply_line() {
        let p = sh("read line; printf 'a photo of a pink toy\\nignored\\n'");
        let instr = Instruction::new("find a pink toy").unwrap();
        let out = external_prompt(&instr, &p, &items(), &AffordanceTable::default()).unwrap();
        assert_eq!(out.text, "a photo of a pink toy");
        assert_eq!(out.source, PromptSource::ExternalLlm);
    }

    #[test]
    fn provider_receives_json_request() {
        // Reply with the item list the provider was sent.
        let p = sh("read line; echo \"$line\"");
        let instr = Instruction::new("find a pink toy").unwrap();
        let out = external_prompt(&instr, &p, &items(), &AffordanceTable::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.text).unwrap();
        assert_eq!(v["instruction"], "find a pink toy");
        assert_eq!(v["items"][1], "blue backpack");
    }

    #[test]
    fn empty_reply_falls_back_when_enabled() {
        let instr = Instruction::new("find a pink toy").unwrap();
        let strict = sh("read line; echo ''");
        assert!(matches!(
            external_prompt(&instr, &strict, &items(), &AffordanceTable::default()),
            Err(InstructionError::MalformedReply(_))
        ));
        let lenient = strict.with_fallback(true);
        let out = external_prompt(&instr, &lenient, &items(), &AffordanceTable::default()).unwrap();
        assert_eq!(out.source, PromptSource::Template);
        assert_eq!(out.text, "a photo of a pink toy");
    }

    #[test]
    fn unreachable_provider_is_a_timeout() {
        let p = LlmProvider::new(vec!["/nonexistent/provider-binary".into()]);
        let instr = Instruction::new("find a pink toy").unwrap();
        assert!(matches!(
            external_prompt(&instr, &p, &items(), &AffordanceTable::default()),
            Err(InstructionError::ProviderTimeout(_))
        ));
    }

    #[test]
    fn slow_provider_times_out() {
        let p = sh("sleep 5; echo late").with_timeout(Duration::from_millis(200));
        let instr = Instruction::new("find a pink toy").unwrap();
        let start = std::time::Instant::now();
        assert!(matches!(
            external_prompt(&instr, &p, &items(), &AffordanceTable::default()),
            Err(InstructionError::ProviderTimeout(_))
        ));
        assert!(start.elapsed() < Duration::from_secs(3));
    }
}
