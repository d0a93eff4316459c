//! Shared helpers for the CLI integration tests: a 10-example toy
//! experiment whose replay fixtures are built by recording a scripted
//! transport.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use kaze_core::config::Config;
use kaze_core::evaluation::{run_experiment, EvalReport};
use kaze_core::gateway::{CompletionRequest, Gateway, GatewayError, ScriptedTransport};
use kaze_core::templates::{ANSWER_TRIGGER, SELF_DEBIAS_REVISION};
use kaze_core::types::Role;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kaze"))
}

pub const TOY_CONFIG: &str = r#"
[experiment]
models = ["model-a"]
strategies = ["zero-cot", "self-debias", "goal-based"]
seed = 42

[backend]
kind = "replay"
fixture_path = "fixtures.jsonl"
max_concurrency = 4

[[tasks]]
id = "intent"
question = "Classify the given tweet into one of the two given categories."
labels = [
  { name = "Help-seeking", definition = "Tweets requesting rescue, information, or services." },
  { name = "Help-offering", definition = "Tweets offering services, shelter, or information to others." },
]

[[datasets]]
id = "toy"
task = "intent"
path = "data.jsonl"
format = "jsonl"
remap = "none"
language = "en"
event = "flood"
"#;

pub fn gold_of(i: usize) -> &'static str {
    if i.is_multiple_of(2) {
        "Help-seeking"
    } else {
        "Help-offering"
    }
}

pub fn flip(label: &str) -> &'static str {
    if label == "Help-seeking" {
        "Help-offering"
    } else {
        "Help-seeking"
    }
}

pub fn example_index(text: &str) -> usize {
    text.split("tweet number ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|tok| tok.parse().ok())
        .expect("task prompt embeds the example index")
}

/// Scripted model: answers gold everywhere, except Zero-CoT under the
/// reversed label order, where examples 0 and 1 get flipped answers. This
/// builds the order-sensitive baseline the bias criteria need.
pub fn toy_script(req: &CompletionRequest) -> Result<String, GatewayError> {
    let last = req.messages.last().unwrap();

    let task_msg = || {
        req.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User && m.content.starts_with("Question: Classify"))
            .expect("conversation contains the task prompt")
    };
    let answer_for = |flip_on_reversed: bool| {
        let content = &task_msg().content;
        let i = example_index(content);
        let seeking = content.find("\nHelp-seeking:").unwrap();
        let offering = content.find("\nHelp-offering:").unwrap();
        let identity_order = seeking < offering;
        let gold = gold_of(i);
        if flip_on_reversed && !identity_order && i < 2 {
            flip(gold).to_string()
        } else {
            gold.to_string()
        }
    };

    if last.role == Role::Assistant && last.content.ends_with(ANSWER_TRIGGER) {
        let hinted_goal = task_msg().content.contains("about the user's goal");
        return Ok(answer_for(!hinted_goal));
    }
    if last.role == Role::User && last.content == SELF_DEBIAS_REVISION {
        return Ok(answer_for(false));
    }
    if last.content.starts_with("Question: What is the goal")
        || last.content.starts_with("Question: What is the summary")
    {
        let i = example_index(&last.content);
        return Ok(format!(
            "The user in tweet number {i} wants to help the flood response."
        ));
    }
    Ok("Thinking through the tweet step by step.".to_string())
}

/// Writes the toy dataset + config into a tempdir and records the fixture
/// file by running the full experiment once against the scripted
/// transport. Reports of the recording run land in `record_out/`.
pub fn build_toy_replay_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::new();
    for i in 0..10 {
        data.push_str(&format!(
            "{{\"id\":\"ex{i}\",\"text\":\"tweet number {i} about the flood\",\"label\":\"{}\"}}\n",
            gold_of(i)
        ));
    }
    std::fs::write(dir.path().join("data.jsonl"), data).unwrap();
    std::fs::write(dir.path().join("config.toml"), TOY_CONFIG).unwrap();

    let config = Config::load(&dir.path().join("config.toml")).unwrap();
    let plan = config.to_plan().unwrap();
    let recorder = Gateway::record(
        ScriptedTransport::new(toy_script),
        &dir.path().join("fixtures.jsonl"),
    )
    .unwrap();
    let reports = run_experiment(&plan, &recorder, &dir.path().join("record_out")).unwrap();
    kaze_cli::write_reports(&dir.path().join("record_out"), &reports).unwrap();
    dir
}

pub fn read_reports(out_dir: &Path) -> Vec<EvalReport> {
    let text = std::fs::read_to_string(out_dir.join("reports.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
