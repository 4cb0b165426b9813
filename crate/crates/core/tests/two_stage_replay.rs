//! Two-stage LLM baseline replayed from a recorded session.
//!
//! The session is recorded by the ignored `record_two_stage_session` test.
//! With `LLM_API_KEY` set it records against the configured endpoint;
//! otherwise a scripted model stands in.

use std::path::PathBuf;

use artirec::baselines::{llm_two_stage, TwoStageConfig};
use artirec::catalog::{load_library, Artifact, ArtifactLibrary};
use artirec::llm::{ChatModel, FnChat, HttpChatModel, LlmConfig, RecordingChat, ReplayChat};

const INTENT: &str = "send HTTP requests and retry on failure";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn session_library() -> ArtifactLibrary {
    let full = load_library(fixture("corpus20.jsonl")).unwrap();
    ArtifactLibrary::new(full.iter().take(10).cloned().collect::<Vec<Artifact>>()).unwrap()
}

fn config() -> TwoStageConfig {
    TwoStageConfig {
        subset_fraction: 0.3,
        final_k: 5,
        max_in_flight: 2,
    }
}

/// Stage 1 counts shared words; stage 2 lists candidates by id length.
fn scripted() -> Box<dyn ChatModel> {
    Box::new(FnChat(|prompt: &str| {
        let words = |s: &str| -> Vec<String> { s.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| w.len() > 3).map(String::from).collect() };
        if prompt.starts_with("Rate how well") {
            let artifact = prompt.lines().find(|l| l.starts_with("Artifact:")).unwrap_or("");
            let shared = words(INTENT).iter().filter(|w| words(artifact).contains(w)).count();
            Ok(format!("{}", (shared * 30).min(100)))
        } else {
            let mut ids: Vec<&str> = prompt
                .lines()
                .filter(|l| l.starts_with('<'))
                .filter_map(|l| l[1..].split(',').next())
                .collect();
            ids.sort_by_key(|id| (id.len(), id.to_string()));
            Ok(format!("[{}]", ids.join(", ")))
        }
    }))
}

#[test]
#[ignore = "writes the replay fixture"]
fn record_two_stage_session() {
    let inner: Box<dyn ChatModel> = match HttpChatModel::from_env(LlmConfig::default()) {
        Ok(live) => Box::new(live),
        Err(_) => scripted(),
    };
    let rec = RecordingChat::new(inner);
    let out = llm_two_stage(&session_library(), INTENT, &rec, &config());
    rec.save(fixture("two_stage_session.json")).unwrap();
    std::fs::write(fixture("two_stage_expected.json"), serde_json::to_string_pretty(&out.ids()).unwrap() + "\n").unwrap();
}

#[test]
fn replay_reproduces_recorded_ranking() {
    let replay = ReplayChat::load(fixture("two_stage_session.json")).unwrap();
    assert_eq!(replay.len(), 11, "ten stage-1 prompts and one stage-2 prompt");
    let expected: Vec<String> = serde_json::from_str(&std::fs::read_to_string(fixture("two_stage_expected.json")).unwrap()).unwrap();
    let out = llm_two_stage(&session_library(), INTENT, &replay, &config());
    assert_eq!(out.ids(), expected);
    assert!(out.reranked);
}

#[test]
fn missing_recordings_degrade_to_stage_one() {
    let out = llm_two_stage(&session_library(), INTENT, &ReplayChat::default(), &config());
    // every score defaults to 0, so the order is by id
    let mut ids: Vec<String> = session_library().iter().map(|a| a.id.clone()).collect();
    ids.sort();
    assert_eq!(out.ids(), ids[..5].to_vec());
    assert!(!out.reranked);
}
