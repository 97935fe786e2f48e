mod common;

use ela_core::agent::{AgentConfig, EntityLinkingAgent};
use ela_core::pipelines::{generate_trajectories, read_trajectories, write_trajectories, Checkpoint, RunOptions};

#[test]
fn checkpointed_run_resumes_without_new_calls() {
    let toy = common::toy();
    let data = common::dataset("toy/questions.jsonl");
    let agent = EntityLinkingAgent::new(AgentConfig::tool_use());
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions { workers: 3, checkpoint: Some(Checkpoint::new(dir.path().join("cp"))) };

    let first_backend = common::script("toy/script.json");
    let first = generate_trajectories(&data[..6], &agent, &first_backend, &toy.index, &options).unwrap();
    assert_eq!(first.len(), 6);

    let backend = common::script("toy/script.json");
    let all = generate_trajectories(&data, &agent, &backend, &toy.index, &options).unwrap();
    let ids: Vec<&str> = all.iter().map(|t| t.query.id.as_str()).collect();
    assert_eq!(ids, data.iter().map(|g| g.query.id.as_str()).collect::<Vec<_>>());
    // Only the four unfinished queries reach the backend, two calls each.
    assert_eq!(backend.call_count(), 8);
    assert_eq!(&all[..6], &first[..]);
    assert_eq!(all.iter().filter(|t| t.matched_gold).count(), 8);
}

#[test]
fn trajectory_file_round_trips() {
    let toy = common::toy();
    let data = common::dataset("toy/questions.jsonl");
    let agent = EntityLinkingAgent::new(AgentConfig::tool_use());
    let backend = common::script("toy/script.json");
    let options = RunOptions { workers: 1, checkpoint: None };
    let trajectories = generate_trajectories(&data, &agent, &backend, &toy.index, &options).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_trajectories(&path, &trajectories).unwrap();
    assert_eq!(read_trajectories(&path).unwrap(), trajectories);
}
