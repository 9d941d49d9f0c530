// Records mock completions into a response cache, then serves the same
// requests from the cache alone. An unrecorded request is a replay miss.

use std::collections::HashMap;
use std::sync::Arc;

use erc_fusion::config::PipelineConfig;
use erc_fusion::gateway::{ChatBackend, DecodingParams, Gateway, MockBackend, MockSettings, RequestSalt, ResponseCache};
use erc_fusion::prompter::ChatPrompt;
use erc_fusion::{Error, Result};

const WINDOW: &str = "<sample key=\"d#u0\">\nspeaker: A\ntext: We won!\npreliminary: happy=0.5 excited=0.4 neutral=0.1\n</sample>\n";

pub fn run_example() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("erc-fusion-replay-{}", std::process::id()));
    let cfg = PipelineConfig::default();
    let params = DecodingParams {
        model: cfg.llm.model.clone(),
        temperature: cfg.llm.temperature,
    };
    let mock = MockBackend::new(
        MockSettings::from_config(&cfg),
        Arc::new(HashMap::from([("d#u0".to_string(), 1)])),
    );
    let cache = ResponseCache::open(&dir, &mock.id())?;
    let live = Gateway::new(Box::new(mock), Some(cache), params.clone(), 4);
    let prompt = ChatPrompt {
        system: "Adjust the preliminary predictions.".into(),
        user: WINDOW.into(),
    };
    let salts = [RequestSalt { replica: 0, attempt: 1 }, RequestSalt { replica: 1, attempt: 1 }];
    let recorded: Vec<String> = salts
        .iter()
        .map(|&s| live.complete(&prompt, s).map(|e| e.response))
        .collect::<Result<_>>()?;

    let replay = Gateway::replay(ResponseCache::open_existing(&dir)?, params);
    for (salt, first) in salts.iter().zip(&recorded) {
        let again = replay.complete(&prompt, *salt)?;
        println!("replica {} identical: {}  {}", salt.replica, &again.response == first, again.response.trim());
    }
    match replay.complete(&prompt, RequestSalt { replica: 0, attempt: 2 }) {
        Err(Error::ReplayMiss(hash)) => println!("attempt 2 was never recorded: miss on {}", &hash[..12]),
        other => println!("unexpected: {other:?}"),
    }
    println!("cache at {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
