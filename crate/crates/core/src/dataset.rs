//! JSONL ingestion and persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::schema::{Dialogue, EmotionSchema};

/// Loads one dialogue per line and validates every utterance against `schema`.
/// Blank lines are skipped; file order is preserved.
pub fn load_dialogues(path: &Path, schema: &EmotionSchema) -> Result<Vec<Dialogue>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingIntermediate(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_dialogues(BufReader::new(file), path, schema)
}

pub fn parse_dialogues(
    reader: impl BufRead,
    path: &Path,
    schema: &EmotionSchema,
) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue: Dialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let dialogue = dialogue.validate(schema)?;
        if !ids.insert(dialogue.dialogue_id.clone()) {
            return Err(Error::Data(format!(
                "duplicate dialogue_id `{}` at line {}",
                dialogue.dialogue_id,
                i + 1
            )));
        }
        out.push(dialogue);
    }
    Ok(out)
}

pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    write_jsonl(path, dialogues)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingIntermediate(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingIntermediate(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> EmotionSchema {
        EmotionSchema::new(["pos", "neg"]).unwrap()
    }

    const TWO: &str = r#"{"dialogue_id":"d1","utterances":[{"id":"u1","speaker":"A","text":"hi","vanilla_probs":[0.3,0.7],"dims":{"v":1,"a":2,"d":3},"label":1},{"id":"u2","speaker":"B","text":"yo","vanilla_probs":[1.0,0.0],"dims":{"v":1,"a":2,"d":3},"label":null}]}"#;

    #[test]
    fn one_dialogue_two_utterances() {
        let ds = parse_dialogues(TWO.as_bytes(), Path::new("mem"), &schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].utterances.len(), 2);
        assert_eq!(ds[0].utterances[0].gold_label, Some(1));
        assert_eq!(ds[0].utterances[1].gold_label, None);
    }

    #[test]
    fn empty_input_is_empty() {
        let ds = parse_dialogues("".as_bytes(), Path::new("mem"), &schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn bad_sum_reports_utterance() {
        let bad = TWO.replace("[0.3,0.7]", "[0.3,0.6]");
        let err = parse_dialogues(bad.as_bytes(), Path::new("mem"), &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vanilla_probs sum") && msg.contains("u1"), "{msg}");
    }

    #[test]
    fn parse_error_has_line_number() {
        let text = format!("{TWO}\n{{not json\n");
        match parse_dialogues(text.as_bytes(), Path::new("mem"), &schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_file_is_missing_intermediate() {
        let err = load_dialogues(Path::new("/nonexistent/x.jsonl"), &schema()).unwrap_err();
        assert!(matches!(err, Error::MissingIntermediate(_)));
    }
}
