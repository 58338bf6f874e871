use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Conversation, LabelMap, Utterance};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    speaker: String,
    text: String,
    label: String,
    #[serde(default)]
    planted_window: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConversation {
    id: String,
    utterances: Vec<RawUtterance>,
}

fn parse_line(line: &str, labels: &LabelMap) -> std::result::Result<Conversation, Error> {
    let raw: RawConversation =
        serde_json::from_str(line).map_err(|e| Error::Config(e.to_string()))?;
    if raw.utterances.is_empty() {
        return Err(Error::Config(format!("conversation {:?} has no utterances", raw.id)));
    }
    let mut utterances = Vec::with_capacity(raw.utterances.len());
    for (pos, u) in raw.utterances.into_iter().enumerate() {
        let label = labels
            .index_of(&u.label)
            .ok_or_else(|| Error::UnknownLabel(u.label.clone()))?;
        if let Some(w) = u.planted_window {
            if w > pos {
                return Err(Error::Config(format!(
                    "planted_window {w} exceeds position {pos}"
                )));
            }
        }
        utterances.push(Utterance {
            speaker: u.speaker,
            text: u.text,
            label,
            planted_window: u.planted_window,
        });
    }
    Ok(Conversation {
        id: raw.id,
        utterances,
    })
}

/// Reads one conversation per non-blank line.
pub fn load_corpus(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Vec<Conversation>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, labels) {
            Ok(c) => out.push(c),
            Err(Error::UnknownLabel(l)) => return Err(Error::UnknownLabel(l)),
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn save_corpus(convs: &[Conversation], labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in convs {
        let raw = RawConversation {
            id: c.id.clone(),
            utterances: c
                .utterances
                .iter()
                .map(|u| {
                    if u.label >= labels.len() {
                        return Err(Error::Index {
                            index: u.label,
                            len: labels.len(),
                        });
                    }
                    Ok(RawUtterance {
                        speaker: u.speaker.clone(),
                        text: u.text.clone(),
                        label: labels.name(u.label).to_string(),
                        planted_window: u.planted_window,
                    })
                })
                .collect::<Result<_>>()?,
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let map: LabelMap = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if map.labels.len() < 2 {
        return Err(Error::Config("label map needs at least two labels".into()));
    }
    Ok(map)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, labels)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
