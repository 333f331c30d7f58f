//! Dataset ingestion (JSONL) and the task file written by `gen-task`.
//!
//! A JSONL dataset starts with a header line naming the answer set, followed
//! by one instance per line:
//!
//! ```text
//! {"answers": ["negative", "positive"]}
//! {"id": "r1", "input": "a fine film", "label": "positive"}
//! {"id": "r2", "features": [0.1, -2.0]}
//! ```
//!
//! Labels are optional, but either every instance carries one or none does.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use jointinf_core::synthetic::{SyntheticModel, SyntheticModelParams, SyntheticTaskConfig};
use jointinf_core::{AnswerSet, Instance, Payload, TaskDataset};
use jointinf_remote::PromptTemplate;

use crate::error::{HarnessError, IoContext, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    #[serde(default)]
    input: Option<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(default)]
    label: Option<String>,
}

/// Reads a JSONL dataset and checks that `template_name` names a template
/// whose rendered answers parse back to themselves over this answer set.
pub fn load_dataset(path: &Path, template_name: &str) -> Result<TaskDataset> {
    let ds = read_jsonl(path)?;
    let template = PromptTemplate::builtin(template_name)?;
    template.check_round_trip(&ds.answer_set)?;
    Ok(ds)
}

/// Parses the JSONL format without any template check.
pub fn read_jsonl(path: &Path) -> Result<TaskDataset> {
    let file = File::open(path).at(path)?;
    let err = |line: usize, message: String| HarnessError::Dataset { path: path.to_path_buf(), line, message };

    let mut answers: Option<AnswerSet> = None;
    let mut instances = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(answer_set) = &answers else {
            let header: Header = serde_json::from_str(&line)
                .map_err(|e| err(lineno, format!("expected a header {{\"answers\": [...]}}: {e}")))?;
            answers = Some(AnswerSet::from_labels(&header.answers).map_err(|e| err(lineno, e.to_string()))?);
            continue;
        };
        let rec: Line = serde_json::from_str(&line).map_err(|e| err(lineno, format!("malformed line: {e}")))?;
        let payload = match (rec.input, rec.features) {
            (Some(text), None) => Payload::Text(text),
            (None, Some(f)) => Payload::Features(f),
            _ => return Err(err(lineno, "exactly one of `input` and `features` is required".into())),
        };
        if !seen.insert(rec.id.clone()) {
            return Err(err(lineno, format!("duplicate id `{}`", rec.id)));
        }
        let label = match rec.label {
            None => None,
            Some(l) => Some(answer_set.index_of(&l).ok_or_else(|| {
                err(lineno, format!("label `{l}` is not in the answer set {:?}", answer_set.labels().collect::<Vec<_>>()))
            })?),
        };
        if labels.first().is_some_and(|first: &Option<usize>| first.is_some() != label.is_some()) {
            return Err(err(lineno, "either every instance has a label or none does".into()));
        }
        let instance = Instance { id: rec.id, payload };
        instance.validate().map_err(|e| err(lineno, e.to_string()))?;
        instances.push(instance);
        labels.push(label);
    }
    let answer_set = answers.ok_or_else(|| err(0, "empty file".into()))?;
    let gold = if labels.iter().all(Option::is_some) && !labels.is_empty() {
        Some(labels.into_iter().flatten().collect())
    } else {
        None
    };
    Ok(TaskDataset::new(instances, answer_set, gold)?)
}

/// A self-contained task: the dataset plus, for synthetic tasks, the frozen
/// model and the generator settings that produced both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub dataset: TaskDataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<SyntheticModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticTaskConfig>,
}

impl TaskFile {
    pub fn from_synthetic(dataset: TaskDataset, model: &SyntheticModel, generator: Option<SyntheticTaskConfig>) -> Self {
        TaskFile { dataset, model: Some(model.params.clone()), generator }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let tf: TaskFile = serde_json::from_str(&text)?;
        tf.dataset.validate()?;
        Ok(tf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).at(path)
    }

    pub fn synthetic_model(&self) -> Result<Option<SyntheticModel>> {
        self.model.clone().map(SyntheticModel::new).transpose().map_err(Into::into)
    }
}
