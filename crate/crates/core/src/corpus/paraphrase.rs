//! Curated paraphrase banks and paraphrase sampling.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{action_template, canonical_text, is_placeholder};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Alternative phrasings for action templates (`"pour O1 into O2"`) and
/// object names. Every list contains its own key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseBank {
    #[serde(default)]
    pub actions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub objects: BTreeMap<String, Vec<String>>,
}

fn normalize(map: BTreeMap<String, Vec<String>>) -> BTreeMap<String, Vec<String>> {
    map.into_iter()
        .map(|(k, vs)| {
            let key = canonical_text(&k);
            let mut out = vec![key.clone()];
            for v in vs {
                let v = v.split_whitespace().collect::<Vec<_>>().join(" ");
                if !v.is_empty() && canonical_text(&v) != key && !out.contains(&v) {
                    out.push(v);
                }
            }
            (key, out)
        })
        .collect()
}

impl ParaphraseBank {
    /// Build a bank, canonicalizing keys and inserting each key into its own list.
    pub fn new(actions: BTreeMap<String, Vec<String>>, objects: BTreeMap<String, Vec<String>>) -> Self {
        ParaphraseBank {
            actions: normalize(actions),
            objects: normalize(objects),
        }
    }

    /// Bank whose only entries are the canonical forms of the given actions.
    pub fn singleton<'a>(actions: impl IntoIterator<Item = (&'a str, &'a [String])>) -> Self {
        let mut a = BTreeMap::new();
        let mut o = BTreeMap::new();
        for (text, slots) in actions {
            a.insert(action_template(text, slots), Vec::new());
            for s in slots {
                o.insert(canonical_text(s), Vec::new());
            }
        }
        ParaphraseBank::new(a, o)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let raw: ParaphraseBank = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(ParaphraseBank::new(raw.actions, raw.objects))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    /// Names of template and object keys missing for this action.
    pub fn missing_keys(&self, action_text: &str, object_slots: &[String]) -> Vec<String> {
        let mut missing = Vec::new();
        let template = action_template(action_text, object_slots);
        if !self.actions.contains_key(&template) {
            missing.push(format!("template `{template}`"));
        }
        for s in object_slots {
            let k = canonical_text(s);
            if !self.objects.contains_key(&k) {
                missing.push(format!("object `{k}`"));
            }
        }
        missing
    }
}

fn pick<'a>(list: &'a [String], rng: &mut Rng) -> &'a str {
    &list[rng.random_range(0..list.len())]
}

/// Sample a template variant and one variant per object independently, and
/// instantiate the template.
pub fn sample_paraphrase(
    bank: &ParaphraseBank,
    action_text: &str,
    object_slots: &[String],
    rng: &mut Rng,
) -> Result<String> {
    let missing = bank.missing_keys(action_text, object_slots);
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "paraphrase bank is missing {}",
            missing.join(", ")
        )));
    }
    let template = pick(&bank.actions[&action_template(action_text, object_slots)], rng).to_string();
    let objects: Vec<&str> = object_slots
        .iter()
        .map(|s| pick(&bank.objects[&canonical_text(s)], rng))
        .collect();
    let words: Vec<String> = template
        .split_whitespace()
        .map(|w| {
            if is_placeholder(w) {
                let i: usize = w[1..].parse().unwrap_or(0);
                if i >= 1 && i <= objects.len() {
                    return objects[i - 1].to_string();
                }
            }
            w.to_string()
        })
        .collect();
    Ok(words.join(" "))
}
