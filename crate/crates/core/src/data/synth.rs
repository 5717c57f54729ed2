//! Template grammar producing paired corpora in two formalisms: a bracketed
//! lisp-like form (task A) and a delimiter-based form (task B).
//!
//! Grammar files are TOML:
//!
//! ```toml
//! [entities]
//! song = { generate = 4000 }
//! city = { values = ["oslo", "lima"] }
//! artist = { file = "artists.txt" }
//!
//! [[template]]
//! name = "play_song_artist"
//! utterance = "play {song} by {artist}"
//! mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
//! mrl_b = "intent:play|song:{song}|artist:{artist}"
//! ```
//!
//! A `{slot}` names an entity list. Every slot in an MRL pattern must occur in
//! the utterance pattern.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::corpus::Example;
use crate::error::{Error, Result};

pub const TASK_A: &str = "mrl_a";
pub const TASK_B: &str = "mrl_b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySource {
    /// Number of pseudo-words to generate.
    #[serde(default)]
    pub generate: Option<usize>,
    #[serde(default)]
    pub values: Option<Vec<String>>,
    /// One entity per line, relative to the grammar file.
    #[serde(default)]
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    pub utterance: String,
    pub mrl_a: String,
    pub mrl_b: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Splits share no utterance.
    #[default]
    Utterance,
    /// Splits share no template.
    Template,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSpec {
    /// Zipf exponent of entity sampling.
    #[serde(default = "default_exponent")]
    pub zipf_exponent: f64,
    /// Fraction of task-B utterances that also occur in task A.
    #[serde(default)]
    pub overlap: f64,
    #[serde(default)]
    pub split: SplitMode,
    /// Seed for pseudo-word generation, independent of the corpus seed.
    #[serde(default)]
    pub entity_seed: u64,
    pub entities: BTreeMap<String, EntitySource>,
    #[serde(rename = "template")]
    pub templates: Vec<Template>,
}

fn default_exponent() -> f64 {
    1.0
}

/// A pattern element: a literal token or a slot reference.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(String),
}

fn parse_pattern(pattern: &str, delimited: bool) -> Vec<Piece> {
    let mut out = Vec::new();
    for tok in tokenize_formalism(pattern, delimited) {
        if let Some(name) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            out.push(Piece::Slot(name.to_string()));
        } else {
            out.push(Piece::Lit(tok));
        }
    }
    out
}

/// Whitespace tokens; for the delimited formalism `:` and `|` also split and
/// are kept as tokens.
pub fn tokenize_formalism(text: &str, delimited: bool) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if !delimited {
            out.push(word.to_string());
            continue;
        }
        let mut cur = String::new();
        for ch in word.chars() {
            if ch == ':' || ch == '|' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Clone, Debug)]
struct CompiledTemplate {
    name: String,
    utterance: Vec<Piece>,
    mrl: [Vec<Piece>; 2],
    slots: Vec<String>,
}

/// A grammar with its entity lists resolved.
#[derive(Clone, Debug)]
pub struct Grammar {
    pub spec: GrammarSpec,
    templates: Vec<CompiledTemplate>,
    entities: BTreeMap<String, Vec<String>>,
}

impl GrammarSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Grammar(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Grammar> {
        let text = std::fs::read_to_string(path)?;
        let spec = Self::from_toml(&text)?;
        spec.compile(path.parent())
    }

    /// Checks structure and copy-consistency.
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Grammar("no templates".into()));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Grammar(format!(
                "zipf_exponent must be positive, got {}",
                self.zipf_exponent
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Grammar(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        for (name, src) in &self.entities {
            let given = [src.generate.is_some(), src.values.is_some(), src.file.is_some()];
            if given.iter().filter(|g| **g).count() != 1 {
                return Err(Error::Grammar(format!(
                    "entity list `{name}` needs exactly one of generate, values, file"
                )));
            }
        }
        let mut names = HashSet::new();
        for t in &self.templates {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Grammar(format!("duplicate template name `{}`", t.name)));
            }
            let utt = parse_pattern(&t.utterance, false);
            let mut utt_slots = HashSet::new();
            for p in &utt {
                if let Piece::Slot(s) = p {
                    if !self.entities.contains_key(s) {
                        return Err(Error::Grammar(format!(
                            "template `{}`: unknown entity list `{s}`",
                            t.name
                        )));
                    }
                    if !utt_slots.insert(s.clone()) {
                        return Err(Error::Grammar(format!(
                            "template `{}`: slot `{s}` appears twice in the utterance",
                            t.name
                        )));
                    }
                }
            }
            for (label, pat, delim) in [("mrl_a", &t.mrl_a, false), ("mrl_b", &t.mrl_b, true)] {
                let pieces = parse_pattern(pat, delim);
                if pieces.is_empty() {
                    return Err(Error::Grammar(format!("template `{}`: empty {label}", t.name)));
                }
                for p in &pieces {
                    if let Piece::Slot(s) = p {
                        if !utt_slots.contains(s) {
                            return Err(Error::Grammar(format!(
                                "template `{}`: slot `{s}` in {label} is missing from the utterance",
                                t.name
                            )));
                        }
                    }
                }
            }
            if utt.is_empty() {
                return Err(Error::Grammar(format!("template `{}`: empty utterance", t.name)));
            }
        }
        Ok(())
    }

    /// Validates and resolves entity lists; `base` anchors relative entity files.
    pub fn compile(self, base: Option<&Path>) -> Result<Grammar> {
        self.validate()?;
        let templates: Vec<CompiledTemplate> = self
            .templates
            .iter()
            .map(|t| {
                let utterance = parse_pattern(&t.utterance, false);
                let slots = utterance
                    .iter()
                    .filter_map(|p| match p {
                        Piece::Slot(s) => Some(s.clone()),
                        Piece::Lit(_) => None,
                    })
                    .collect();
                CompiledTemplate {
                    name: t.name.clone(),
                    utterance,
                    mrl: [parse_pattern(&t.mrl_a, false), parse_pattern(&t.mrl_b, true)],
                    slots,
                }
            })
            .collect();
        let mut literals = BTreeSet::new();
        for t in &templates {
            for p in t.utterance.iter().chain(&t.mrl[0]).chain(&t.mrl[1]) {
                if let Piece::Lit(l) = p {
                    literals.insert(l.clone());
                }
            }
        }
        let mut entities = BTreeMap::new();
        let mut taken: HashSet<String> = literals.iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.entity_seed);
        for (name, src) in &self.entities {
            let list = if let Some(n) = src.generate {
                pseudo_words(n, &mut taken, &mut rng)
            } else if let Some(v) = &src.values {
                v.clone()
            } else {
                let file = src.file.as_deref().unwrap_or_default();
                let path = base.map_or_else(|| Path::new(file).to_path_buf(), |b| b.join(file));
                std::fs::read_to_string(&path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect()
            };
            if list.is_empty() {
                return Err(Error::Grammar(format!("entity list `{name}` is empty")));
            }
            if let Some(bad) = list
                .iter()
                .find(|e| e.split_whitespace().count() != 1 || e.contains([':', '|']))
            {
                return Err(Error::Grammar(format!(
                    "entity `{bad}` in `{name}` must be a single token without `:` or `|`"
                )));
            }
            entities.insert(name.clone(), list);
        }
        Ok(Grammar {
            spec: self,
            templates,
            entities,
        })
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kl", "st", "tr", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_words(n: usize, taken: &mut HashSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Built-in grammar: seven intents, several paraphrases each, large generated
/// entity lists.
pub const DEFAULT_GRAMMAR: &str = r#"
zipf_exponent = 1.0
overlap = 0.0
entity_seed = 17

[entities]
song = { generate = 6000 }
artist = { generate = 6000 }
city = { generate = 6000 }
destination = { generate = 6000 }
contact = { generate = 6000 }
day = { values = ["today", "tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"] }
time = { values = ["six", "seven", "eight", "nine", "ten", "eleven", "noon", "midnight"] }

[[template]]
name = "play_song_artist"
utterance = "play {song} by {artist}"
mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
mrl_b = "intent:play|song:{song}|artist:{artist}"

[[template]]
name = "hear_song_artist"
utterance = "i want to hear {song} by {artist}"
mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
mrl_b = "intent:play|song:{song}|artist:{artist}"

[[template]]
name = "put_on_song_artist"
utterance = "put on {song} from {artist}"
mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
mrl_b = "intent:play|song:{song}|artist:{artist}"

[[template]]
name = "artist_song"
utterance = "can you play {artist} 's song {song}"
mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
mrl_b = "intent:play|song:{song}|artist:{artist}"

[[template]]
name = "track_song_artist"
utterance = "play the track {song} by {artist}"
mrl_a = "( playAct ( song {song} ) ( artist {artist} ) )"
mrl_b = "intent:play|song:{song}|artist:{artist}"

[[template]]
name = "play_song"
utterance = "play {song}"
mrl_a = "( playAct ( song {song} ) )"
mrl_b = "intent:play|song:{song}"

[[template]]
name = "hear_song"
utterance = "i want to hear {song}"
mrl_a = "( playAct ( song {song} ) )"
mrl_b = "intent:play|song:{song}"

[[template]]
name = "queue_song"
utterance = "queue up the song {song}"
mrl_a = "( playAct ( song {song} ) )"
mrl_b = "intent:play|song:{song}"

[[template]]
name = "put_on_artist"
utterance = "put on some {artist}"
mrl_a = "( playAct ( artist {artist} ) )"
mrl_b = "intent:play|artist:{artist}"

[[template]]
name = "something_by_artist"
utterance = "play something by {artist}"
mrl_a = "( playAct ( artist {artist} ) )"
mrl_b = "intent:play|artist:{artist}"

[[template]]
name = "shuffle_artist"
utterance = "shuffle songs by {artist}"
mrl_a = "( playAct ( artist {artist} ) )"
mrl_b = "intent:play|artist:{artist}"

[[template]]
name = "weather_city_day"
utterance = "what is the weather in {city} on {day}"
mrl_a = "( weatherQuery ( location {city} ) ( date {day} ) )"
mrl_b = "intent:weather|city:{city}|date:{day}"

[[template]]
name = "how_weather_city_day"
utterance = "how is the weather in {city} {day}"
mrl_a = "( weatherQuery ( location {city} ) ( date {day} ) )"
mrl_b = "intent:weather|city:{city}|date:{day}"

[[template]]
name = "forecast_city_day"
utterance = "weather forecast for {city} on {day}"
mrl_a = "( weatherQuery ( location {city} ) ( date {day} ) )"
mrl_b = "intent:weather|city:{city}|date:{day}"

[[template]]
name = "day_weather_city"
utterance = "{day} what will the weather be like in {city}"
mrl_a = "( weatherQuery ( location {city} ) ( date {day} ) )"
mrl_b = "intent:weather|city:{city}|date:{day}"

[[template]]
name = "weather_city"
utterance = "what is the weather in {city}"
mrl_a = "( weatherQuery ( location {city} ) )"
mrl_b = "intent:weather|city:{city}"

[[template]]
name = "forecast_city"
utterance = "give me the forecast for {city}"
mrl_a = "( weatherQuery ( location {city} ) )"
mrl_b = "intent:weather|city:{city}"

[[template]]
name = "rain_city"
utterance = "will it rain in {city}"
mrl_a = "( weatherQuery ( condition rain ) ( location {city} ) )"
mrl_b = "intent:weather|condition:rain|city:{city}"

[[template]]
name = "rain_city_day"
utterance = "is it going to rain in {city} on {day}"
mrl_a = "( weatherQuery ( condition rain ) ( location {city} ) ( date {day} ) )"
mrl_b = "intent:weather|condition:rain|city:{city}|date:{day}"

[[template]]
name = "snow_city"
utterance = "will it snow in {city}"
mrl_a = "( weatherQuery ( condition snow ) ( location {city} ) )"
mrl_b = "intent:weather|condition:snow|city:{city}"

[[template]]
name = "message_contact"
utterance = "send a message to {contact}"
mrl_a = "( sendAct ( message ) ( recipient {contact} ) )"
mrl_b = "intent:message|contact:{contact}"

[[template]]
name = "text_contact"
utterance = "text {contact}"
mrl_a = "( sendAct ( message ) ( recipient {contact} ) )"
mrl_b = "intent:message|contact:{contact}"

[[template]]
name = "write_contact"
utterance = "write to {contact}"
mrl_a = "( sendAct ( message ) ( recipient {contact} ) )"
mrl_b = "intent:message|contact:{contact}"

[[template]]
name = "note_contact"
utterance = "send {contact} a note"
mrl_a = "( sendAct ( message ) ( recipient {contact} ) )"
mrl_b = "intent:message|contact:{contact}"

[[template]]
name = "call_contact_day"
utterance = "call {contact} {day}"
mrl_a = "( callAct ( recipient {contact} ) ( date {day} ) )"
mrl_b = "intent:call|contact:{contact}|date:{day}"

[[template]]
name = "phone_contact_day"
utterance = "phone {contact} on {day}"
mrl_a = "( callAct ( recipient {contact} ) ( date {day} ) )"
mrl_b = "intent:call|contact:{contact}|date:{day}"

[[template]]
name = "ring_contact_day"
utterance = "give {contact} a ring {day}"
mrl_a = "( callAct ( recipient {contact} ) ( date {day} ) )"
mrl_b = "intent:call|contact:{contact}|date:{day}"

[[template]]
name = "day_call_contact"
utterance = "{day} remind me to call {contact}"
mrl_a = "( callAct ( recipient {contact} ) ( date {day} ) )"
mrl_b = "intent:call|contact:{contact}|date:{day}"

[[template]]
name = "call_contact"
utterance = "call {contact}"
mrl_a = "( callAct ( recipient {contact} ) )"
mrl_b = "intent:call|contact:{contact}"

[[template]]
name = "dial_contact"
utterance = "dial {contact} now"
mrl_a = "( callAct ( recipient {contact} ) )"
mrl_b = "intent:call|contact:{contact}"

[[template]]
name = "flights_from_to"
utterance = "find flights from {city} to {destination}"
mrl_a = "( travelQuery ( origin {city} ) ( destination {destination} ) )"
mrl_b = "intent:flight|from:{city}|to:{destination}"

[[template]]
name = "fly_to_from"
utterance = "i need to fly to {destination} from {city}"
mrl_a = "( travelQuery ( origin {city} ) ( destination {destination} ) )"
mrl_b = "intent:flight|from:{city}|to:{destination}"

[[template]]
name = "book_from_to"
utterance = "book a flight from {city} to {destination}"
mrl_a = "( travelQuery ( origin {city} ) ( destination {destination} ) )"
mrl_b = "intent:flight|from:{city}|to:{destination}"

[[template]]
name = "flights_from_to_day"
utterance = "flights from {city} to {destination} on {day}"
mrl_a = "( travelQuery ( origin {city} ) ( destination {destination} ) ( date {day} ) )"
mrl_b = "intent:flight|from:{city}|to:{destination}|date:{day}"

[[template]]
name = "day_fly_to_from"
utterance = "{day} i fly to {destination} from {city}"
mrl_a = "( travelQuery ( origin {city} ) ( destination {destination} ) ( date {day} ) )"
mrl_b = "intent:flight|from:{city}|to:{destination}|date:{day}"

[[template]]
name = "alarm_time"
utterance = "set an alarm for {time}"
mrl_a = "( alarmAct ( time {time} ) )"
mrl_b = "intent:alarm|time:{time}"

[[template]]
name = "wake_time"
utterance = "wake me up at {time}"
mrl_a = "( alarmAct ( time {time} ) )"
mrl_b = "intent:alarm|time:{time}"

[[template]]
name = "alarm_time_day"
utterance = "set an alarm for {time} on {day}"
mrl_a = "( alarmAct ( time {time} ) ( date {day} ) )"
mrl_b = "intent:alarm|time:{time}|date:{day}"
"#;

pub fn default_grammar() -> Grammar {
    GrammarSpec::from_toml(DEFAULT_GRAMMAR)
        .and_then(|s| s.compile(None))
        .expect("built-in grammar is valid")
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplits {
    pub task: String,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskSplits {
    pub fn split(&self, name: &str) -> Option<&[Example]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub task: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Fraction of test entity occurrences never seen in the training split.
    pub test_entity_oov: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpora {
    pub tasks: [TaskSplits; 2],
    pub stats: Vec<SplitStats>,
}

#[derive(Clone, Debug)]
struct Instance {
    template: usize,
    fillers: Vec<(String, String)>,
    utterance: Vec<String>,
}

impl Grammar {
    pub fn template_names(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|t| t.name.as_str())
    }

    pub fn entities(&self, slot: &str) -> Option<&[String]> {
        self.entities.get(slot).map(Vec::as_slice)
    }

    /// Literal MRL tokens of one formalism (0 = A, 1 = B).
    pub fn closed_labels(&self, formalism: usize) -> BTreeSet<String> {
        self.templates
            .iter()
            .flat_map(|t| &t.mrl[formalism])
            .filter_map(|p| match p {
                Piece::Lit(l) => Some(l.clone()),
                Piece::Slot(_) => None,
            })
            .collect()
    }

    /// True when every logical-form token is a closed label or occurs in the utterance.
    pub fn is_consistent(&self, ex: &Example, formalism: usize) -> bool {
        let labels = self.closed_labels(formalism);
        ex.logical_form
            .iter()
            .all(|t| labels.contains(t) || ex.utterance.contains(t))
    }

    /// Instantiates `template` with explicit fillers, for both formalisms.
    pub fn instantiate(&self, template: &str, fillers: &[(&str, &str)]) -> Result<(String, String, String)> {
        let t = self
            .templates
            .iter()
            .find(|t| t.name == template)
            .ok_or_else(|| Error::Grammar(format!("unknown template `{template}`")))?;
        let owned: Vec<(String, String)> = fillers.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let render = |pieces: &[Piece]| -> Result<String> {
            pieces
                .iter()
                .map(|p| match p {
                    Piece::Lit(l) => Ok(l.clone()),
                    Piece::Slot(s) => owned
                        .iter()
                        .find(|(k, _)| k == s)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| Error::Grammar(format!("no filler for slot `{s}`"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.join(" "))
        };
        Ok((render(&t.utterance)?, render(&t.mrl[0])?, render(&t.mrl[1])?))
    }

    fn sample_instance(
        &self,
        samplers: &BTreeMap<String, Zipf<f64>>,
        template: usize,
        rng: &mut ChaCha8Rng,
    ) -> Instance {
        let t = &self.templates[template];
        let fillers: Vec<(String, String)> = t
            .slots
            .iter()
            .map(|s| {
                let list = &self.entities[s];
                let rank = samplers[s].sample(rng) as usize;
                (s.clone(), list[rank.clamp(1, list.len()) - 1].clone())
            })
            .collect();
        let utterance = render(&t.utterance, &fillers);
        Instance {
            template,
            fillers,
            utterance,
        }
    }

    fn to_example(&self, inst: &Instance, formalism: usize, id: usize) -> Example {
        let task = if formalism == 0 { TASK_A } else { TASK_B };
        Example {
            id,
            task: task.to_string(),
            utterance: inst.utterance.clone(),
            logical_form: render(&self.templates[inst.template].mrl[formalism], &inst.fillers),
        }
    }
}

fn render(pieces: &[Piece], fillers: &[(String, String)]) -> Vec<String> {
    pieces
        .iter()
        .map(|p| match p {
            Piece::Lit(l) => l.clone(),
            Piece::Slot(s) => fillers
                .iter()
                .find(|(k, _)| k == s)
                .map(|(_, v)| v.clone())
                .expect("validated slot"),
        })
        .collect()
}

/// Generates `n_per_task` distinct utterances per task and splits them by
/// `split_ratios` (train, dev, test). Deterministic in `seed`.
pub fn generate_synthetic(
    grammar: &Grammar,
    n_per_task: usize,
    seed: u64,
    split_ratios: [f64; 3],
) -> Result<SyntheticCorpora> {
    let total: f64 = split_ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || split_ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) {
        return Err(Error::Config(format!(
            "split ratios {split_ratios:?} must be non-negative and sum to 1"
        )));
    }
    let samplers: BTreeMap<String, Zipf<f64>> = grammar
        .entities
        .iter()
        .map(|(k, v)| {
            Zipf::new(v.len() as f64, grammar.spec.zipf_exponent)
                .map(|z| (k.clone(), z))
                .map_err(|e| Error::Grammar(format!("entity list `{k}`: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = grammar.templates.len();

    let draw_unique = |count: usize, seen: &mut HashSet<Vec<String>>, rng: &mut ChaCha8Rng| -> Result<Vec<Instance>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 50 * count + 1000 {
                return Err(Error::Grammar(format!(
                    "could not draw {count} distinct utterances; the grammar is too small"
                )));
            }
            let inst = grammar.sample_instance(&samplers, rng.random_range(0..k), rng);
            if seen.insert(inst.utterance.clone()) {
                out.push(inst);
            }
        }
        Ok(out)
    };

    let mut seen_a = HashSet::new();
    let inst_a = draw_unique(n_per_task, &mut seen_a, &mut rng)?;
    let shared = ((grammar.spec.overlap * n_per_task as f64).round() as usize).min(inst_a.len());
    let mut seen_b: HashSet<Vec<String>> = inst_a[..shared].iter().map(|i| i.utterance.clone()).collect();
    // Task B's fresh utterances avoid all of task A's.
    let mut blocked = seen_a.clone();
    blocked.extend(seen_b.iter().cloned());
    let fresh = draw_unique(n_per_task - shared, &mut blocked, &mut rng)?;
    seen_b.extend(fresh.iter().map(|i| i.utterance.clone()));
    let mut inst_b: Vec<Instance> = inst_a[..shared].to_vec();
    inst_b.extend(fresh);
    inst_b.shuffle(&mut rng);

    let mut tasks: [TaskSplits; 2] = Default::default();
    let mut stats = Vec::new();
    for (formalism, insts) in [(0usize, inst_a), (1, inst_b)] {
        let (train, dev, test) = split_instances(grammar, insts, split_ratios, &mut rng);
        let oov = entity_oov(&train, &test);
        let mk = |v: &[Instance], offset: usize| -> Vec<Example> {
            v.iter()
                .enumerate()
                .map(|(i, inst)| grammar.to_example(inst, formalism, offset + i + 1))
                .collect()
        };
        let splits = TaskSplits {
            task: if formalism == 0 { TASK_A } else { TASK_B }.to_string(),
            train: mk(&train, 0),
            dev: mk(&dev, train.len()),
            test: mk(&test, train.len() + dev.len()),
        };
        stats.push(SplitStats {
            task: splits.task.clone(),
            train: splits.train.len(),
            dev: splits.dev.len(),
            test: splits.test.len(),
            test_entity_oov: oov,
        });
        tasks[formalism] = splits;
    }
    Ok(SyntheticCorpora { tasks, stats })
}

fn split_instances(
    grammar: &Grammar,
    insts: Vec<Instance>,
    ratios: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> (Vec<Instance>, Vec<Instance>, Vec<Instance>) {
    let n = insts.len();
    match grammar.spec.split {
        SplitMode::Utterance => {
            let n_train = (ratios[0] * n as f64).round() as usize;
            let n_dev = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
            let mut it = insts.into_iter();
            let train = it.by_ref().take(n_train).collect();
            let dev = it.by_ref().take(n_dev).collect();
            (train, dev, it.collect())
        }
        SplitMode::Template => {
            let mut order: Vec<usize> = (0..grammar.templates.len()).collect();
            order.shuffle(rng);
            let t = order.len() as f64;
            let n_train = ((ratios[0] * t).round() as usize).max(1).min(order.len());
            let n_dev = ((ratios[1] * t).round() as usize).min(order.len() - n_train);
            let side = |tpl: usize| {
                let pos = order.iter().position(|&o| o == tpl).expect("template");
                if pos < n_train {
                    0
                } else if pos < n_train + n_dev {
                    1
                } else {
                    2
                }
            };
            let mut out: [Vec<Instance>; 3] = Default::default();
            for inst in insts {
                out[side(inst.template)].push(inst);
            }
            let [a, b, c] = out;
            (a, b, c)
        }
    }
}

fn entity_oov(train: &[Instance], test: &[Instance]) -> f64 {
    let seen: HashSet<&str> = train
        .iter()
        .flat_map(|i| i.utterance.iter().map(String::as_str))
        .collect();
    let (mut total, mut unseen) = (0usize, 0usize);
    for inst in test {
        for (_, v) in &inst.fillers {
            total += 1;
            unseen += usize::from(!seen.contains(v.as_str()));
        }
    }
    if total == 0 {
        0.0
    } else {
        unseen as f64 / total as f64
    }
}
