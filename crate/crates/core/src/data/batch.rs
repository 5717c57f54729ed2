use serde::{Deserialize, Serialize};

use crate::copydec::{gold_action_set, Action, GoldAttribution, SourceToken};
use crate::error::{Error, Result};
use crate::multitask::{augment_input, ArchKind, TaskSpec};
use crate::seq2seq::EncoderInput;

use super::corpus::Example;
use super::vocab::{Vocabulary, BOS, EOS, EOS_TOKEN, PAD, PAD_TOKEN};

/// The three vocabularies one task reads.
#[derive(Clone, Copy, Debug)]
pub struct TaskVocabs<'a> {
    /// Encoder input ids.
    pub input: &'a Vocabulary,
    /// Ids of `Write` actions.
    pub write: &'a Vocabulary,
    /// Ids of previous tokens fed to the decoder.
    pub feed: &'a Vocabulary,
}

/// Length limits; examples exceeding either are skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthLimit {
    /// Maximum encoder length, including any artificial token.
    pub source: usize,
    /// Maximum number of logical-form tokens.
    pub target: usize,
}

impl LengthLimit {
    pub fn unlimited() -> Self {
        LengthLimit {
            source: usize::MAX,
            target: usize::MAX,
        }
    }

    pub fn both(n: usize) -> Self {
        LengthLimit { source: n, target: n }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedExample {
    pub id: usize,
    pub reason: String,
}

/// Encoder input for one utterance: reversed ids plus the per-position
/// surface table.
pub fn encode_source(
    utterance: &[String],
    input_vocab: &Vocabulary,
    task: &TaskSpec,
    arch: ArchKind,
) -> (Vec<usize>, Vec<SourceToken>) {
    let augmented = augment_input(utterance, task, arch);
    let offset = augmented.len() - utterance.len();
    let n = augmented.len();
    let mut ids = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let tok = &augmented[k];
        ids.push(input_vocab.id(tok));
        let original_pos = k.checked_sub(offset);
        sources.push(SourceToken {
            surface: tok.clone(),
            original_pos,
            copyable: original_pos.is_some(),
        });
    }
    (ids, sources)
}

/// A padded minibatch from a single task.
///
/// Step-major target arrays: `decoder_inputs[j][r]` is the token fed at
/// step `j` for row `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub task: String,
    pub example_ids: Vec<usize>,
    pub encoder: EncoderInput,
    /// `sources[r][i]` describes encoder position `i` of row `r`.
    pub sources: Vec<Vec<SourceToken>>,
    pub decoder_inputs: Vec<Vec<usize>>,
    pub gold: Vec<Vec<Vec<Action>>>,
    pub target_valid: Vec<Vec<bool>>,
    /// Target positions whose token no action can produce.
    pub uncovered: usize,
    pub skipped: Vec<SkippedExample>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.encoder.batch
    }

    pub fn target_len(&self) -> usize {
        self.decoder_inputs.len()
    }

    pub fn source_len(&self) -> usize {
        self.encoder.len()
    }
}

/// Builds a padded batch: augmentation, reversal, UNK substitution, masks
/// and gold action sets. Over-length examples are listed in `skipped`.
pub fn prepare_batch(
    examples: &[&Example],
    vocabs: TaskVocabs<'_>,
    task: &TaskSpec,
    arch: ArchKind,
    limit: LengthLimit,
    attribution: GoldAttribution,
) -> Result<Batch> {
    let mut skipped = Vec::new();
    let mut rows = Vec::new();
    for ex in examples {
        if ex.task != task.task_id {
            return Err(Error::Config(format!(
                "example {} belongs to task `{}`, batch is for `{}`",
                ex.id, ex.task, task.task_id
            )));
        }
        let (ids, sources) = encode_source(&ex.utterance, vocabs.input, task, arch);
        if ids.len() > limit.source {
            skipped.push(SkippedExample {
                id: ex.id,
                reason: format!("utterance has {} tokens, limit {}", ids.len(), limit.source),
            });
            continue;
        }
        if ex.logical_form.len() > limit.target {
            skipped.push(SkippedExample {
                id: ex.id,
                reason: format!(
                    "logical form has {} tokens, limit {}",
                    ex.logical_form.len(),
                    limit.target
                ),
            });
            continue;
        }
        rows.push((*ex, ids, sources));
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no usable examples in batch for task `{}` ({} skipped)",
            task.task_id,
            skipped.len()
        )));
    }

    let b = rows.len();
    let m = rows.iter().map(|(_, ids, _)| ids.len()).max().unwrap_or(0);
    let n = rows
        .iter()
        .map(|(ex, _, _)| ex.logical_form.len() + 1)
        .max()
        .unwrap_or(0);

    let mut enc_ids = Vec::with_capacity(b * m);
    let mut valid = Vec::with_capacity(b * m);
    let mut copyable = Vec::with_capacity(b * m);
    let mut all_sources = Vec::with_capacity(b);
    let mut decoder_inputs = vec![vec![PAD; b]; n];
    let mut gold = vec![vec![Vec::new(); b]; n];
    let mut target_valid = vec![vec![false; b]; n];
    let mut uncovered = 0;

    for (r, (ex, ids, mut sources)) in rows.iter().cloned().enumerate() {
        let len = ids.len();
        enc_ids.extend_from_slice(&ids);
        enc_ids.extend(std::iter::repeat_n(PAD, m - len));
        valid.extend((0..m).map(|i| i < len));
        copyable.extend((0..m).map(|i| i < len && sources[i].copyable));
        sources.extend((len..m).map(|_| SourceToken {
            surface: PAD_TOKEN.to_string(),
            original_pos: None,
            copyable: false,
        }));

        let targets = ex.logical_form.iter().map(String::as_str).chain([EOS_TOKEN]);
        let mut prev = BOS;
        for (j, tok) in targets.enumerate() {
            decoder_inputs[j][r] = prev;
            target_valid[j][r] = true;
            let g = if j == ex.logical_form.len() {
                vec![Action::Write(EOS)]
            } else {
                let set = gold_action_set(tok, &sources, vocabs.write, attribution);
                uncovered += usize::from(!set.covered);
                set.actions
            };
            gold[j][r] = g;
            prev = vocabs.feed.id(tok);
        }
        all_sources.push(sources);
    }

    Ok(Batch {
        task: task.task_id.clone(),
        example_ids: rows.iter().map(|(ex, _, _)| ex.id).collect(),
        encoder: EncoderInput {
            ids: enc_ids,
            valid,
            copyable,
            batch: b,
        },
        sources: all_sources,
        decoder_inputs,
        gold,
        target_valid,
        uncovered,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UNK;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::reserved_only();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn task() -> TaskSpec {
        TaskSpec::new("evi", vocab(&["a", "b", "c"]), vocab(&["(", ")", "x"]))
    }

    #[test]
    fn reverses_and_keeps_alignment() {
        let t = task();
        let utt: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let (ids, src) = encode_source(&utt, &t.input_vocab, &t, ArchKind::Independent);
        let v = &t.input_vocab;
        assert_eq!(ids, vec![v.id("c"), v.id("b"), v.id("a")]);
        assert_eq!(src[0].original_pos, Some(2));
        assert_eq!(src[2].original_pos, Some(0));
        for (i, s) in src.iter().enumerate() {
            assert_eq!(utt[s.original_pos.unwrap()], s.surface, "position {i}");
        }
    }

    #[test]
    fn artificial_token_is_last_and_not_copyable() {
        let t = task();
        let utt = vec!["a".to_string(), "b".to_string()];
        let (_, src) = encode_source(&utt, &t.input_vocab, &t, ArchKind::OneToOne);
        let surfaces: Vec<&str> = src.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["b", "a", "@evi@"]);
        assert!(!src[2].copyable);
        assert_eq!(src[2].original_pos, None);
    }

    #[test]
    fn pads_to_batch_max() {
        let t = task();
        let e1 = Example::new(1, "evi", "a b", "( x )");
        let e2 = Example::new(2, "evi", "a b c zzz", "x");
        let v = TaskVocabs {
            input: &t.input_vocab,
            write: &t.decoder_vocab,
            feed: &t.decoder_vocab,
        };
        let b = prepare_batch(
            &[&e1, &e2],
            v,
            &t,
            ArchKind::Independent,
            LengthLimit::unlimited(),
            GoldAttribution::Marginal,
        )
        .unwrap();
        assert_eq!(b.source_len(), 4);
        assert_eq!(b.encoder.valid.iter().filter(|v| !**v).count(), 2);
        assert_eq!(b.encoder.valid[..4], [true, true, false, false]);
        // OOV surface kept, id is UNK
        assert_eq!(b.encoder.ids[4], UNK);
        assert_eq!(b.sources[1][0].surface, "zzz");
        assert!(b.sources[1][0].copyable);
        assert_eq!(b.target_len(), 4);
        assert_eq!(b.decoder_inputs[0], vec![BOS, BOS]);
        assert_eq!(b.gold[1][1], vec![Action::Write(EOS)]);
        assert_eq!(b.target_valid[2], vec![true, false]);
    }

    #[test]
    fn no_pad_in_valid_targets() {
        let t = task();
        let exs = [
            Example::new(1, "evi", "a", "( x )"),
            Example::new(2, "evi", "b c", "x x x x x"),
        ];
        let refs: Vec<&Example> = exs.iter().collect();
        let v = TaskVocabs {
            input: &t.input_vocab,
            write: &t.decoder_vocab,
            feed: &t.decoder_vocab,
        };
        let b = prepare_batch(
            &refs,
            v,
            &t,
            ArchKind::Independent,
            LengthLimit::unlimited(),
            GoldAttribution::Marginal,
        )
        .unwrap();
        for j in 0..b.target_len() {
            for r in 0..b.size() {
                if b.target_valid[j][r] {
                    assert!(!b.gold[j][r].contains(&Action::Write(PAD)));
                    assert!(!b.gold[j][r].is_empty());
                } else {
                    assert!(b.gold[j][r].is_empty());
                }
            }
        }
    }

    #[test]
    fn over_length_skipped_and_reported() {
        let t = task();
        let e1 = Example::new(1, "evi", "a b c", "x");
        let e2 = Example::new(2, "evi", "a", "x");
        let v = TaskVocabs {
            input: &t.input_vocab,
            write: &t.decoder_vocab,
            feed: &t.decoder_vocab,
        };
        let b = prepare_batch(
            &[&e1, &e2],
            v,
            &t,
            ArchKind::Independent,
            LengthLimit::both(2),
            GoldAttribution::Marginal,
        )
        .unwrap();
        assert_eq!(b.size(), 1);
        assert_eq!(b.example_ids, vec![2]);
        assert_eq!(b.skipped.len(), 1);
        assert_eq!(b.skipped[0].id, 1);
        assert!(prepare_batch(
            &[&e1],
            v,
            &t,
            ArchKind::Independent,
            LengthLimit::both(2),
            GoldAttribution::Marginal
        )
        .is_err());
    }

    #[test]
    fn rejects_mixed_tasks() {
        let t = task();
        let e = Example::new(1, "other", "a", "x");
        let v = TaskVocabs {
            input: &t.input_vocab,
            write: &t.decoder_vocab,
            feed: &t.decoder_vocab,
        };
        assert!(prepare_batch(
            &[&e],
            v,
            &t,
            ArchKind::Independent,
            LengthLimit::unlimited(),
            GoldAttribution::Marginal
        )
        .is_err());
    }
}
