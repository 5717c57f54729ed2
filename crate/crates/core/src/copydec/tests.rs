use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::grad_check;
use crate::seq2seq::{register_embedding, register_output, register_stack, AttentionParams, ModelDims, INIT_SCALE};

fn vocab(tokens: &[&str]) -> Vocabulary {
    let mut v = Vocabulary::reserved_only();
    for t in tokens {
        v.insert(t);
    }
    v
}

fn src(tokens: &[&str]) -> Vec<SourceToken> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| SourceToken {
            surface: t.to_string(),
            original_pos: Some(i),
            copyable: true,
        })
        .collect()
}

fn model(vin: usize, vout: usize, dims: ModelDims, seed: u64) -> (ParamStore<f64>, Seq2SeqParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_embed = register_embedding(&mut store, "E_x", vin, dims.embed, &mut rng).unwrap();
    let encoder = register_stack(&mut store, "enc", dims.embed, &dims, &mut rng).unwrap();
    let attention =
        AttentionParams::register(&mut store, "att", dims.hidden, dims.attention, INIT_SCALE, &mut rng).unwrap();
    let tgt_embed = register_embedding(&mut store, "E_y", vout, dims.embed, &mut rng).unwrap();
    let decoder = register_stack(&mut store, "dec", dims.embed + dims.hidden, &dims, &mut rng).unwrap();
    let output = register_output(&mut store, "O", dims.hidden, vout, &mut rng).unwrap();
    let p = Seq2SeqParams {
        src_embed,
        encoder,
        attention,
        tgt_embed,
        decoder,
        output,
    };
    (store, p)
}

const DIMS: ModelDims = ModelDims {
    embed: 3,
    hidden: 4,
    attention: 3,
    layers: 1,
};

#[test]
fn equal_logits_give_uniform_distribution() {
    let d = action_distribution(&[0.7f64; 3], &[0.7; 2], &[true, true]).unwrap();
    assert_eq!(d.probs().len(), 5);
    for &p in d.probs() {
        assert!((p - 0.2).abs() < 1e-15);
    }
}

#[test]
fn dominant_copy_score_saturates() {
    let d = action_distribution(&[0.0f64, 1.0, -1.0], &[1e4, 0.0], &[true, true]).unwrap();
    assert!((d.prob(Action::Copy(0)) - 1.0).abs() < 1e-12);
    assert_eq!(d.argmax(), Action::Copy(0));
}

#[test]
fn masked_copy_positions_get_zero() {
    let d = action_distribution(&[0.0f64, 0.0], &[50.0, 1.0], &[false, true]).unwrap();
    assert_eq!(d.prob(Action::Copy(0)), 0.0);
    let total: f64 = d.probs().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn empty_action_space_rejected() {
    assert!(action_distribution::<f64>(&[], &[1.0], &[false]).is_err());
    assert!(action_distribution::<f64>(&[1.0], &[1.0], &[]).is_err());
}

#[test]
fn argmax_ties_prefer_lowest_index() {
    let d = action_distribution(&[1.0f64, 2.0], &[2.0], &[true]).unwrap();
    assert_eq!(d.argmax(), Action::Write(1));
}

fn brute_force(write: &[f64], copy: &[f64], valid: &[bool]) -> Vec<f64> {
    let mut e: Vec<f64> = write.iter().map(|x| x.exp()).collect();
    e.extend(copy.iter().zip(valid).map(|(x, v)| if *v { x.exp() } else { 0.0 }));
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn distribution_matches_brute_force(
        write in prop::collection::vec(-8.0f64..8.0, 1..12),
        copy_mask in prop::collection::vec((-8.0f64..8.0, any::<bool>()), 0..10),
    ) {
        let copy: Vec<f64> = copy_mask.iter().map(|c| c.0).collect();
        let valid: Vec<bool> = copy_mask.iter().map(|c| c.1).collect();
        let d = action_distribution(&write, &copy, &valid).unwrap();
        let total: f64 = d.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (p, q) in d.probs().iter().zip(brute_force(&write, &copy, &valid)) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn gold_set_write_only() {
    let v = vocab(&["play", "dylan"]);
    let g = gold_action_set("play", &src(&["some", "song"]), &v, GoldAttribution::Marginal);
    assert_eq!(g.actions, vec![Action::Write(v.id("play"))]);
    assert!(g.covered);
}

#[test]
fn gold_set_copy_only_oov() {
    let v = vocab(&["play"]);
    let s = src(&["x", "obama", "y", "z", "obama"]);
    let g = gold_action_set("obama", &s, &v, GoldAttribution::Marginal);
    assert_eq!(g.actions, vec![Action::Copy(1), Action::Copy(4)]);
}

#[test]
fn gold_set_write_and_copy() {
    let v = vocab(&["play", "dylan"]);
    let s = src(&["play", "x", "dylan"]);
    let g = gold_action_set("dylan", &s, &v, GoldAttribution::Marginal);
    assert_eq!(g.actions, vec![Action::Write(v.id("dylan")), Action::Copy(2)]);
    let g = gold_action_set("dylan", &s, &v, GoldAttribution::CopyPreferred);
    assert_eq!(g.actions, vec![Action::Copy(2)]);
}

#[test]
fn gold_set_ignores_non_copyable_and_flags_uncovered() {
    let v = vocab(&[]);
    let mut s = src(&["@t@"]);
    s[0].copyable = false;
    let g = gold_action_set("@t@", &s, &v, GoldAttribution::Marginal);
    assert!(!g.covered);
    assert_eq!(g.actions, vec![Action::Write(UNK)]);
}

#[test]
fn step_loss_arithmetic() {
    let d = action_distribution(&[0.0f64; 3], &[0.0; 2], &[true, true]).unwrap();
    let l = step_loss(&d, &[Action::Copy(1)]).unwrap();
    assert!((l.nll - (-(0.2f64).ln())).abs() < 1e-14);
    assert!(!l.floored);

    let probs = [0.3f64, 0.2, 0.5];
    let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let d = action_distribution(&logits[..2], &logits[2..], &[true]).unwrap();
    let l = step_loss(&d, &[Action::Write(0), Action::Write(1)]).unwrap();
    assert!((l.nll - (-(0.5f64).ln())).abs() < 1e-14);
    assert!(step_loss(&d, &[]).is_err());
}

#[test]
fn singleton_gold_is_cross_entropy() {
    let write = [0.4f64, -1.3, 2.2, 0.0];
    let copy = [1.1f64, -0.5];
    let d = action_distribution(&write, &copy, &[true, true]).unwrap();
    let all: Vec<f64> = write.iter().chain(&copy).copied().collect();
    let lse = all.iter().map(|x| x.exp()).sum::<f64>().ln();
    for (i, logit) in all.iter().enumerate() {
        let l = step_loss(&d, &[Action::from_index(i, 4)]).unwrap();
        assert!((l.nll - (lse - logit)).abs() < 1e-12);
    }
}

#[test]
fn adding_gold_actions_never_increases_loss() {
    let d = action_distribution(&[0.3f64, -0.2, 1.0], &[0.5, 2.0], &[true, true]).unwrap();
    let mut gold = Vec::new();
    let mut last = f64::INFINITY;
    for i in [4, 0, 2, 1, 3] {
        gold.push(Action::from_index(i, 3));
        let l = step_loss(&d, &gold).unwrap().nll;
        assert!(l <= last);
        last = l;
    }
}

#[test]
fn underflow_is_floored_and_flagged() {
    let d = action_distribution(&[0.0f64, -800.0], &[], &[]).unwrap();
    let l = step_loss(&d, &[Action::Write(1)]).unwrap();
    assert!(l.floored);
    assert!((l.nll - (-(PROB_FLOOR).ln())).abs() < 1e-9);
}

#[test]
fn action_mask_layout() {
    let m = action_mask(2, &[true, false, true, true], 2);
    assert_eq!(m, vec![true, true, true, false, true, true, true, true]);
}

fn one_example_batch(store_vocab_in: &Vocabulary, out: &Vocabulary, utt: &[&str], lf: &[&str]) -> Batch {
    use crate::data::{prepare_batch, Example, LengthLimit, TaskVocabs};
    use crate::multitask::{ArchKind, TaskSpec};
    let task = TaskSpec::new("t", store_vocab_in.clone(), out.clone());
    let ex = Example::new(1, "t", &utt.join(" "), &lf.join(" "));
    let v = TaskVocabs {
        input: store_vocab_in,
        write: out,
        feed: out,
    };
    prepare_batch(
        &[&ex],
        v,
        &task,
        ArchKind::Independent,
        LengthLimit::unlimited(),
        GoldAttribution::Marginal,
    )
    .unwrap()
}

#[test]
fn batch_loss_gradient_matches_finite_differences() {
    let vin = vocab(&["play", "a"]);
    let vout = vocab(&["(", ")", "song"]);
    let batch = one_example_batch(&vin, &vout, &["play", "zed", "a"], &["(", "song", "zed", ")"]);
    // "zed" is only reachable by copy
    assert!(batch.gold[2][0].iter().all(|a| a.is_copy()));
    let (mut store, p) = model(vin.len(), vout.len(), DIMS, 3);
    for t in store.iter_mut() {
        for v in t.value.data_mut() {
            *v *= 8.0;
        }
    }
    let ids = p.ids();
    let report = grad_check(&mut store, &ids, 1e-5, |s, tape| {
        Ok(batch_loss(tape, s, &p, &batch, &mut None)?.loss)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn batch_loss_matches_per_step_losses() {
    let vin = vocab(&["play"]);
    let vout = vocab(&["(", ")"]);
    let batch = one_example_batch(&vin, &vout, &["play", "zed"], &["(", "zed", ")"]);
    let (store, p) = model(vin.len(), vout.len(), DIMS, 5);
    let mut tape = Tape::new();
    let bl = batch_loss(&mut tape, &store, &p, &batch, &mut None).unwrap();
    assert_eq!(bl.positions, 4);

    // recompute step by step through the plain distribution
    let mut t2 = Tape::new();
    let enc = encode(&mut t2, &store, &p, &batch.encoder, &mut None).unwrap();
    let keys = AttentionKeys::new(&mut t2, &store, &enc, &p.attention).unwrap();
    let mut state = initial_state(&mut t2, &p, 1);
    let mut expect = 0.0;
    for j in 0..batch.target_len() {
        let out = decoder_step(
            &mut t2,
            &store,
            &p,
            &batch.decoder_inputs[j],
            &state,
            &enc,
            &keys,
            &mut None,
        )
        .unwrap();
        let lg = write_logits(&mut t2, &store, out.state[0], out.context, p.output, &mut None).unwrap();
        let d = action_distribution(
            t2.value(lg).data(),
            t2.value(out.scores).data(),
            &batch.encoder.copyable,
        )
        .unwrap();
        expect += step_loss(&d, &batch.gold[j][0]).unwrap().nll;
        state = out.state;
    }
    assert!((tape.value(bl.loss).scalar() - expect).abs() < 1e-12);
}

fn saturate_decoder(store: &mut ParamStore<f64>, p: &Seq2SeqParams) {
    store.get_mut(p.decoder[0].b_z).value.fill(40.0);
    store.get_mut(p.decoder[0].b_h).value.fill(40.0);
    for id in [p.decoder[0].w_z, p.decoder[0].w_h, p.decoder[0].u_z, p.decoder[0].u_h] {
        store.get_mut(id).value.fill(0.0);
    }
}

#[test]
fn forced_eos_gives_empty_output() {
    let vin = vocab(&["a"]);
    let vout = vocab(&["x"]);
    let (mut store, p) = model(vin.len(), vout.len(), DIMS, 2);
    saturate_decoder(&mut store, &p);
    store.get_mut(p.attention.v).value.fill(0.0);
    let o = &mut store.get_mut(p.output).value;
    o.fill(0.0);
    let cols = o.cols();
    for k in 0..DIMS.hidden {
        o.data_mut()[k * cols + EOS] = 10.0;
    }
    let input = EncoderInput::single(vec![vin.id("a")], vec![true]);
    let out = greedy_decode(&store, &p, &input, &src(&["a"]), &vout, &vout, 5).unwrap();
    assert!(out.tokens.is_empty());
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.trace[0].action, Action::Write(EOS));
}

#[test]
fn forced_copy_emits_source_surface() {
    let vin = vocab(&[]);
    let vout = vocab(&["x"]);
    let (mut store, p) = model(vin.len(), vout.len(), DIMS, 4);
    store.get_mut(p.output).value.fill(0.0);
    for l in &p.encoder {
        store.get_mut(l.b_z).value.fill(40.0);
        store.get_mut(l.b_h).value.fill(40.0);
        for id in [l.w_z, l.w_h, l.u_z, l.u_h] {
            store.get_mut(id).value.fill(0.0);
        }
    }
    store.get_mut(p.attention.w1).value.fill(1.0);
    store.get_mut(p.attention.w2).value.fill(0.0);
    store.get_mut(p.attention.v).value.fill(10.0);
    // OOV source: the encoder sees UNK but the surface survives
    let input = EncoderInput::single(vec![UNK], vec![true]);
    let out = greedy_decode(&store, &p, &input, &src(&["kalimba"]), &vout, &vout, 4).unwrap();
    assert_eq!(out.tokens, vec!["kalimba"; 4]);
    assert!(out.trace.iter().all(|s| s.action == Action::Copy(0)));
    assert_eq!(out.copied_tokens().count(), 4);
    let trace = out.format_trace();
    assert_eq!(trace.lines().count(), 4);
    assert!(trace.starts_with("1\tCOPY[0]=kalimba\t"), "{trace}");
}

#[test]
fn greedy_decode_is_bounded_and_deterministic() {
    let vin = vocab(&["a", "b"]);
    let vout = vocab(&["x", "y"]);
    let (store, p) = model(vin.len(), vout.len(), DIMS, 11);
    let input = EncoderInput::single(vec![4, 5, 3], vec![true; 3]);
    let s = src(&["b", "a", "q"]);
    let a = greedy_decode(&store, &p, &input, &s, &vout, &vout, 7).unwrap();
    let b = greedy_decode(&store, &p, &input, &s, &vout, &vout, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.tokens.len() <= 7);
    assert_eq!(default_max_len(3), 16);
}
