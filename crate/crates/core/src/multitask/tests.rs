use std::collections::HashSet;

use super::*;

fn vocab(tokens: &[&str]) -> Vocabulary {
    let mut v = Vocabulary::reserved_only();
    for t in tokens {
        v.insert(t);
    }
    v
}

fn two_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new("evi", vocab(&["play", "a", "b"]), vocab(&["(", ")", "x", "y"])),
        TaskSpec::new("alexa", vocab(&["play", "c"]), vocab(&[":", "|", "x", "z"])),
    ]
}

const DIMS: ModelDims = ModelDims {
    embed: 5,
    hidden: 6,
    attention: 4,
    layers: 2,
};

fn build(arch: ArchKind) -> ModelAssembly<f64> {
    assemble(arch, two_tasks(), DIMS, 1).unwrap()
}

#[test]
fn parses_arch_flags() {
    for a in ArchKind::ALL {
        assert_eq!(a.flag().parse::<ArchKind>().unwrap(), a);
    }
    assert!("two2two".parse::<ArchKind>().is_err());
}

#[test]
fn every_param_in_exactly_one_block() {
    for arch in ArchKind::ALL {
        let m = build(arch);
        let mut seen = HashSet::new();
        for b in &m.blocks {
            for id in &b.params {
                assert!(seen.insert(*id), "{arch}: {id:?} in two blocks");
            }
        }
        assert_eq!(seen.len(), m.store.len(), "{arch}");
    }
}

#[test]
fn block_ownership_per_arch() {
    let count = |m: &ModelAssembly<f64>, kind: BlockKind| m.blocks.iter().filter(|b| b.kind == kind).count();
    let m = build(ArchKind::OneToShareMany);
    assert_eq!(count(&m, BlockKind::OutputLayer), 2);
    for k in BlockKind::ALL.into_iter().filter(|k| *k != BlockKind::OutputLayer) {
        assert_eq!(count(&m, k), 1, "{k:?}");
    }
    let m = build(ArchKind::OneToMany);
    assert_eq!(count(&m, BlockKind::Encoder), 1);
    assert_eq!(count(&m, BlockKind::InputEmbedding), 1);
    assert_eq!(count(&m, BlockKind::Decoder), 2);
    assert_eq!(count(&m, BlockKind::Attention), 2);
    let m = build(ArchKind::OneToOne);
    assert!(BlockKind::ALL.into_iter().all(|k| count(&m, k) == 1));
    let m = build(ArchKind::Independent);
    assert!(BlockKind::ALL.into_iter().all(|k| count(&m, k) == 2));
}

#[test]
fn one_to_one_uses_union_vocab_and_task_tokens() {
    let m = build(ArchKind::OneToOne);
    let r = m.route(0);
    // 4 reserved + ( ) x y : | z
    assert_eq!(r.vocabs.write.len(), 11);
    assert!(r.vocabs.input.contains("@evi@"));
    assert!(r.vocabs.input.contains("@alexa@"));
    assert_eq!(m.store.value(r.params.output).cols(), 11);
    assert_eq!(m.route(1).params, m.route(0).params);
}

#[test]
fn share_many_writes_per_task_but_feeds_union() {
    let m = build(ArchKind::OneToShareMany);
    let (a, b) = (m.route(0), m.route(1));
    assert_eq!(a.vocabs.write.len(), 8);
    assert_eq!(b.vocabs.write.len(), 8);
    assert_eq!(a.vocabs.feed.len(), 11);
    assert_ne!(a.params.output, b.params.output);
    assert_eq!(a.params.decoder, b.params.decoder);
    assert!(!a.vocabs.input.contains("@evi@"));
}

#[test]
fn independent_is_multiplicative_for_equal_tasks() {
    let t = TaskSpec::new("a", vocab(&["p", "q"]), vocab(&["x"]));
    let mut u = t.clone();
    u.task_id = "b".into();
    let single = assemble::<f64>(ArchKind::Independent, vec![t.clone()], DIMS, 0).unwrap();
    let pair = assemble::<f64>(ArchKind::Independent, vec![t, u], DIMS, 0).unwrap();
    assert_eq!(pair.count_params().total, 2 * single.count_params().total);
}

#[test]
fn counts_match_closed_form() {
    let (e, h, a, l) = (DIMS.embed, DIMS.hidden, DIMS.attention, DIMS.layers);
    let gru = |i: usize| 3 * (i * h + h * h + h);
    let stack = |i: usize| gru(i) + (l - 1) * gru(h);
    let single = |vin: usize, vout: usize| vin * e + stack(e) + 2 * h * a + a + vout * e + stack(e + h) + 2 * h * vout;
    let m = build(ArchKind::Independent);
    assert_eq!(m.count_params().total, single(7, 8) + single(6, 8));
    let m = build(ArchKind::OneToOne);
    // input union: 4 + play a b c + 2 task tokens
    assert_eq!(m.count_params().total, single(10, 11));
}

#[test]
fn relations_between_architectures() {
    let c = |a| build(a).count_params();
    let (many, one, share) = (
        c(ArchKind::OneToMany),
        c(ArchKind::OneToOne),
        c(ArchKind::OneToShareMany),
    );
    assert!(many.total > one.total);
    assert!(many.total > share.total);
    let out_block = share.kind_total(BlockKind::OutputLayer) / 2;
    assert!(one.total.abs_diff(share.total) <= out_block);
}

#[test]
fn route_reads_expected_blocks() {
    let m = build(ArchKind::OneToMany);
    let r = m.route_batch("alexa").unwrap();
    let names: Vec<&str> = r.blocks.iter().map(|&b| m.blocks[b].name.as_str()).collect();
    assert!(names.contains(&"shared.encoder"));
    assert!(names.contains(&"alexa.decoder"));
    assert!(!names.iter().any(|n| n.starts_with("evi.")));
    assert!(matches!(m.route_batch("nope"), Err(Error::UnknownTask(_))));
}

#[test]
fn duplicate_tasks_rejected() {
    let mut t = two_tasks();
    t[1].task_id = "evi".into();
    assert!(matches!(
        assemble::<f64>(ArchKind::OneToOne, t, DIMS, 0),
        Err(Error::DuplicateTask(_))
    ));
    assert!(assemble::<f64>(ArchKind::OneToOne, vec![], DIMS, 0).is_err());
}

#[test]
fn assembly_is_deterministic() {
    let a = build(ArchKind::OneToShareMany);
    let b = build(ArchKind::OneToShareMany);
    for (x, y) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn augment_only_for_one_to_one() {
    let t = &two_tasks()[0];
    let x = vec!["a".to_string(), "b".to_string()];
    assert_eq!(augment_input(&x, t, ArchKind::OneToOne), ["@evi@", "a", "b"]);
    for arch in [ArchKind::Independent, ArchKind::OneToMany, ArchKind::OneToShareMany] {
        assert_eq!(augment_input(&x, t, arch), x);
    }
}

#[test]
fn task_sampling_is_uniform_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    assert!((0..100).all(|_| sample_task(&mut rng, 1) == 0));
    let draws: Vec<usize> = (0..10_000).map(|_| sample_task(&mut rng, 2)).collect();
    let ones = draws.iter().filter(|&&d| d == 1).count() as f64 / 10_000.0;
    assert!((0.47..=0.53).contains(&ones), "{ones}");
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<usize> = (0..50).map(|_| sample_task(&mut r1, 3)).collect();
    let b: Vec<usize> = (0..50).map(|_| sample_task(&mut r2, 3)).collect();
    assert_eq!(a, b);
}

#[test]
fn report_table_lists_every_block() {
    let r = build(ArchKind::OneToShareMany).count_params();
    let text = r.to_string();
    for b in &r.blocks {
        assert!(text.contains(&b.name));
    }
    assert!(text.contains("total"));
    let t = format_arch_table(&[ArchSummary {
        arch: ArchKind::OneToOne,
        params: r.total,
        step_seconds: Some(0.5),
    }]);
    assert!(t.contains("one2one") && t.contains("0.5000"));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(ArchKind::OneToShareMany);
    save_model(&m, dir.path()).unwrap();
    let back: ModelAssembly<f64> = load_model(dir.path()).unwrap();
    assert_eq!(back.arch, m.arch);
    assert_eq!(back.tasks, m.tasks);
    for (x, y) in back.store.iter().zip(m.store.iter()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.value, y.value);
    }
}
