use std::collections::HashSet;

use multiparse::data::{default_grammar, generate_synthetic, Example};
use multiparse::multitask::ArchKind;
use multiparse::numcore::write_checkpoint;
use multiparse::train_eval::{build_model, decode_tokens, evaluate, postprocess, TaskData, TrainConfig};
use multiparse::ModelAssembly;
use proptest::prelude::*;

fn untrained() -> (ModelAssembly, Vec<Example>) {
    let c = generate_synthetic(&default_grammar(), 60, 4, [0.8, 0.1, 0.1]).unwrap();
    let data = vec![TaskData {
        task_id: c.tasks[0].task.clone(),
        train: c.tasks[0].train.clone(),
        dev: Vec::new(),
    }];
    let cfg = TrainConfig {
        embed: 8,
        hidden: 8,
        attention: 8,
        ..TrainConfig::default()
    };
    (
        build_model(ArchKind::Independent, &data, &cfg).unwrap(),
        c.tasks[0].test.clone(),
    )
}

#[test]
fn scores_only_depend_on_predictions() {
    let (model, test) = untrained();
    let mut before = Vec::new();
    write_checkpoint(&model.store, &mut before).unwrap();

    let as_predicted: Vec<Example> = test
        .iter()
        .map(|ex| {
            let d = decode_tokens(&model, 0, &ex.utterance, None).unwrap();
            Example {
                logical_form: postprocess(&d.tokens),
                ..ex.clone()
            }
        })
        .collect();
    let perfect = evaluate(&model, "mrl_a", &as_predicted, None).unwrap();
    assert_eq!(perfect.exact_match, 1.0);
    assert_eq!(perfect.exact, test.len());
    assert!(perfect.errors.is_empty());

    let unreachable: Vec<Example> = as_predicted
        .iter()
        .map(|ex| {
            let mut lf = ex.logical_form.clone();
            lf.push("never-emitted".into());
            Example {
                logical_form: lf,
                ..ex.clone()
            }
        })
        .collect();
    let none = evaluate(&model, "mrl_a", &unreachable, None).unwrap();
    assert_eq!(none.exact_match, 0.0);
    assert_eq!(none.errors.len(), test.len());
    assert_eq!(none.oov_total, test.len() + perfect.oov_total);

    assert_eq!(
        evaluate(&model, "mrl_a", &test, None).unwrap(),
        evaluate(&model, "mrl_a", &test, None).unwrap()
    );
    let mut after = Vec::new();
    write_checkpoint(&model.store, &mut after).unwrap();
    assert_eq!(before, after);
}

#[test]
fn unknown_task_is_rejected() {
    let (model, test) = untrained();
    assert!(evaluate(&model, "mrl_z", &test, None).is_err());
}

#[test]
fn generated_test_entities_are_mostly_unseen() {
    let c = generate_synthetic(&default_grammar(), 1000, 1, [0.8, 0.1, 0.1]).unwrap();
    let grammar = default_grammar();
    let entities: HashSet<&str> = ["song", "artist", "city", "destination", "contact"]
        .iter()
        .flat_map(|s| grammar.entities(s).unwrap())
        .map(String::as_str)
        .collect();
    for split in &c.tasks {
        let seen: HashSet<&str> = split
            .train
            .iter()
            .flat_map(|e| &e.utterance)
            .map(String::as_str)
            .filter(|t| entities.contains(t))
            .collect();
        let test: Vec<&str> = split
            .test
            .iter()
            .flat_map(|e| &e.utterance)
            .map(String::as_str)
            .filter(|t| entities.contains(t))
            .collect();
        let unseen = test.iter().filter(|t| !seen.contains(*t)).count() as f64 / test.len() as f64;
        assert!(unseen >= 0.30, "{}: {unseen}", split.task);
    }
}

fn depth_ok(tokens: &[String]) -> bool {
    let mut depth = 0i64;
    for t in tokens {
        match t.as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

proptest! {
    #[test]
    fn repaired_output_is_balanced_and_stable(
        raw in prop::collection::vec(prop::sample::select(vec!["(", ")", "a", "b", "c"]), 0..40)
    ) {
        let tokens: Vec<String> = raw.into_iter().map(String::from).collect();
        let once = postprocess(&tokens);
        prop_assert!(depth_ok(&once));
        prop_assert_eq!(postprocess(&once), once.clone());
        let words = |v: &[String]| v.iter().filter(|t| *t != "(" && *t != ")").count();
        prop_assert!(words(&once) <= words(&tokens));
    }
}
