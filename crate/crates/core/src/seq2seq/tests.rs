use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::grad_check;

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
    (
        store,
        Seq2SeqParams {
            src_embed,
            encoder,
            attention,
            tgt_embed,
            decoder,
            output,
        },
    )
}

fn scale_all(store: &mut ParamStore<f64>, factor: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v *= factor;
        }
    }
}

fn dims(layers: usize) -> ModelDims {
    ModelDims {
        embed: 3,
        hidden: 4,
        attention: 3,
        layers,
    }
}

#[test]
fn single_token_is_one_stacked_cell_application() {
    let (store, p) = model(6, 5, dims(2), 1);
    let mut tape = Tape::new();
    let enc = encode(
        &mut tape,
        &store,
        &p,
        &EncoderInput::single(vec![4], vec![true]),
        &mut None,
    )
    .unwrap();
    assert_eq!(enc.len(), 1);

    let mut t2 = Tape::new();
    let table = t2.param(&store, p.src_embed);
    let x = t2.gather(table, &[4]).unwrap();
    let z0 = t2.leaf(Tensor::zeros(&[1, 4]));
    let h1 = gru_cell(&mut t2, &store, x, z0, &p.encoder[0]).unwrap();
    let z1 = t2.leaf(Tensor::zeros(&[1, 4]));
    let h2 = gru_cell(&mut t2, &store, h1, z1, &p.encoder[1]).unwrap();
    assert_eq!(tape.value(enc.states[0]).data(), t2.value(h2).data());
}

#[test]
fn repeated_token_states_differ() {
    let (store, p) = model(6, 5, dims(1), 2);
    let mut tape = Tape::new();
    let enc = encode(
        &mut tape,
        &store,
        &p,
        &EncoderInput::single(vec![3, 3], vec![true; 2]),
        &mut None,
    )
    .unwrap();
    assert_eq!(enc.len(), 2);
    assert_ne!(tape.value(enc.states[0]).data(), tape.value(enc.states[1]).data());
}

#[test]
fn encoder_rejects_unknown_id() {
    let (store, p) = model(6, 5, dims(1), 2);
    let mut tape = Tape::new();
    let res = encode(
        &mut tape,
        &store,
        &p,
        &EncoderInput::single(vec![6], vec![true]),
        &mut None,
    );
    assert!(matches!(res, Err(Error::UnknownId { id: 6, size: 6 })));
}

#[test]
fn first_step_with_zero_v_attends_to_mean_state() {
    let (mut store, p) = model(6, 5, dims(1), 3);
    store.get_mut(p.attention.v).value.fill(0.0);
    let mut tape = Tape::new();
    let enc = encode(
        &mut tape,
        &store,
        &p,
        &EncoderInput::single(vec![1, 4, 5], vec![true; 3]),
        &mut None,
    )
    .unwrap();
    let keys = AttentionKeys::new(&mut tape, &store, &enc, &p.attention).unwrap();
    let s0 = initial_state(&mut tape, &p, 1);
    let out = decoder_step(&mut tape, &store, &p, &[1], &s0, &enc, &keys, &mut None).unwrap();
    let ctx = tape.value(out.context).data().to_vec();
    for (k, c) in ctx.iter().enumerate() {
        let mean = enc.states.iter().map(|&s| tape.value(s).data()[k]).sum::<f64>() / 3.0;
        assert!((c - mean).abs() < 1e-15);
    }
}

#[test]
fn decoder_step_is_deterministic() {
    let (store, p) = model(6, 5, dims(2), 4);
    let run = || {
        let mut tape = Tape::new();
        let enc = encode(
            &mut tape,
            &store,
            &p,
            &EncoderInput::single(vec![2, 5, 4], vec![true; 3]),
            &mut None,
        )
        .unwrap();
        let keys = AttentionKeys::new(&mut tape, &store, &enc, &p.attention).unwrap();
        let s0 = initial_state(&mut tape, &p, 1);
        let out = decoder_step(&mut tape, &store, &p, &[3], &s0, &enc, &keys, &mut None).unwrap();
        let mut vals: Vec<f64> = out.state.iter().flat_map(|&s| tape.value(s).data().to_vec()).collect();
        vals.extend(tape.value(out.scores).data());
        vals.extend(tape.value(out.context).data());
        vals
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn write_logits_zero_and_one_hot() {
    let (mut store, p) = model(6, 5, dims(1), 5);
    let mut tape = Tape::new();
    let s = tape.leaf(Tensor::from_rows(&[&[0.1, 0.2, 0.3, 0.4]]));
    let c = tape.leaf(Tensor::from_rows(&[&[0.5, 0.6, 0.7, 0.8]]));
    store.get_mut(p.output).value.fill(0.0);
    let z = write_logits(&mut tape, &store, s, c, p.output, &mut None).unwrap();
    assert_eq!(tape.value(z).data(), &[0.0; 5]);

    // column 2 of O picks coordinate 6 of [s; c]
    let mut tape = Tape::new();
    let s = tape.leaf(Tensor::from_rows(&[&[0.1, 0.2, 0.3, 0.4]]));
    let c = tape.leaf(Tensor::from_rows(&[&[0.5, 0.6, 0.7, 0.8]]));
    let cols = 5;
    store.get_mut(p.output).value.data_mut()[6 * cols + 2] = 1.0;
    let z = write_logits(&mut tape, &store, s, c, p.output, &mut None).unwrap();
    assert_eq!(tape.value(z).data(), &[0.0, 0.0, 0.7, 0.0, 0.0]);
}

#[test]
fn write_logits_rejects_width_mismatch() {
    let (store, p) = model(6, 5, dims(1), 5);
    let mut tape = Tape::new();
    let s = tape.leaf(Tensor::zeros(&[1, 4]));
    let c = tape.leaf(Tensor::zeros(&[1, 3]));
    assert!(write_logits(&mut tape, &store, s, c, p.output, &mut None).is_err());
}

/// Probe-weighted sum over two decoder steps and their write logits.
fn composite_loss(
    store: &ParamStore<f64>,
    tape: &mut Tape<f64>,
    p: &Seq2SeqParams,
    src: &[usize],
    probes: &[Tensor<f64>],
) -> Result<Var> {
    let enc = encode(
        tape,
        store,
        p,
        &EncoderInput::single(src.to_vec(), vec![true; src.len()]),
        &mut None,
    )?;
    let keys = AttentionKeys::new(tape, store, &enc, &p.attention)?;
    let mut s = initial_state(tape, p, 1);
    let mut total = None;
    for (j, y) in [1usize, 3].iter().enumerate() {
        let out = decoder_step(tape, store, p, &[*y], &s, &enc, &keys, &mut None)?;
        let logits = write_logits(
            tape,
            store,
            *out.state.last().unwrap(),
            out.context,
            p.output,
            &mut None,
        )?;
        let w = tape.leaf(probes[2 * j].clone());
        let wl = tape.mul(logits, w)?;
        let w2 = tape.leaf(probes[2 * j + 1].clone());
        let ws = tape.mul(out.scores, w2)?;
        let both = tape.concat(&[wl, ws], 1)?;
        let term = tape.sum_all(both);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
        s = out.state;
    }
    Ok(total.unwrap())
}

#[test]
fn encoder_decoder_composite_gradient_check() {
    for (layers, seed) in [(1usize, 21u64), (2, 22)] {
        let (mut store, p) = model(6, 5, dims(layers), seed);
        scale_all(&mut store, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let probes: Vec<Tensor<f64>> = (0..4)
            .map(|k| {
                let cols = if k % 2 == 0 { 5 } else { 3 };
                Tensor::uniform(&[1, cols], -1.0, 1.0, &mut rng)
            })
            .collect();
        let src = [2usize, 5, 4];
        let ids = p.ids();
        let report = grad_check(&mut store, &ids, 1e-5, |s, tape| {
            composite_loss(s, tape, &p, &src, &probes)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "layers {layers}: {report:?}");
    }
}
