//! Finite-difference verification suite covering every differentiable engine
//! op and a tiny end-to-end classifier configuration.
//!
//! Each op is checked at several random points; inputs are resampled
//! whenever a ReLU or pooling kink sits too close to the evaluation point
//! for central differences to be meaningful.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::clsa::{ClsaConfig, ClsaModel};
use crate::engine::ops::derive_rng;
use crate::engine::{
    grad_check, Activation, GradCheckReport, Mode, ParamSet, RunningStats, Src, Tape, Tensor,
    FD_STEP,
};
use crate::error::Result;

/// Smallest allowed distance between an evaluation point and a kink,
/// comfortably above the finite-difference step.
const KINK_MARGIN: f64 = 100.0 * FD_STEP;

fn sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

/// Check one op: `build` records the op (and a scalar reduction of it) on a
/// tape whose inputs arrive as nodes shaped per `shapes`; gradients of the
/// scalar with respect to every input are compared against central
/// differences at `points` random points.
fn check_op<F>(
    name: &str,
    tol: f64,
    points: usize,
    seed: u64,
    shapes: &[&[usize]],
    build: F,
) -> GradCheckReport
where
    F: for<'p> Fn(&mut Tape<'p>, &[Src], u64) -> Result<Src>,
{
    let empty = ParamSet::new();
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();

    let run = |theta: &[f64], aux: u64| -> (f64, Vec<f64>, f64) {
        let mut tape = Tape::new(&empty);
        let mut srcs = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (shape, &n) in shapes.iter().zip(&sizes) {
            let t = Tensor::new(shape.to_vec(), theta[off..off + n].to_vec()).expect("shape");
            srcs.push(tape.input(t));
            off += n;
        }
        let loss = build(&mut tape, &srcs, aux).expect("forward");
        let margin = tape.kink_margin();
        let value = tape.value(loss).values()[0];
        tape.backward(loss).expect("backward");
        let mut analytic = Vec::with_capacity(total);
        for (&src, &n) in srcs.iter().zip(&sizes) {
            match tape.grad(src) {
                Some(g) => analytic.extend_from_slice(g),
                None => analytic.extend(std::iter::repeat(0.0).take(n)),
            }
        }
        (value, analytic, margin)
    };

    let mut merged: Option<GradCheckReport> = None;
    for point in 0..points {
        let mut rng = derive_rng(seed, &[40, point as u64]);
        let (theta, analytic, aux) = loop {
            let theta = sample(&mut rng, total);
            let aux: u64 = rng.gen();
            let (_, analytic, margin) = run(&theta, aux);
            if margin > KINK_MARGIN {
                break (theta, analytic, aux);
            }
        };
        let report =
            grad_check(name, |t| run(t, aux).0, &theta, &analytic, tol);
        match &mut merged {
            Some(m) => m.merge(&report),
            None => merged = Some(report),
        }
    }
    merged.expect("at least one point")
}

fn aux_rng(aux: u64) -> ChaCha8Rng {
    derive_rng(aux, &[41])
}

/// Scalar projection with weights drawn from the point's aux stream, so the
/// whole Jacobian is exercised while finite differences stay scalar.
fn project_out(tape: &mut Tape<'_>, y: Src, aux: u64) -> Result<Src> {
    let n = tape.value(y).numel();
    let r = sample(&mut aux_rng(aux), n);
    tape.project(y, &r)
}

fn check_dense(tol: f64, points: usize, seed: u64) -> GradCheckReport {
    const ACTS: [Activation; 4] =
        [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Linear];
    let mut merged: Option<GradCheckReport> = None;
    for (i, act) in ACTS.iter().enumerate() {
        let r = check_op(
            "dense",
            tol,
            points.div_ceil(ACTS.len()),
            seed.wrapping_add(i as u64),
            &[&[2, 3], &[3, 4], &[4]],
            move |tape, srcs, aux| {
                let y = tape.dense(srcs[0], srcs[1], srcs[2], *act)?;
                project_out(tape, y, aux)
            },
        );
        match &mut merged {
            Some(m) => m.merge(&r),
            None => merged = Some(r),
        }
    }
    merged.expect("acts checked")
}

/// Build every per-op check. Returns one report per op name.
pub fn run_suite(seed: u64, tol: f64, points: usize) -> Vec<GradCheckReport> {
    let mut reports = vec![
        check_dense(tol, points, seed),
        check_op("conv1d", tol, points, seed, &[&[6, 2], &[3, 2, 4], &[4]], |tape, s, aux| {
            let y = tape.conv1d(s[0], s[1], s[2])?;
            project_out(tape, y, aux)
        }),
        check_op("batchnorm1d", tol, points, seed, &[&[5, 3], &[3], &[3]], |tape, s, aux| {
            let mut stats = RunningStats::new(3, 0.9);
            let y = tape.batchnorm1d(s[0], s[1], s[2], 1e-5, Mode::Train, &mut stats)?;
            project_out(tape, y, aux)
        }),
        check_op("maxpool1d", tol, points, seed, &[&[6, 3]], |tape, s, aux| {
            let y = tape.maxpool1d(s[0])?;
            project_out(tape, y, aux)
        }),
        check_op("dropout", tol, points, seed, &[&[4, 5]], |tape, s, aux| {
            // fixed mask per point: the op is linear in x given the seed
            let y = tape.dropout(s[0], 0.3, Mode::Train, aux)?;
            project_out(tape, y, aux)
        }),
        check_op(
            "lstm",
            tol,
            points,
            seed,
            &[&[3, 2], &[2, 16], &[4, 16], &[16]],
            |tape, s, aux| {
                let y = tape.lstm(s[0], s[1], s[2], s[3])?;
                project_out(tape, y, aux)
            },
        ),
        check_op("embedding", tol, points, seed, &[&[5, 3]], |tape, s, aux| {
            let mut rng = aux_rng(aux);
            let ids: Vec<u32> = (0..7).map(|_| rng.gen_range(0..5)).collect();
            let y = tape.embedding(s[0], &ids)?;
            project_out(tape, y, aux)
        }),
        check_op("softmax_rows", tol, points, seed, &[&[3, 4]], |tape, s, aux| {
            let y = tape.softmax_rows(s[0])?;
            project_out(tape, y, aux)
        }),
        check_op("self_attention", tol, points, seed, &[&[4, 3]], |tape, s, aux| {
            let (z, _) = tape.self_attention(s[0])?;
            project_out(tape, z, aux)
        }),
        check_op(
            "self_attention_proj",
            tol,
            points,
            seed,
            &[&[4, 3], &[3, 3], &[3, 3], &[3, 3]],
            |tape, s, aux| {
                let (z, _) = tape.self_attention_proj(s[0], s[1], s[2], s[3])?;
                project_out(tape, z, aux)
            },
        ),
        check_op("mse_loss", tol, points, seed, &[&[6]], |tape, s, aux| {
            let target = Tensor::new(vec![6], sample(&mut aux_rng(aux), 6)).expect("shape");
            tape.mse_loss(s[0], &target)
        }),
        check_op("cross_entropy", tol, points, seed, &[&[3, 5]], |tape, s, aux| {
            let mut rng = aux_rng(aux);
            let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
            tape.cross_entropy(s[0], &labels)
        }),
        check_clsa_end_to_end(tol, points, seed),
    ];
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}

/// Tiny full-stack check: T=12 tokens, 4 conv filters, 6 LSTM units, dense
/// 8/4/5, fine-tuned embedding, dropout active with a fixed mask, loss =
/// cross-entropy + LSTM-kernel L2. Differentiates with respect to every
/// trainable parameter at once.
fn check_clsa_end_to_end(tol: f64, points: usize, seed: u64) -> GradCheckReport {
    let config = ClsaConfig {
        embed_dim: 3,
        conv_filters: 4,
        kernel_size: 3,
        lstm_units: 6,
        dense1: 8,
        dense2: 4,
        dropout_rate: 0.2,
        l2_kernel: 0.2,
        finetune_embedding: true,
        ..ClsaConfig::default()
    };
    let vocab_len = 9;
    let t_len = 12;

    let run = |model: &ClsaModel, ids: &[u32], theta: &[f64], drop_seed: u64| -> (f64, Vec<f64>, f64) {
        // install theta into a scratch copy of the parameters
        let mut scratch = model.clone();
        let mut off = 0;
        let names: Vec<String> = scratch.params.names().map(str::to_string).collect();
        for name in &names {
            let p = scratch.params.get_mut(name).expect("param");
            let n = p.value.numel();
            p.value.values_mut().copy_from_slice(&theta[off..off + n]);
            off += n;
        }
        let mut stats = scratch.clsa_stats_clone();
        let (value, grads, margin) =
            scratch.train_loss_on_tape(ids, drop_seed, &mut stats).expect("forward");
        let mut analytic = Vec::with_capacity(theta.len());
        for name in &names {
            analytic.extend_from_slice(&grads[name.as_str()]);
        }
        (value, analytic, margin)
    };

    let mut merged: Option<GradCheckReport> = None;
    for point in 0..points {
        let mut rng = derive_rng(seed, &[42, point as u64]);
        let (model, ids, theta0, analytic, drop_seed) = loop {
            let emb = Tensor::new(vec![vocab_len, 3], sample(&mut rng, vocab_len * 3)).unwrap();
            let model = ClsaModel::init(emb, config.clone(), rng.gen()).unwrap();
            let ids: Vec<u32> = (0..t_len).map(|_| rng.gen_range(0..vocab_len as u32)).collect();
            let drop_seed: u64 = rng.gen();
            let theta0: Vec<f64> = model
                .params
                .iter()
                .flat_map(|(_, p)| p.value.values().to_vec())
                .collect();
            let (_, analytic, margin) = run(&model, &ids, &theta0, drop_seed);
            if margin > KINK_MARGIN {
                break (model, ids, theta0, analytic, drop_seed);
            }
        };
        let report = grad_check(
            "clsa_end_to_end",
            |t| run(&model, &ids, t, drop_seed).0,
            &theta0,
            &analytic,
            tol,
        );
        match &mut merged {
            Some(m) => m.merge(&report),
            None => merged = Some(report),
        }
    }
    merged.expect("at least one point")
}

impl ClsaModel {
    fn clsa_stats_clone(&self) -> RunningStats {
        self.bn_stats.clone()
    }

    /// Cross-entropy-plus-L2 training loss of one sequence in train mode,
    /// with parameter gradients and the forward kink margin. Used by the
    /// end-to-end gradient check.
    fn train_loss_on_tape(
        &self,
        ids: &[u32],
        dropout_seed: u64,
        stats: &mut RunningStats,
    ) -> Result<(f64, std::collections::BTreeMap<String, Vec<f64>>, f64)> {
        let mut tape = Tape::new(&self.params);
        let logits =
            crate::clsa::train_forward_for_check(&mut tape, &self.config, ids, dropout_seed, stats)?;
        let ce = tape.cross_entropy(logits, &[ids[0] as usize % 5])?;
        let wx = tape.param("lstm.wx")?;
        let penalty = tape.squared_norm(wx, self.config.l2_kernel)?;
        let loss = tape.add_scalars(ce, penalty)?;
        let margin = tape.kink_margin();
        let value = tape.value(loss).values()[0];
        tape.backward(loss)?;
        let mut grads = tape.take_param_grads();
        for name in self.params.names() {
            grads.entry(name.to_string()).or_insert_with(|| {
                vec![0.0; self.params.get(name).unwrap().value.numel()]
            });
        }
        Ok((value, grads, margin))
    }
}
