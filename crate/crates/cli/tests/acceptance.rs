//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdicts always appear in the
//! output; the process exits nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use cladnet::augment::{AugmentKind, AugmentSpec};
use cladnet::classifier::{
    distillation_loss, supervised_objective, Classifier, CnnConfig, DistillMode, ModelSnapshot, SupervisedConfig,
    SupervisedTrainer,
};
use cladnet::continual::{AccuracyMatrix, ReplayBuffer, ReplayItem, StrategyKind};
use cladnet::data::{ActivityMapping, DatasetConfig, DatasetKind, SensorWindow};
use cladnet::ssl::{barlow_twins_loss, cross_correlation, ntxent_loss, SslConfig, SslLoss, SslTrainer};
use cladnet::sslnet::{aggregate, cross_attention_branch, AttentionMode, BodyPartition, BranchVars, Mode, Transformer, TransformerConfig};
use cladnet_cli::experiment::{load_dataset, run_seeds, RunRecord};
use cladnet_cli::table::Table;
use cladnet_cli::{cmd_ablate, Axis, ExperimentConfig};
use cladnet_core::{finite_difference_check, nn, Binding, Tape64, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Mat = Vec<Vec<f64>>;

const SYNTHETIC: &str = include_str!("../../../configs/synthetic.toml");

const TINY: &str = r#"
[dataset.synthetic]
subjects = 3
windows_per_subject = 40
class_frequencies = [2.0]
rotation = 2.0

[model.transformer]
d_model = 4
heads = 1
ff_hidden = 8
blocks = 1

[model.cnn]
widths = [4, 4]
convs_per_block = 2
kernel = 3

[ssl]
epochs = 1

[run]
epochs = 1
batch_size = 8
lr = 0.003
seeds = [0]
"#;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    Tensor64::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn to_mat(t: &Tensor64) -> Mat {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- models

fn tiny_transformer(seed: u64, heads: usize, attention: AttentionMode, dropout: f64) -> Transformer<f64> {
    let cfg = TransformerConfig {
        d_model: 4,
        heads,
        ff_hidden: Some(6),
        dropout,
        blocks: 2,
        attention,
    };
    let mut net = Transformer::new(cfg, BodyPartition::new(4, vec![vec![0, 2], vec![1, 3]], 0).unwrap(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in net.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    net
}

fn tiny_classifier(seed: u64, widths: Vec<usize>, d_model: usize) -> Classifier<f64> {
    let cfg = CnnConfig {
        widths,
        convs_per_block: 2,
        kernel: 3,
        pool_window: 2,
        pool_stride: 2,
    };
    let mut m = Classifier::new(cfg, 4, d_model, 3, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5);
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    m
}

fn branch_vars(tape: &mut Tape64, vars: &[cladnet_core::Var], heads: usize) -> BranchVars {
    BranchVars {
        wq: vars[..heads].to_vec(),
        wk: vars[heads..2 * heads].to_vec(),
        wv: vars[2 * heads..3 * heads].to_vec(),
        wh: {
            let _ = tape.len();
            vars[3 * heads]
        },
    }
}

// ------------------------------------------------------------ criterion 1

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // cross-attention branch, every input and weight treated as a parameter
    {
        let (b, l, dm, heads) = (2, 4, 3, 2);
        let mut ps = vec![random(&[b * l, dm], &mut rng), random(&[b * l, dm], &mut rng)];
        ps.extend((0..3 * heads).map(|_| random(&[dm, dm], &mut rng)));
        ps.push(random(&[heads * dm, dm], &mut rng));
        let probe = random(&[b * l, dm], &mut rng);
        let rep = finite_difference_check(
            |tape, v| {
                let bv = branch_vars(tape, &v[2..], heads);
                let (out, _) = cross_attention_branch(tape, v[0], v[1], &bv, b, l).unwrap();
                let w = tape.mul_const(out, probe.clone())?;
                Ok(tape.sum(w))
            },
            &ps,
            1e-5,
        )
        .map_err(err)?;
        worst.push(("cross-attention branch", rep.max_rel_error));
    }

    // full transformer, training mode with dropout under a fixed generator
    for attention in [AttentionMode::Cross, AttentionMode::SelfAttention] {
        let net = tiny_transformer(2, 2, attention, 0.2);
        let x = random(&[2, 5, 4], &mut rng);
        let probe = random(&[2, 4], &mut rng);
        let rep = finite_difference_check(
            |tape, v| {
                let bind = Binding::from_vars(v.to_vec());
                let mut g = ChaCha8Rng::seed_from_u64(9);
                let out = net.forward(tape, &bind, &x, Mode::Train(&mut g)).unwrap();
                let w = tape.mul_const(out.r, probe.clone())?;
                Ok(tape.sum(w))
            },
            net.params.tensors(),
            1e-5,
        )
        .map_err(err)?;
        worst.push(("transformer", rep.max_rel_error));
    }

    // CNN blocks with and without a projection shortcut
    for widths in [vec![4], vec![3, 5]] {
        let model = tiny_classifier(3, widths, 0);
        let x = random(&[2, 8, 4], &mut rng);
        let width = model.config.feature_width();
        let probe = random(&[2, width], &mut rng);
        let rep = finite_difference_check(
            |tape, v| {
                let bind = Binding::from_vars(v.to_vec());
                let h = model.features(tape, &bind, &x).unwrap();
                let w = tape.mul_const(h, probe.clone())?;
                Ok(tape.sum(w))
            },
            model.params.tensors(),
            1e-5,
        )
        .map_err(err)?;
        worst.push(("cnn block", rep.max_rel_error));
    }

    // self-supervised losses on representation pairs
    let pair = [random(&[6, 3], &mut rng), random(&[6, 3], &mut rng)];
    let rep = finite_difference_check(|tape, v| Ok(barlow_twins_loss(tape, v[0], v[1], 0.5).unwrap()), &pair, 1e-5)
        .map_err(err)?;
    worst.push(("barlow twins", rep.max_rel_error));
    let rep = finite_difference_check(|tape, v| Ok(ntxent_loss(tape, v[0], v[1], 0.5).unwrap()), &pair, 1e-5)
        .map_err(err)?;
    worst.push(("nt-xent", rep.max_rel_error));

    // supervised total loss with a teacher, both distillation modes
    let model = tiny_classifier(4, vec![3, 4], 2);
    let teacher = ModelSnapshot::new(&tiny_classifier(5, vec![3, 4], 2), 1);
    let x = random(&[4, 8, 4], &mut rng);
    let r = random(&[4, 2], &mut rng);
    let labels = [0, 2, 1, 2];
    for mode in [DistillMode::L2Logits, DistillMode::KlSoftmax] {
        let rep = finite_difference_check(
            |tape, v| {
                let bind = Binding::from_vars(v.to_vec());
                let rv = tape.constant(r.clone());
                let obj = supervised_objective(tape, &model, &bind, &x, Some(rv), &labels, Some(&teacher), 1.0, mode, None)
                    .unwrap();
                Ok(obj.total)
            },
            model.params.tensors(),
            1e-5,
        )
        .map_err(err)?;
        worst.push(("ce + distill", rep.max_rel_error));
    }

    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max relative error {max:.2e} over {} checks in {secs:.1}s", worst.len());
    ensure(max < 1e-4, || format!("{detail}; {worst:?}"))?;
    ensure(secs < 60.0, || format!("{detail}; over the 60 s budget"))?;
    Ok(detail)
}

// ------------------------------------------------------------ criterion 2

fn conv_oracle(x: &Mat, w: &Tensor64, b: &Tensor64, pad: usize) -> Mat {
    let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let len = x[0].len();
    let len_out = len + 2 * pad - k + 1;
    let mut y = vec![vec![0.0; len_out]; c_out];
    for o in 0..c_out {
        for t in 0..len_out {
            let mut acc = b.data()[o];
            for i in 0..c_in {
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src >= 0 && (src as usize) < len {
                        acc += w.data()[(o * c_in + i) * k + j] * x[i][src as usize];
                    }
                }
            }
            y[o][t] = acc;
        }
    }
    y
}

fn attention_oracle(zq: &Mat, zi: &Mat, wq: &[Mat], wk: &[Mat], wv: &[Mat], wh: &Mat) -> Mat {
    let l = zq.len();
    let dm = zq[0].len();
    let mut concat = vec![Vec::new(); l];
    for h in 0..wq.len() {
        let (q, k, v) = (mm(zq, &wq[h]), mm(zi, &wk[h]), mm(zi, &wv[h]));
        for i in 0..l {
            let s: Vec<f64> = (0..l)
                .map(|j| (0..dm).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dm as f64).sqrt())
                .collect();
            let m = s.iter().copied().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dm {
                concat[i].push((0..l).map(|j| e[j] / z * v[j][c]).sum());
            }
        }
    }
    mm(&concat, wh)
}

fn correlation_oracle(a: &Mat, b: &Mat) -> Mat {
    let d = a[0].len();
    let mut c = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let num: f64 = (0..a.len()).map(|n| a[n][i] * b[n][j]).sum();
            let na: f64 = (0..a.len()).map(|n| a[n][i] * a[n][i]).sum();
            let nb: f64 = (0..a.len()).map(|n| b[n][j] * b[n][j]).sum();
            c[i][j] = num / ((na + 1e-12).sqrt() * (nb + 1e-12).sqrt());
        }
    }
    c
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tol = 1e-10;
    let cases = 100;

    for case in 0..cases {
        let (c_in, c_out, len) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(3..9));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let pad = k / 2;
        let x = random(&[c_in, len], &mut rng);
        let w = random(&[c_out, c_in, k], &mut rng);
        let b = random(&[c_out], &mut rng);
        let got = nn::conv1d(&x, &w, Some(&b), 1, pad).map_err(err)?;
        let want = conv_oracle(&to_mat(&x), &w, &b, pad);
        for o in 0..c_out {
            for t in 0..want[0].len() {
                ensure(close(got.at2(o, t), want[o][t], tol), || format!("conv1d case {case}"))?;
            }
        }
    }

    for case in 0..cases {
        let (l, dm, heads) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..3));
        let zq = random(&[l, dm], &mut rng);
        let zi = random(&[l, dm], &mut rng);
        let ws: Vec<Tensor64> = (0..3 * heads).map(|_| random(&[dm, dm], &mut rng)).collect();
        let wh = random(&[heads * dm, dm], &mut rng);
        let mut tape = Tape64::new();
        let q = tape.constant(zq.clone());
        let kv = tape.constant(zi.clone());
        let mut vars: Vec<_> = ws.iter().map(|t| tape.constant(t.clone())).collect();
        vars.push(tape.constant(wh.clone()));
        let bv = branch_vars(&mut tape, &vars, heads);
        let (out, _) = cross_attention_branch(&mut tape, q, kv, &bv, 1, l).map_err(err)?;
        let mats: Vec<Mat> = ws.iter().map(to_mat).collect();
        let want = attention_oracle(
            &to_mat(&zq),
            &to_mat(&zi),
            &mats[..heads],
            &mats[heads..2 * heads],
            &mats[2 * heads..],
            &to_mat(&wh),
        );
        for t in 0..l {
            for c in 0..dm {
                ensure(close(tape.value(out).at2(t, c), want[t][c], tol), || format!("attention case {case}"))?;
            }
        }
    }

    for case in 0..cases {
        let (n, d) = (rng.random_range(2..7), rng.random_range(1..5));
        let a = random(&[n, d], &mut rng);
        let b = random(&[n, d], &mut rng);
        let lambda = rng.random_range(0.0..1.0);
        let mut tape = Tape64::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = cross_correlation(&mut tape, va, vb).map_err(err)?;
        let bt = barlow_twins_loss(&mut tape, va, vb, lambda).map_err(err)?;
        let want = correlation_oracle(&to_mat(&a), &to_mat(&b));
        let mut want_bt = 0.0;
        for i in 0..d {
            for j in 0..d {
                ensure(close(tape.value(c).at2(i, j), want[i][j], tol), || format!("correlation case {case}"))?;
                want_bt += if i == j { (1.0 - want[i][j]).powi(2) } else { lambda * want[i][j].powi(2) };
            }
        }
        ensure(close(tape.value(bt).item(), want_bt, tol), || format!("barlow twins case {case}"))?;
    }

    for case in 0..cases {
        let (n, c) = (rng.random_range(1..5), rng.random_range(2..5));
        let s = Tensor64::from_fn([n, c], |_| rng.random_range(-3.0..3.0));
        let t = Tensor64::from_fn([n, c], |_| rng.random_range(-3.0..3.0));
        let (mut l2, mut kl) = (0.0, 0.0);
        for i in 0..n {
            let (sr, tr) = (s.row(i), t.row(i));
            l2 += sr.iter().zip(tr).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let zs: f64 = sr.iter().map(|v| v.exp()).sum();
            let zt: f64 = tr.iter().map(|v| v.exp()).sum();
            for j in 0..c {
                let p = tr[j].exp() / zt;
                let q = sr[j].exp() / zs;
                kl += p * (p / q).ln();
            }
        }
        for (mode, want) in [(DistillMode::L2Logits, l2 / n as f64), (DistillMode::KlSoftmax, kl / n as f64)] {
            let mut tape = Tape64::new();
            let sv = tape.constant(s.clone());
            let d = distillation_loss(&mut tape, sv, &t, mode).map_err(err)?;
            ensure(close(tape.value(d).item(), want, tol), || format!("distillation {mode:?} case {case}"))?;
        }
    }

    for case in 0..cases {
        let t = rng.random_range(1..7);
        let rows: Mat = (0..t).map(|_| (0..t).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let (mut fa, mut fm, mut la) = (0.0, 0.0, 0.0);
        for i in 0..t {
            fa += rows[i][t - 1];
            la += rows[i][i];
            let mut best = rows[i][0];
            for j in 1..t {
                if rows[i][j] > best {
                    best = rows[i][j];
                }
            }
            fm += best - rows[i][t - 1];
        }
        let m = AccuracyMatrix::from_rows(rows).map_err(err)?;
        let n = t as f64;
        ensure(
            close(m.final_accuracy(), fa / n, tol) && close(m.forgetting_measure(), fm / n, tol) && close(m.learning_accuracy(), la / n, tol),
            || format!("metrics case {case}"),
        )?;
    }

    let hand = AccuracyMatrix::from_rows(vec![vec![1.0, 0.8], vec![0.7, 0.9]]).map_err(err)?;
    ensure((hand.final_accuracy() - 0.85).abs() < 1e-15, || format!("FA {}", hand.final_accuracy()))?;
    ensure((hand.forgetting_measure() - 0.1).abs() < 1e-15, || format!("FM {}", hand.forgetting_measure()))?;
    ensure((hand.learning_accuracy() - 0.95).abs() < 1e-15, || format!("LA {}", hand.learning_accuracy()))?;
    Ok(format!("{cases} random instances each for conv1d, attention, correlation, barlow twins, distillation (2 modes), metrics; T=2 hand cases"))
}

// ------------------------------------------------------------ criterion 3

fn invariant_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let many = 1000;
    let mut counts = Vec::new();

    for _ in 0..many {
        let m = Tensor64::from_fn([rng.random_range(1..5), rng.random_range(1..6)], |_| rng.random_range(-50.0..50.0));
        let s = nn::softmax_rows(&m).map_err(err)?;
        for r in 0..s.shape()[0] {
            let sum: f64 = s.row(r).iter().sum();
            ensure((sum - 1.0).abs() < 1e-12, || format!("softmax row sum {sum}"))?;
        }
    }
    counts.push(("softmax rows", many));

    for case in 0..many {
        let net = tiny_transformer(case as u64, 2, if case % 2 == 0 { AttentionMode::Cross } else { AttentionMode::SelfAttention }, 0.0);
        let x = random(&[2, 4, 4], &mut rng);
        let mut tape = Tape64::new();
        let bind = net.params.bind_frozen(&mut tape);
        let out = net.forward(&mut tape, &bind, &x, Mode::Eval).map_err(err)?;
        for w in out.attention.iter().flatten() {
            let m = tape.value(*w);
            for r in 0..m.shape()[0] {
                let sum: f64 = m.row(r).iter().sum();
                ensure((sum - 1.0).abs() < 1e-9 && m.row(r).iter().all(|&p| p >= 0.0), || format!("attention row {sum}"))?;
            }
        }
    }
    counts.push(("attention weights", many));

    for _ in 0..many {
        let d = rng.random_range(2..9);
        let x = Tensor64::from_fn([1, d], |_| rng.random_range(-10.0..10.0));
        let (y, _) = nn::layer_norm(&x, &Tensor64::ones(vec![d]), &Tensor64::zeros(vec![d]), 1e-5).map_err(err)?;
        let xs = x.row(0);
        let mx = xs.iter().sum::<f64>() / d as f64;
        let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / d as f64;
        let my = y.row(0).iter().sum::<f64>() / d as f64;
        let vy = y.row(0).iter().map(|v| (v - my).powi(2)).sum::<f64>() / d as f64;
        ensure(my.abs() < 1e-12 && (vy - vx / (vx + 1e-5)).abs() < 1e-9, || format!("layer norm mean {my} var {vy}"))?;
    }
    counts.push(("layer-norm moments", many));

    for _ in 0..many {
        let k = rng.random_range(1..5);
        let branches: Vec<Tensor64> = (0..k).map(|_| random(&[3, 2], &mut rng)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let mut tape = Tape64::new();
        let vars: Vec<_> = branches.iter().map(|b| tape.constant(b.clone())).collect();
        let a = aggregate(&mut tape, &vars).map_err(err)?;
        let permuted: Vec<_> = perm.iter().map(|&i| vars[i]).collect();
        let b = aggregate(&mut tape, &permuted).map_err(err)?;
        let diff = tape.value(a).data().iter().zip(tape.value(b).data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(diff < 1e-15, || format!("aggregate differs by {diff}"))?;
    }
    counts.push(("branch-permutation symmetry", many));

    for _ in 0..many {
        let t = rng.random_range(1..8);
        let rows: Mat = (0..t).map(|_| (0..t).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let max = rows.iter().flatten().copied().fold(0.0, f64::max);
        let m = AccuracyMatrix::from_rows(rows).map_err(err)?;
        ensure(m.forgetting_measure() >= 0.0 && m.final_accuracy() <= max, || "FM < 0 or FA > max".into())?;
    }
    counts.push(("FM >= 0", many));

    for _ in 0..many {
        let cap = rng.random_range(0..20);
        let mut b = ReplayBuffer::new(cap);
        for i in 0..rng.random_range(0..100) {
            b.insert(
                ReplayItem {
                    data: Tensor64::scalar(i as f64),
                    label: i,
                    subject: 0,
                },
                &mut rng,
            );
            ensure(b.len() <= cap, || format!("buffer {} over capacity {cap}", b.len()))?;
        }
    }
    counts.push(("buffer capacity", many));

    let some = 50;
    for case in 0..some {
        let mut model = tiny_classifier(case, vec![3, 4], 2);
        let x = random(&[4, 8, 4], &mut rng);
        let r = random(&[4, 2], &mut rng);
        let labels = [0, 1, 2, 1];
        let snap = ModelSnapshot::new(&model, 0);
        let (sum, before) = (snap.checksum(), snap.logits(&x, Some(&r)).map_err(err)?);
        let mut trainer = SupervisedTrainer::new(SupervisedConfig::default(), 1e-2).map_err(err)?;
        for _ in 0..3 {
            trainer.step(&mut model, &x, Some(&r), &labels, Some(&snap), None).map_err(err)?;
        }
        ensure(snap.checksum() == sum && snap.logits(&x, Some(&r)).map_err(err)? == before, || "snapshot changed".into())?;
    }
    counts.push(("snapshot immutability", some as usize));

    for case in 0..some {
        let net = tiny_transformer(case, 1, AttentionMode::Cross, 0.0);
        let model = tiny_classifier(case + 100, vec![3, 4], 4);
        let teacher = ModelSnapshot::new(&tiny_classifier(case + 200, vec![3, 4], 4), 0);
        let x = random(&[3, 8, 4], &mut rng);
        let mut tape = Tape64::new();
        let tbind = net.params.bind(&mut tape);
        let r = net.forward(&mut tape, &tbind, &x, Mode::Eval).map_err(err)?.r;
        let cbind = model.params.bind(&mut tape);
        let obj = supervised_objective(&mut tape, &model, &cbind, &x, Some(r), &[0, 1, 2], Some(&teacher), 1.0, DistillMode::L2Logits, None)
            .map_err(err)?;
        let g = tape.backward(obj.total).map_err(err)?;
        let leaked = tbind.grads(&g, &net.params).iter().map(Tensor64::max_abs).fold(0.0, f64::max);
        ensure(leaked == 0.0, || format!("transformer gradient {leaked}"))?;
    }
    counts.push(("no gradient into transformer", some as usize));

    for case in 0..some {
        let data: Vec<Tensor64> = (0..4).map(|_| random(&[6, 4], &mut rng)).collect();
        let windows = |scramble: bool| -> Vec<SensorWindow> {
            data.iter()
                .enumerate()
                .map(|(i, d)| SensorWindow {
                    data: d.clone(),
                    subject: if scramble { 50 + i as u32 } else { 1 },
                    label: if scramble { (i % 2 == 0).then_some(9 - i) } else { Some(i % 3) },
                })
                .collect()
        };
        let loss = SslLoss::ALL[case as usize % 3];
        let cfg = SslConfig {
            loss,
            augment: AugmentSpec::with_kind(AugmentKind::Noise),
            ..SslConfig::default()
        };
        let run = |ws: &[SensorWindow]| {
            let mut net = tiny_transformer(case, 1, AttentionMode::Cross, 0.1);
            let mut trainer = SslTrainer::new(cfg.clone(), &net, 1e-3, case).unwrap();
            let refs: Vec<&Tensor64> = ws.iter().map(|w| &w.data).collect();
            let l = trainer.step(&mut net, &refs).unwrap();
            (l.to_bits(), net.params)
        };
        ensure(run(&windows(false)) == run(&windows(true)), || format!("{loss:?} depends on window metadata"))?;
    }
    counts.push(("no label access in ssl", some as usize));

    let listed: Vec<String> = counts.iter().map(|(n, c)| format!("{n} x{c}")).collect();
    Ok(listed.join(", "))
}

// ------------------------------------------------------------ criterion 4

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_experiment() -> Outcome {
    let start = Instant::now();
    let base = ExperimentConfig::from_toml(SYNTHETIC).map_err(err)?;
    let ds = load_dataset(&base).map_err(err)?;
    let mut runs: Vec<(StrategyKind, Vec<RunRecord>)> = Vec::new();
    for kind in [StrategyKind::Naive, StrategyKind::Lwf, StrategyKind::Clad] {
        let mut cfg = base.clone();
        cfg.strategy.kind = kind;
        runs.push((kind, run_seeds(&cfg, &ds).map_err(err)?));
    }
    let secs = start.elapsed().as_secs_f64();
    let stat = |k: usize, f: fn(&AccuracyMatrix) -> f64| mean(runs[k].1.iter().map(|r| f(&r.matrix)));
    let fm = |k| stat(k, AccuracyMatrix::forgetting_measure);
    let la = |k| stat(k, AccuracyMatrix::learning_accuracy);
    let first_at_end = |k: usize| mean(runs[k].1.iter().map(|r| r.matrix.get(0, r.matrix.tasks() - 1)));
    let (naive, lwf, clad) = (0, 1, 2);
    let min_la = (0..3).map(la).fold(f64::INFINITY, f64::min);
    let detail = format!(
        "FM naive {:.3} lwf {:.3} clad {:.3}; LA naive {:.3} lwf {:.3} clad {:.3}; A[1][T] naive {:.3} clad {:.3}; {} seeds in {secs:.0}s",
        fm(naive),
        fm(lwf),
        fm(clad),
        la(naive),
        la(lwf),
        la(clad),
        first_at_end(naive),
        first_at_end(clad),
        base.run.seeds.len(),
    );
    let mut failed = Vec::new();
    if fm(naive) < 0.10 {
        failed.push("(a) naive FM < 0.10");
    }
    if fm(naive) - fm(clad) < 0.05 {
        failed.push("(b) clad FM not 0.05 below naive");
    }
    if fm(clad) > fm(lwf) {
        failed.push("(c) clad FM above lwf");
    }
    if min_la < 0.90 {
        failed.push("(d) some LA < 0.90");
    }
    if secs >= 600.0 {
        failed.push("over the 10 minute budget");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failed.join(", ")))
    }
}

// ------------------------------------------------------------ criterion 5

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn pamap2_smoke() -> Verdict {
    let Some(root) = std::env::var_os("CLADNET_PAMAP2_ROOT") else {
        return Verdict::Skip("set CLADNET_PAMAP2_ROOT to the PAMAP2 Protocol directory to run".into());
    };
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = DatasetConfig {
        root: Some(root.into()),
        subjects: vec![101, 102],
        activities: (1..=4).map(|a| ActivityMapping { raw: a.to_string(), class: a - 1 }).collect(),
        ..DatasetConfig::for_kind(DatasetKind::Pamap2)
    };
    cfg.model.transformer.d_model = 32;
    cfg.model.transformer.heads = 4;
    cfg.model.transformer.blocks = 1;
    cfg.run.epochs = 10;
    cfg.ssl.epochs = Some(3);
    cfg.run.seeds = vec![0, 1, 2];
    let ds = match load_dataset(&cfg) {
        Ok(ds) => ds,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let mut summary = Vec::new();
    for kind in [StrategyKind::Naive, StrategyKind::Clad] {
        let mut c = cfg.clone();
        c.strategy.kind = kind;
        match run_seeds(&c, &ds) {
            Ok(runs) => summary.push((
                mean(runs.iter().map(|r| r.matrix.final_accuracy())),
                mean(runs.iter().map(|r| r.matrix.forgetting_measure())),
            )),
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let (naive, clad) = (summary[0], summary[1]);
    let detail = format!("FA naive {:.3} clad {:.3}; FM naive {:.3} clad {:.3}", naive.0, clad.0, naive.1, clad.1);
    if clad.0 >= naive.0 && clad.1 <= naive.1 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ------------------------------------------------------------ criteria 6, 7

fn determinism(dir: &Path) -> Outcome {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).map_err(err)?;
    let mut summaries = Vec::new();
    for name in ["first", "second"] {
        let out = dir.join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_cladnet"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--strategy", "clad", "--seed", "11"])
            .args(["--out", out.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .output()
            .map_err(err)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        summaries.push(std::fs::read(out.join("summary.csv")).map_err(err)?);
    }
    ensure(summaries[0] == summaries[1], || "summary CSVs differ".into())?;
    Ok(format!("two cladnet train runs wrote identical {}-byte summary CSVs", summaries[0].len()))
}

fn ablation_plumbing(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig::from_toml(TINY).map_err(err)?;
    let expected: [(Axis, &[&str]); 5] = [
        (Axis::Attention, &["cross", "self"]),
        (Axis::SslLoss, &["barlow_twins", "ntxent", "byol"]),
        (Axis::Augmentation, &["noise", "zero_mask", "time_warp", "crop_resize"]),
        (Axis::Components, &["full", "without_distill", "without_transformer", "plain"]),
        (Axis::Labels, &["phi_0.1", "phi_0.2", "phi_1"]),
    ];
    let mut seen = Vec::new();
    for (axis, names) in expected {
        let out = dir.join(axis.as_str());
        cmd_ablate(&cfg, axis, &out).map_err(err)?;
        let table = Table::read(&out.join(format!("ablation_{axis}.csv"))).map_err(err)?;
        let cells: Vec<&str> = table.rows.iter().map(|r| r[1].as_str()).collect();
        ensure(cells == names, || format!("{axis}: rows {cells:?}"))?;
        seen.push(format!("{axis} {}", cells.len()));
    }
    Ok(seen.join(", "))
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        let line = match v {
            Verdict::Pass(d) => format!("criterion {n} ({name}): PASS: {d}"),
            Verdict::Fail(d) => {
                failures += 1;
                format!("criterion {n} ({name}): FAIL: {d}")
            }
            Verdict::Skip(d) => format!("criterion {n} ({name}): SKIP: {d}"),
        };
        println!("{line}");
    };
    let verdict = |o: Outcome| match o {
        Ok(d) => Verdict::Pass(d),
        Err(d) => Verdict::Fail(d),
    };
    report(1, "gradient fidelity", verdict(gradient_fidelity()));
    report(2, "oracle equivalence", verdict(oracle_equivalence()));
    report(3, "invariant suite", verdict(invariant_suite()));
    report(4, "synthetic continual experiment", verdict(synthetic_experiment()));
    report(5, "pamap2 smoke run", pamap2_smoke());
    report(6, "determinism", verdict(determinism(scratch.path())));
    report(7, "ablation plumbing", verdict(ablation_plumbing(scratch.path())));
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
