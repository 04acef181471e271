//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//!
//! `TLDR_ACCEPT_EPOCHS` and `TLDR_ACCEPT_SEEDS` shrink the learning runs for
//! quick local checks; the defaults are 300 epochs and 5 seeds.
//! `TLDR_ACCEPT_STRICT=1` turns any FAIL into a nonzero exit status.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tldr_core::agent::{QConfig, QPair, TdBatch};
use tldr_core::nn::DenseParams;
use tldr_core::representation::{euclidean, EncoderConfig, EncoderState, ReprBatch};
use tldr_core::rewards::{gcrl_reward, gcrl_rewards, tldr_reward, ReferenceBatch};
use tldr_core::{load_layout, Action, Cell, GcrlReward, GoalSelection, MazeSpec, RunConfig, RunState};

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Mutable handle to one scalar parameter: layer, bias flag, row, column.
type Probe = (usize, bool, usize, usize);

fn random_probe(net: &DenseParams, rng: &mut ChaCha8Rng) -> Probe {
    let layer = rng.gen_range(0..net.layers.len());
    let l = &net.layers[layer];
    if rng.gen_bool(0.25) {
        (layer, true, 0, rng.gen_range(0..l.bias.ncols()))
    } else {
        (layer, false, rng.gen_range(0..l.weight.nrows()), rng.gen_range(0..l.weight.ncols()))
    }
}

fn param_mut(net: &mut DenseParams, p: Probe) -> &mut f64 {
    let l = &mut net.layers[p.0];
    if p.1 {
        &mut l.bias[[p.2, p.3]]
    } else {
        &mut l.weight[[p.2, p.3]]
    }
}

fn param(net: &DenseParams, p: Probe) -> f64 {
    let l = &net.layers[p.0];
    if p.1 {
        l.bias[[p.2, p.3]]
    } else {
        l.weight[[p.2, p.3]]
    }
}

fn central_difference(net: &DenseParams, p: Probe, h: f64, loss: impl Fn(&DenseParams) -> f64) -> f64 {
    let mut plus = net.clone();
    *param_mut(&mut plus, p) += h;
    let mut minus = net.clone();
    *param_mut(&mut minus, p) -= h;
    (loss(&plus) - loss(&minus)) / (2.0 * h)
}

fn random_transitions(maze: &MazeSpec, n: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let cells = maze.reachable_cells();
    let mut s = Array2::zeros((n, 2));
    let mut next = Array2::zeros((n, 2));
    for i in 0..n {
        let c = *cells.choose(rng).unwrap();
        let nc = maze.next_cell(c, Action::ALL[rng.gen_range(0..Action::COUNT)]);
        let (a, b) = (maze.featurize(c), maze.featurize(nc));
        s[[i, 0]] = a[0];
        s[[i, 1]] = a[1];
        next[[i, 0]] = b[0];
        next[[i, 1]] = b[1];
    }
    (s, next)
}

fn p1_gradients() -> Outcome {
    let maze = load_layout("large", None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let probes = 100;
    let mut worst: [f64; 3] = [0.0; 3];

    let cfg = EncoderConfig { hidden_width: 16, ..EncoderConfig::default() };
    let mut enc = EncoderState::new(&cfg, &mut rng).unwrap();
    // Stretch the output so some transitions violate the unit-step constraint.
    let last = enc.net.layers.len() - 1;
    enc.net.layers[last].weight.mapv_inplace(|w| w * 40.0);
    let (s, next) = random_transitions(&maze, 48, &mut rng);
    let batch = ReprBatch::with_permuted_goals(s, next, &mut rng).unwrap();
    let analytic = enc.repr_loss(&batch).unwrap().grads;
    for _ in 0..probes {
        let p = random_probe(&enc.net, &mut rng);
        let fd = central_difference(&enc.net, p, 1e-4, |net| {
            EncoderState { net: net.clone(), ..enc.clone() }.repr_loss(&batch).unwrap().loss
        });
        worst[0] = worst[0].max(relative_error(fd, param(&analytic, p)));
    }

    for (slot, input_width) in [(1, 4), (2, 2)] {
        let qcfg = QConfig {
            input_width,
            num_actions: Action::COUNT,
            hidden_width: 16,
            hidden_depth: 2,
            lr: 1e-4,
            alpha: 0.01,
            gamma: if input_width == 4 { 0.97 } else { 0.99 },
            tau: 0.995,
        };
        let q = QPair::new(&qcfg, &mut rng).unwrap();
        let n = 32;
        let (s, next) = random_transitions(&maze, n, &mut rng);
        let (g, _) = random_transitions(&maze, n, &mut rng);
        let z = |x: &Array2<f64>| enc.embed_batch(x.view()).unwrap();
        let rewards = gcrl_rewards(&z(&s), &z(&next), &z(&g));
        let (inputs, next_inputs) = if input_width == 4 {
            (tldr_core::nn::hstack(s.view(), g.view()), tldr_core::nn::hstack(next.view(), g.view()))
        } else {
            (s, next)
        };
        let actions = (0..n).map(|_| rng.gen_range(0..Action::COUNT)).collect();
        let batch = TdBatch { inputs, actions, rewards, next_inputs };
        let out = q.td_loss(&batch).unwrap();
        for i in 0..probes {
            let head_one = i % 2 == 0;
            let (net, grads) = if head_one { (&q.q1, &out.grads1) } else { (&q.q2, &out.grads2) };
            let p = random_probe(net, &mut rng);
            let fd = central_difference(net, p, 1e-6, |perturbed| {
                let mut qq = q.clone();
                let l = if head_one {
                    qq.q1 = perturbed.clone();
                    qq.td_loss(&batch).unwrap().loss1
                } else {
                    qq.q2 = perturbed.clone();
                    qq.td_loss(&batch).unwrap().loss2
                };
                l
            });
            worst[slot] = worst[slot].max(relative_error(fd, param(grads, p)));
        }
    }
    let pass = worst.iter().all(|&w| w < 1e-4);
    outcome(
        "P1",
        pass,
        format!(
            "max relative error over {probes} probes each: repr {:.2e}, goal TD {:.2e}, explore TD {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn brute_force_knn(z: &[f64], refs: &Array2<f64>, k: usize, exclude: Option<usize>) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for j in 0..refs.nrows() {
        if Some(j) == exclude {
            continue;
        }
        let mut acc = 0.0;
        for c in 0..refs.ncols() {
            let diff = z[c] - refs[[j, c]];
            acc += diff * diff;
        }
        d.push(acc.sqrt());
    }
    d.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    for x in &d[..k] {
        sum += x;
    }
    (sum / k as f64).ln_1p()
}

fn p2_knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    let mut checked = 0;
    for b in 0..200 {
        let k = [5, 12, 20][b % 3];
        let n = rng.gen_range(k + 2..=512);
        let dim = rng.gen_range(1..=8);
        let refs = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-5.0..5.0));
        let batch = ReferenceBatch::new(refs.clone()).unwrap();
        for _ in 0..4 {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let got = tldr_reward(&q, &batch, k, None).unwrap();
            mismatches += usize::from(got.to_bits() != brute_force_knn(&q, &refs, k, None).to_bits());
            let i = rng.gen_range(0..n);
            let member = refs.row(i).to_vec();
            let got = tldr_reward(&member, &batch, k, Some(i)).unwrap();
            mismatches += usize::from(got.to_bits() != brute_force_knn(&member, &refs, k, Some(i)).to_bits());
            checked += 2;
        }
    }
    outcome("P2", mismatches == 0, format!("{mismatches} bitwise mismatches in {checked} queries over 200 batches"))
}

fn p3_telescoping() -> Outcome {
    let maze = load_layout("large", None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cells = maze.reachable_cells();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let enc = EncoderState::new(&EncoderConfig::default(), &mut rng).unwrap();
        let g = maze.featurize(*cells.choose(&mut rng).unwrap());
        let mut c = *cells.choose(&mut rng).unwrap();
        let s0 = maze.featurize(c);
        let mut total = 0.0;
        for _ in 0..maze.horizon() {
            let n = maze.next_cell(c, Action::ALL[rng.gen_range(0..Action::COUNT)]);
            total += gcrl_reward(&enc, &maze.featurize(c), &maze.featurize(n), &g).unwrap();
            c = n;
        }
        let z = |f: &[f64]| enc.embed(f).unwrap();
        let expected = euclidean(&z(&s0), &z(&g)) - euclidean(&z(&maze.featurize(c)), &z(&g));
        worst = worst.max((total - expected).abs());
    }
    outcome("P3", worst <= 1e-9, format!("max telescoping gap {worst:.2e} over 100 trajectories"))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

struct Finished {
    state: RunState,
    coverage: f64,
    goals: usize,
}

fn train(cfg: RunConfig) -> Finished {
    let label = format!("{} {} {} seed {}", cfg.layout, cfg.goal_selection, cfg.gcrl_reward, cfg.seed);
    let t0 = Instant::now();
    let maze = load_layout(&cfg.layout, cfg.horizon).unwrap();
    let mut state = RunState::new(cfg.clone(), maze).unwrap();
    let mut last = None;
    for _ in 0..cfg.epochs {
        last = Some(state.train_epoch().unwrap());
    }
    let row = last.expect("at least one epoch");
    eprintln!(
        "  run {label}: coverage {}/{} goals {}/{} ({:.0}s)",
        row.coverage_cells,
        state.reachable_cells(),
        row.goals_reached,
        state.maze.goals().len(),
        t0.elapsed().as_secs_f64()
    );
    Finished { coverage: row.coverage_fraction, goals: row.goals_reached, state }
}

fn desk_profile(layout: &str, seed: u64, epochs: usize) -> RunConfig {
    RunConfig { layout: layout.into(), seed, epochs, batch_size: 256, ..RunConfig::default() }
}

fn p4_p5_representation(run: &RunState) -> (Outcome, Outcome) {
    let maze = &run.maze;
    let cells = maze.reachable_cells();
    let emb: Vec<Vec<f64>> = cells.iter().map(|&c| run.encoder.embed(&maze.featurize(c)).unwrap()).collect();
    let index = |c: Cell| cells.iter().position(|&x| x == c).unwrap();

    let mut steps = Vec::new();
    for (i, &c) in cells.iter().enumerate() {
        for a in Action::ALL {
            let n = maze.next_cell(c, a);
            if n != c {
                steps.push(euclidean(&emb[i], &emb[index(n)]));
            }
        }
    }
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    let lambda = run.encoder.lambda;
    let p4 = outcome(
        "P4",
        mean_step <= 1.1 && lambda.is_finite() && lambda >= 0.0,
        format!("mean step norm {mean_step:.3} over {} transitions, lambda {lambda:.3}", steps.len()),
    );

    let table = maze.distance_table(&cells);
    let (mut td, mut bd) = (Vec::new(), Vec::new());
    let mut within = 0usize;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let d = euclidean(&emb[i], &emb[j]);
            let b = table[i][j].unwrap() as f64;
            within += usize::from(d <= 1.5 * b);
            td.push(d);
            bd.push(b);
        }
    }
    let rho = spearman(&td, &bd);
    let frac = within as f64 / td.len() as f64;
    let p5 = outcome(
        "P5",
        rho >= 0.8 && frac >= 0.95,
        format!("Spearman {rho:.3}, {:.1}% of {} pairs within 1.5x BFS", 100.0 * frac, td.len()),
    );
    (p4, p5)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn p10_chain() -> Outcome {
    let onehot = |s: usize| (0..4).map(|i| if i == s { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let (mut x, mut a, mut r, mut nx) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..4 {
        for act in 0..4 {
            let next = if act == 0 && s < 3 { s + 1 } else { s };
            x.push(onehot(s));
            a.push(act);
            r.push(if act == 0 && s == 2 { 1.0 } else { 0.0 });
            nx.push(onehot(next));
        }
    }
    let batch = TdBatch {
        inputs: DenseParams::batch_rows(&x).unwrap(),
        actions: a,
        rewards: r,
        next_inputs: DenseParams::batch_rows(&nx).unwrap(),
    };
    let gamma = 0.5;
    let mut oracle = [0.0; 4];
    for _ in 0..100 {
        let mut next = [f64::NEG_INFINITY; 4];
        for i in 0..batch.len() {
            let s = i / 4;
            let n = batch.next_inputs.row(i).iter().position(|&v| v == 1.0).unwrap();
            next[s] = next[s].max(batch.rewards[i] + gamma * oracle[n]);
        }
        oracle = next;
    }
    let cfg = QConfig {
        input_width: 4,
        num_actions: 4,
        hidden_width: 32,
        hidden_depth: 2,
        lr: 1e-3,
        alpha: 1e-3,
        gamma,
        tau: 0.9,
    };
    let mut q = QPair::new(&cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    for _ in 0..4000 {
        q.train_step(&batch).unwrap();
    }
    let mut worst: f64 = 0.0;
    let mut learned = Vec::new();
    for s in 0..3 {
        let v = q.q_values(&onehot(s)).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((v - oracle[s]).abs());
        learned.push(format!("{v:.4}"));
    }
    outcome(
        "P10",
        worst < 1e-2,
        format!("values ({}) vs ({}, {}, {}), max error {worst:.2e}", learned.join(", "), oracle[0], oracle[1], oracle[2]),
    )
}

fn p11_determinism() -> Outcome {
    let csv = || {
        let cfg = desk_profile("large", 7, 4);
        let mut st = RunState::new(cfg.clone(), load_layout(&cfg.layout, None).unwrap()).unwrap();
        let mut out = String::from(tldr_core::METRICS_HEADER);
        for _ in 0..cfg.epochs {
            out.push('\n');
            out.push_str(&st.train_epoch().unwrap().to_csv_line());
        }
        out
    };
    let (a, b) = (csv(), csv());
    outcome("P11", a.as_bytes() == b.as_bytes(), format!("{} bytes per CSV, identical: {}", a.len(), a == b))
}

fn p12_her(run: &RunState) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let batch = run.buffer.sample_minibatch(10_000, &mut rng).unwrap();
    let out = run.buffer.her_relabel(&batch, run.cfg.relabel_ratio, &mut rng).unwrap();
    let relabeled = out.iter().filter(|o| o.future_t.is_some()).count();
    let frac = relabeled as f64 / out.len() as f64;
    let mut violations = 0;
    for o in &out {
        if let Some(ft) = o.future_t {
            let source = run.buffer.future(o.record.trajectory, ft).unwrap();
            let ok = ft >= o.record.t && source.first().is_some_and(|r| r.t == ft && r.next_state == o.record.goal);
            violations += usize::from(!ok);
        }
    }
    outcome(
        "P12",
        (0.78..=0.82).contains(&frac) && violations == 0,
        format!("future-goal fraction {frac:.4} over {} records, {violations} contract violations", out.len()),
    )
}

fn main() {
    let epochs = env_usize("TLDR_ACCEPT_EPOCHS", 300);
    let seeds = env_usize("TLDR_ACCEPT_SEEDS", 5) as u64;
    let strict = std::env::var("TLDR_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let t0 = Instant::now();
    let mut results = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        results.push(o.pass);
    };

    report(p1_gradients());
    report(p2_knn_oracle());
    report(p3_telescoping());
    report(p10_chain());
    report(p11_determinism());

    eprintln!("training {seeds} seeds x 5 configurations for {epochs} epochs each");
    let run_all = |layout: &str, f: &dyn Fn(RunConfig) -> RunConfig| -> Vec<Finished> {
        (0..seeds).map(|s| train(f(desk_profile(layout, s, epochs)))).collect()
    };
    let tldr = run_all("large", &|c| c);
    let (p4, p5) = p4_p5_representation(&tldr[0].state);
    report(p4);
    report(p5);

    let covered = tldr.iter().filter(|r| r.coverage >= 0.9).count();
    let needed = (4 * seeds as usize).div_ceil(5);
    let fractions: Vec<String> = tldr.iter().map(|r| format!("{:.2}", r.coverage)).collect();
    report(outcome(
        "P6",
        covered >= needed,
        format!("{covered}/{seeds} seeds reach 90% coverage (need {needed}); coverage [{}]", fractions.join(", ")),
    ));

    let uniform = run_all("large", &|c| RunConfig { goal_selection: GoalSelection::Uniform, ..c });
    let rnd = run_all("large", &|c| RunConfig { goal_selection: GoalSelection::Rnd, ..c });
    let cov = |rs: &[Finished]| mean(rs.iter().map(|r| r.coverage));
    let (ct, cu, cr) = (cov(&tldr), cov(&uniform), cov(&rnd));
    report(outcome("P7", ct > cu && ct > cr, format!("mean coverage tldr {ct:.3}, uniform {cu:.3}, rnd {cr:.3}")));

    let sparse = run_all("large", &|c| RunConfig { gcrl_reward: GcrlReward::Sparse, ..c });
    let goals = |rs: &[Finished]| mean(rs.iter().map(|r| r.goals as f64));
    let (gd, gs) = (goals(&tldr), goals(&sparse));
    report(outcome("P8", gd > gs, format!("mean goals reached tldr_dense {gd:.2}, sparse {gs:.2} (of 7)")));

    let ultra = run_all("ultra", &|c| c);
    let large_ok = tldr.iter().filter(|r| r.goals >= 6).count();
    let ultra_ok = ultra.iter().filter(|r| r.goals >= 15).count();
    let needed = (3 * seeds as usize).div_ceil(5);
    let list = |rs: &[Finished]| rs.iter().map(|r| r.goals.to_string()).collect::<Vec<_>>().join(", ");
    report(outcome(
        "P9",
        large_ok >= needed && ultra_ok >= needed,
        format!(
            "seeds with >=6/7 on large: {large_ok}, >=15/21 on ultra: {ultra_ok} (need {needed}); large [{}], ultra [{}]",
            list(&tldr),
            list(&ultra)
        ),
    ));

    report(p12_her(&tldr[0].state));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", results.len(), t0.elapsed().as_secs_f64());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
