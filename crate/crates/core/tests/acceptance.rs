//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line to
//! stderr (outside the harness capture) before asserting.
//!
//! Criteria 11 to 13 share one training sweep on the bundled MNIST 0/1
//! fixture; it is computed once and reused.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gtl::assignment::{brute_force_lap, optimal_plan, solve_lap, wasserstein2, CostMatrix, EmpiricalMeasure};
use gtl::experiments::{gamma_sweep_runs, robustness_sweep, Dataset, NoiseKind, SweepReport, SweepRun};
use gtl::geometry::{geodesic_interpolate, lsr, lss, pairs_from_plan, straight_line_track, theorem1_bound, track_distance, Track};
use gtl::io::{plot_series, sweep_csv, train_log_csv, Checkpoint};
use gtl::network::{
    activated_linear_map, backward_with, block_energy_bound, gd_variation_check, plain_layer_energy_bound, ridge_solve, ArchKind,
    Architecture, Loss, Network, PlainNet, ResidualBlock, Target, TrainConfig,
};
use gtl::numerics::{Matrix, Rng, Vector};
use gtl::parallel::Exec;
use gtl::Error;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n:>2}: {verdict}  {detail}");
}

fn check(n: u32, pass: bool, detail: String) {
    report(n, pass, &detail);
    assert!(pass, "criterion {n}: {detail}");
}

fn normal_vec(dim: usize, rng: &mut Rng) -> Vector {
    Vector::new((0..dim).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.standard_normal()).collect()).unwrap()
}

fn cloud(m: usize, dim: usize, rng: &mut Rng) -> EmpiricalMeasure {
    EmpiricalMeasure::new((0..m).map(|_| normal_vec(dim, rng)).collect()).unwrap()
}

fn between(lo: usize, hi: usize, rng: &mut Rng) -> usize {
    lo + rng.below(hi - lo + 1)
}

#[test]
fn c01_lap_matches_brute_force() {
    let mut rng = Rng::new(101);
    let start = Instant::now();
    let (mut worst, mut instances) = (0.0f64, 0);
    for m in 2..=7 {
        for k in 0..200 {
            // Half the instances use small integers so ties are common.
            let data: Vec<f64> = (0..m * m)
                .map(|_| if k % 2 == 0 { rng.uniform() * 10.0 } else { rng.below(4) as f64 })
                .collect();
            let cost = CostMatrix::new(Matrix::from_vec(m, m, data).unwrap()).unwrap();
            let fast = solve_lap(&cost).unwrap();
            let exact = brute_force_lap(&cost).unwrap();
            assert!((cost.cost_of(&fast.permutation) - fast.total_cost).abs() <= 1e-9);
            worst = worst.max((fast.total_cost - exact.total_cost).abs());
            instances += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        1,
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max |solve - brute| = {worst:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn c02_w2_is_a_metric() {
    let mut rng = Rng::new(102);
    let (mut sym, mut tri, mut perm) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let (a, b, c) = (cloud(16, 8, &mut rng), cloud(16, 8, &mut rng), cloud(16, 8, &mut rng));
        let (ab, ba) = (wasserstein2(&a, &b).unwrap(), wasserstein2(&b, &a).unwrap());
        let (bc, ac) = (wasserstein2(&b, &c).unwrap(), wasserstein2(&a, &c).unwrap());
        sym = sym.max((ab - ba).abs());
        tri = tri.max(ac - ab - bc);
        let mut order: Vec<usize> = (0..16).collect();
        rng.shuffle(&mut order);
        perm = perm.max(wasserstein2(&a, &a.permute(&order).unwrap()).unwrap());
    }
    check(
        2,
        sym <= 1e-9 && tri <= 1e-9 && perm <= 1e-9,
        format!("max asymmetry {sym:.2e}, max triangle excess {tri:.2e}, max W2(a, perm a) {perm:.2e}"),
    );
}

#[test]
fn c03_geodesic_has_constant_speed() {
    let mut rng = Rng::new(103);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = cloud(16, 4, &mut rng);
        let b = cloud(16, 4, &mut rng).translate(&normal_vec(4, &mut rng)).unwrap();
        let plan = optimal_plan(&a, &b).unwrap();
        let pairs = pairs_from_plan(&a, &b, &plan.assignment.permutation).unwrap();
        let mu: Vec<EmpiricalMeasure> = grid.iter().map(|&t| geodesic_interpolate(&pairs, t).unwrap()).collect();
        for (i, &t) in grid.iter().enumerate() {
            for (j, &s) in grid.iter().enumerate() {
                let err = (wasserstein2(&mu[i], &mu[j]).unwrap() - (t - s).abs() * plan.w2).abs();
                worst = worst.max(err / plan.w2);
            }
        }
    }
    check(3, worst <= 1e-6, format!("20 clouds x 25 (t, s), max relative deviation {worst:.2e}"));
}

#[test]
fn c04_optimal_tracks_respect_the_separation_bound() {
    let mut rng = Rng::new(104);
    let (mut pairs, mut violations, mut worst_mono) = (0, 0, f64::INFINITY);
    let mut tightest = f64::INFINITY;
    while pairs < 1000 {
        let a = cloud(10, 3, &mut rng);
        let b = cloud(10, 3, &mut rng).translate(&normal_vec(3, &mut rng)).unwrap();
        let sigma = optimal_plan(&a, &b).unwrap().assignment.permutation;
        for _ in 0..10 {
            let p = rng.below(10);
            let q = (p + 1 + rng.below(9)) % 10;
            let (xp, xq) = (&a.points()[p], &a.points()[q]);
            let (tp, tq) = (&b.points()[sigma[p]], &b.points()[sigma[q]]);
            let bound = theorem1_bound(xp, xq, tp, tq).unwrap();
            let dense = track_distance(&straight_line_track(xp, tp, 2000).unwrap(), &straight_line_track(xq, tq, 2000).unwrap()).unwrap();
            if dense < bound - 1e-9 {
                violations += 1;
            }
            tightest = tightest.min(dense - bound);
            worst_mono = worst_mono.min(tp.sub(tq).unwrap().dot(&xp.sub(xq).unwrap()).unwrap());
            pairs += 1;
        }
    }
    check(
        4,
        violations == 0 && worst_mono >= -1e-9,
        format!("{pairs} pairs, {violations} violations, min slack {tightest:.2e}, min monotonicity {worst_mono:.2e}"),
    );
}

fn random_arch(kind: ArchKind, rng: &mut Rng) -> Architecture {
    let stages = between(1, 2, rng);
    Architecture {
        kind,
        input_dim: between(2, 8, rng),
        widths: (0..stages).map(|_| between(2, 16, rng)).collect(),
        blocks_per_stage: if kind == ArchKind::Plain { between(1, 3, rng) } else { between(1, 6, rng) },
        n_classes: between(2, 4, rng),
    }
}

#[test]
fn c05_backward_matches_finite_differences() {
    let mut rng = Rng::new(105);
    let (mut worst, mut coords) = (0.0f64, 0);
    for case in 0..20 {
        let kind = if case % 2 == 0 { ArchKind::Plain } else { ArchKind::Resnet };
        let arch = random_arch(kind, &mut rng);
        let net = Network::init(&arch, &mut rng).unwrap();
        let loss = if case % 4 < 2 { Loss::SoftmaxCrossEntropy } else { Loss::MeanSquaredError };
        let inputs: Vec<Vector> = (0..4).map(|_| normal_vec(arch.input_dim, &mut rng)).collect();
        let targets: Vec<Target> = (0..4)
            .map(|_| match loss {
                Loss::SoftmaxCrossEntropy => Target::Class(rng.below(arch.n_classes)),
                Loss::MeanSquaredError => Target::Value(normal_vec(arch.n_classes, &mut rng)),
            })
            .collect();
        let eval = |n: &Network| backward_with(n, &inputs, &targets, loss, Exec::Sequential).unwrap();
        let analytic = eval(&net).grads;
        let h = 1e-6;
        for _ in 0..100 {
            let p = rng.below(analytic.0.len());
            let idx = rng.below(analytic.0[p].as_slice().len());
            let mut plus = net.clone();
            plus.params_mut()[p].as_mut_slice()[idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[p].as_mut_slice()[idx] -= h;
            let fd = (eval(&plus).loss - eval(&minus).loss) / (2.0 * h);
            let an = analytic.0[p].as_slice()[idx];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
            coords += 1;
        }
    }
    check(5, worst <= 1e-5, format!("20 nets, {coords} coordinates, max relative error {worst:.2e}"));
}

#[test]
fn c06_activated_map_reproduces_forward() {
    let mut rng = Rng::new(106);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let depth = between(1, 6, &mut rng);
        let mut dims = vec![between(1, 10, &mut rng)];
        dims.extend((0..depth).map(|_| between(1, 10, &mut rng)));
        let layers = dims.windows(2).map(|d| normal_matrix(d[1], d[0], 1.0, &mut rng)).collect();
        let net = PlainNet::new(layers).unwrap();
        let x = normal_vec(dims[0], &mut rng);
        let g = net.forward(&x).unwrap();
        let w = activated_linear_map(&net, &x).unwrap();
        let err = w.matvec(&x).unwrap().sub(&g).unwrap().norm() / (1.0 + g.norm());
        worst = worst.max(err);
    }
    check(6, worst <= 1e-12, format!("500 (net, x), max |g(x) - W_x x| / (1 + |g(x)|) = {worst:.2e}"));
}

#[test]
fn c07_energy_bounds_hold() {
    let mut rng = Rng::new(107);
    let (mut violations, mut worst) = (0, f64::NEG_INFINITY);
    for k in 0..1000 {
        let d = between(1, 8, &mut rng);
        let m = between(1, 20, &mut rng);
        let scale = 0.1 + 2.0 * rng.uniform();
        let bound = if k % 2 == 0 {
            let block = ResidualBlock::new(normal_matrix(d, d, scale, &mut rng), normal_matrix(d, d, scale, &mut rng)).unwrap();
            let b = block_energy_bound(&block, &cloud(m, d, &mut rng)).unwrap();
            if let Some(sym) = b.symmetric_rhs {
                worst = worst.max(b.lhs - sym);
            }
            b
        } else {
            // The plain-layer bound concerns post-activation states, which are
            // nonnegative.
            let pts = (0..m).map(|_| Vector::new((0..d).map(|_| rng.standard_normal().abs()).collect()).unwrap()).collect();
            plain_layer_energy_bound(&normal_matrix(d, d, scale, &mut rng), &EmpiricalMeasure::new(pts).unwrap()).unwrap()
        };
        worst = worst.max(bound.lhs - bound.rhs);
        if !bound.holds(1e-9) {
            violations += 1;
        }
    }
    check(7, violations == 0 && worst <= 1e-9, format!("1000 instances, {violations} violations, max lhs - rhs {worst:.2e}"));
}

#[test]
fn c08_variation_identity_under_frozen_pattern() {
    let mut rng = Rng::new(108);
    let (mut instances, mut flips, mut worst) = (0, 0, 0.0f64);
    while instances < 100 {
        let (out, d, m) = (between(1, 6, &mut rng), between(1, 6, &mut rng), between(1, 8, &mut rng));
        let w = normal_matrix(out, d, 1.0, &mut rng);
        let x = normal_matrix(d, m, 1.0, &mut rng);
        let g = normal_matrix(out, m, 1.0, &mut rng);
        match gd_variation_check(&w, &x, &g, 1e-6) {
            Ok(v) => {
                worst = worst.max(v.observed.max_abs_diff(&v.predicted).unwrap());
                instances += 1;
            }
            Err(Error::PatternFlip { .. }) => flips += 1,
            Err(e) => panic!("{e}"),
        }
    }
    check(8, worst <= 1e-9, format!("{instances} frozen instances ({flips} redrawn), max |observed - predicted| {worst:.2e}"));
}

#[test]
fn c09_ridge_closed_form() {
    let mut rng = Rng::new(109);
    let (mut residual, mut gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (d, m) = (between(1, 4, &mut rng), between(2, 12, &mut rng));
        let x = normal_matrix(d, m, 1.0, &mut rng);
        let y = normal_matrix(1, m, 1.0, &mut rng);
        let gamma = 0.1 + 2.0 * rng.uniform();
        let w = ridge_solve(&x, &y, gamma).unwrap();
        let xxt = x.matmul_nt(&x).unwrap();
        let xyt = x.matmul_nt(&y).unwrap();
        let lhs = xxt.matvec(&w).unwrap().add(&w.scale(gamma)).unwrap();
        let rhs = Vector::new(xyt.as_slice().to_vec()).unwrap();
        residual = residual.max(lhs.sub(&rhs).unwrap().norm());
        // Gradient descent on |w X - Y|^2 + gamma |w|^2 with step 1/L.
        let trace: f64 = (0..d).map(|i| xxt.row(i)[i]).sum();
        let step = 1.0 / (2.0 * (trace + gamma));
        let mut v = Vector::zeros(d);
        for _ in 0..10_000 {
            let grad = xxt.matvec(&v).unwrap().add(&v.scale(gamma)).unwrap().sub(&rhs).unwrap().scale(2.0);
            v = v.sub(&grad.scale(step)).unwrap();
        }
        gap = gap.max(v.sub(&w).unwrap().norm());
    }
    check(
        9,
        residual <= 1e-9 && gap <= 1e-6,
        format!("100 instances, max normal-equation residual {residual:.2e}, max |w_gd - w| {gap:.2e}"),
    );
}

#[test]
fn c10_line_shape_floors() {
    let mut rng = Rng::new(110);
    let (mut min_lss, mut min_lsr) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..10_000 {
        let (n, d) = (between(1, 8, &mut rng), between(1, 5, &mut rng));
        let t = Track::new((0..=n).map(|_| normal_vec(d, &mut rng)).collect()).unwrap();
        min_lss = min_lss.min(lss(&t).unwrap());
        min_lsr = min_lsr.min(lsr(&t).unwrap());
    }
    let mut straight = 0.0f64;
    for _ in 0..100 {
        let d = between(1, 5, &mut rng);
        let t = straight_line_track(&normal_vec(d, &mut rng), &normal_vec(d, &mut rng), between(1, 10, &mut rng)).unwrap();
        straight = straight.max((lss(&t).unwrap() - 1.0).abs()).max((lsr(&t).unwrap() - 1.0).abs());
    }
    check(
        10,
        min_lss >= 1.0 && min_lsr >= 1.0 && straight <= 1e-12,
        format!("10^4 random tracks: min lss {min_lss}, min lsr {min_lsr}; straight tracks max |score - 1| {straight:.2e}"),
    );
}

const GAMMAS: [f64; 4] = [0.0, 1e-4, 1e-3, 1e-2];

fn desk_arch(kind: ArchKind) -> Architecture {
    Architecture {
        kind,
        input_dim: 784,
        widths: vec![64],
        blocks_per_stage: 5,
        n_classes: 2,
    }
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        eval_every: 10,
        ot_subsample: 512,
        seed: 0,
        ..TrainConfig::default()
    }
}

struct DeskSweep {
    data: Dataset,
    plain: Vec<SweepRun>,
    resnet: Vec<SweepRun>,
    elapsed: Duration,
}

impl DeskSweep {
    fn run(exec: Exec) -> Self {
        let data = common::mnist01(500);
        let start = Instant::now();
        let plain = gamma_sweep_runs(&desk_arch(ArchKind::Plain), &data, &GAMMAS, &desk_config(), exec).unwrap();
        let resnet = gamma_sweep_runs(&desk_arch(ArchKind::Resnet), &data, &GAMMAS, &desk_config(), exec).unwrap();
        DeskSweep {
            data,
            plain,
            resnet,
            elapsed: start.elapsed(),
        }
    }

    /// Every artifact a CLI sweep writes, as `(name, bytes)`.
    fn artifacts(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let rows = self.plain.iter().chain(&self.resnet).map(|r| r.row.clone()).collect();
        let report = SweepReport { rows };
        out.push(("sweep.csv".to_string(), sweep_csv(&report).unwrap()));
        out.extend(plot_series(&report).unwrap());
        for run in self.plain.iter().chain(&self.resnet) {
            let tag = format!("{}_{}", run.row.arch.as_str(), run.row.gamma);
            let model = run.model.clone().expect("run succeeded");
            let ck = Checkpoint::new(desk_arch(run.row.arch), 0, model).unwrap();
            out.push((format!("model_{tag}.json"), ck.to_json().unwrap()));
            out.push((format!("train_{tag}.csv"), train_log_csv(&run.log, 1).unwrap()));
        }
        out
    }
}

fn desk_sweep() -> &'static DeskSweep {
    static SWEEP: OnceLock<DeskSweep> = OnceLock::new();
    SWEEP.get_or_init(|| DeskSweep::run(Exec::Sequential))
}

fn final_lss(runs: &[SweepRun]) -> Vec<f64> {
    runs.iter().map(|r| r.row.stages[0].mean_lss.expect("finite mean LSS")).collect()
}

fn increases(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[test]
fn c11_desk_scale_trends() {
    let s = desk_sweep();
    let (lp, lr) = (final_lss(&s.plain), final_lss(&s.resnet));
    let ots = |runs: &[SweepRun]| -> Vec<f64> { runs.iter().map(|r| r.row.stages[0].ots).collect() };
    let (op, or) = (ots(&s.plain), ots(&s.resnet));
    let best = |runs: &[SweepRun]| runs.iter().map(|r| r.row.test_acc.unwrap()).fold(0.0, f64::max);
    let count = |n: &Network| n.params().iter().map(|m| m.as_slice().len()).sum::<usize>();
    let matched = count(s.plain[0].model.as_ref().unwrap()) == count(s.resnet[0].model.as_ref().unwrap());

    let a = increases(&lp) <= 1 && increases(&lr) <= 1;
    let b = lr.iter().zip(&lp).all(|(r, p)| r <= p);
    let c = or.iter().zip(&op).all(|(r, p)| r >= p);
    let d = best(&s.plain) >= 0.97 && best(&s.resnet) >= 0.97;
    let fast = s.elapsed < Duration::from_secs(15 * 60);
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    let detail = format!(
        "(a) {} plain LSS {:.3?} ({} increases), resnet LSS {:.3?} ({} increases); (b) {}; (c) {} plain OTS {:.3?}, resnet OTS {:.3?}; \
         (d) {} best test acc plain {:.4}, resnet {:.4}; parameter-matched {matched}; {} runs in {:.0?}",
        mark(a),
        lp,
        increases(&lp),
        lr,
        increases(&lr),
        mark(b),
        mark(c),
        op,
        or,
        mark(d),
        best(&s.plain),
        best(&s.resnet),
        s.plain.len() + s.resnet.len(),
        s.elapsed,
    );
    check(11, a && b && c && d && matched && fast, detail);
}

#[test]
fn c12_resnet_is_more_robust() {
    let s = desk_sweep();
    // The gamma whose worse architecture is best; ties go to the smaller gamma.
    let mut pick = 0;
    let worse = |i: usize| s.plain[i].row.test_acc.unwrap().min(s.resnet[i].row.test_acc.unwrap());
    for i in 1..GAMMAS.len() {
        if worse(i) > worse(pick) {
            pick = i;
        }
    }
    let (plain, resnet) = (s.plain[pick].model.as_ref().unwrap(), s.resnet[pick].model.as_ref().unwrap());
    let gaussian: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let fgsm: Vec<f64> = (1..=10).map(|i| i as f64 / 50.0).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for (kind, levels) in [(NoiseKind::Gaussian, &gaussian), (NoiseKind::Fgsm, &fgsm)] {
        let sweep = |n: &Network| robustness_sweep(n, &s.data.test, kind, levels, 0, Loss::default(), Exec::default()).unwrap();
        let (p, r) = (sweep(plain), sweep(resnet));
        let wins = r.accuracy.iter().zip(&p.accuracy).filter(|(r, p)| r >= p).count();
        pass &= wins * 10 >= levels.len() * 8;
        parts.push(format!(
            "{}: resnet >= plain at {wins}/{} levels (plain {:.3?}, resnet {:.3?})",
            kind.as_str(),
            levels.len(),
            p.accuracy,
            r.accuracy
        ));
        if kind == NoiseKind::Gaussian {
            parts.insert(0, format!("gamma {}, clean acc plain {:.4} resnet {:.4}", GAMMAS[pick], p.clean_accuracy, r.clean_accuracy));
        }
    }
    check(12, pass, parts.join("; "));
}

#[test]
fn c13_reruns_are_byte_identical() {
    let first = desk_sweep().artifacts();
    // The rerun uses the data-parallel path, which must not change a byte.
    let second = DeskSweep::run(Exec::default()).artifacts();
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    let same = first.len() == second.len() && differing.is_empty();
    check(
        13,
        same,
        format!("{} artifacts (checkpoints, train logs, sweep and plot CSVs) compared, differing: {differing:?}", first.len()),
    );
}
