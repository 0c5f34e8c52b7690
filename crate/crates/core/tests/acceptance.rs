//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run all: `cargo test --release --test acceptance`
//! Run some: `cargo test --release --test acceptance -- 1 2 6`

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use phasenet::datagen::{centro_mates, make_dataset, make_example, AtomSet, GenConfig};
use phasenet::eval::{evaluate_case, run_ablation, AblationVariant, EvalConfig, MapSource};
use phasenet::grid::pgrd::Dtype;
use phasenet::grid::{centro_invert_field, circular_shift, patterson, GridDims, ScalarField3D, Vec3};
use phasenet::model::{
    backward, train, Activation, ArchSpec, LayerSpec, NetworkWeights, TrainConfig, TrainOutcome,
};
use phasenet::separate::{augment_with_mates, separate, SeparationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn time_limit(v: Verdict, elapsed: Duration, limit: Duration) -> Verdict {
    if elapsed > limit {
        verdict(false, format!("{} (took {elapsed:.1?}, limit {limit:?})", v.detail))
    } else {
        v
    }
}

fn architecture() -> Verdict {
    let arch = ArchSpec::paper();
    let (params, rf) = (arch.param_count(), arch.receptive_field());
    verdict(
        params == 1_202_821 && rf == 56,
        format!("paper preset: {params} parameters, receptive field {rf}"),
    )
}

fn random_density(rng: &mut ChaCha8Rng, n: usize) -> ScalarField3D {
    let dims = GridDims::cubic(n).unwrap();
    let fill = rng.random_range(0.02..0.5);
    ScalarField3D::from_fn(dims, |_, _, _| {
        if rng.random_bool(fill) {
            rng.random_range(0.0..1.0)
        } else {
            0.0
        }
    })
}

fn patterson_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let cases = 120;
    for c in 0..cases {
        let n = 8 + (c * 32) / (cases - 1);
        let rho = random_density(&mut rng, n);
        let p = patterson(&rho).unwrap();
        let shift = [
            rng.random_range(-(n as i64)..n as i64),
            rng.random_range(-(n as i64)..n as i64),
            rng.random_range(-(n as i64)..n as i64),
        ];
        worst = worst.max(patterson(&circular_shift(&rho, shift)).unwrap().max_relative_diff(&p));
        worst = worst.max(patterson(&centro_invert_field(&rho)).unwrap().max_relative_diff(&p));
        worst = worst.max(centro_invert_field(&p).max_relative_diff(&p));
        let zero_lag = rho.sum_of_squares();
        worst = worst.max((p.values()[0] - zero_lag).abs() / zero_lag);
    }
    verdict(
        worst <= 1e-9,
        format!("{cases} densities 8^3 to 40^3, worst relative deviation {worst:.2e}"),
    )
}

fn random_field(rng: &mut ChaCha8Rng, dims: GridDims, lo: f64, hi: f64) -> ScalarField3D {
    ScalarField3D::from_fn(dims, |_, _, _| rng.random_range(lo..hi))
}

fn gradient_check() -> Verdict {
    use Activation::*;
    let archs = [
        vec![LayerSpec::conv(1, 2, 3, Relu), LayerSpec::conv(2, 1, 3, Tanh)],
        vec![
            LayerSpec::conv(1, 2, 3, Relu),
            LayerSpec::Maxpool2,
            LayerSpec::conv(2, 2, 3, Tanh),
            LayerSpec::Upsample2,
            LayerSpec::conv(2, 1, 3, None),
        ],
        vec![
            LayerSpec::conv(1, 3, 5, Tanh),
            LayerSpec::Maxpool2,
            LayerSpec::conv(3, 2, 3, Relu),
            LayerSpec::Upsample2,
            LayerSpec::conv(2, 1, 5, Tanh),
        ],
    ];
    let dims = GridDims::cubic(6).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (a, layers) in archs.into_iter().enumerate() {
        let arch = ArchSpec {
            name: format!("check{a}"),
            layers,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(30 + a as u64);
        let input = random_field(&mut rng, dims, -1.0, 1.0);
        let target = random_field(&mut rng, dims, 0.0, 1.0);
        let mut w = NetworkWeights::<f64>::zeros(&arch);
        for p in w.params_mut() {
            *p = rng.random_range(-0.4..0.4);
        }
        let (_, g) = backward(&arch, &w, &input, &target).unwrap();
        let analytic: Vec<f64> = g.params().copied().collect();
        for (i, &an) in analytic.iter().enumerate() {
            let loss_at = |delta: f64| {
                let mut v = w.clone();
                *v.params_mut().nth(i).unwrap() += delta;
                backward(&arch, &v, &input, &target).unwrap().0
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let denom = numeric.abs().max(an.abs()).max(1e-8);
            worst = worst.max((numeric - an).abs() / denom);
            checked += 1;
        }
    }
    verdict(
        worst <= 1e-4,
        format!("{checked} parameters over conv/relu/tanh/maxpool/upsample/MSE, worst relative error {worst:.2e}"),
    )
}

fn swap_ratio(o: &TrainOutcome) -> f64 {
    o.rows
        .iter()
        .map(|r| (r.val_loss / r.train_loss).max(r.train_loss / r.val_loss))
        .fold(1.0, f64::max)
}

fn desk_learning(baseline: &TrainOutcome) -> Verdict {
    let (first, last) = (baseline.initial_val_loss(), baseline.final_val_loss());
    let ratio = last / first;
    let tracking = swap_ratio(baseline);
    verdict(
        ratio <= 0.5 && tracking <= 2.0,
        format!(
            "val loss {first:.3e} -> {last:.3e} (ratio {ratio:.3}), worst train/val ratio at swaps {tracking:.3}"
        ),
    )
}

fn ablation_orderings(baseline0: &TrainOutcome) -> Verdict {
    let arch = ArchSpec::desk();
    let gen = GenConfig::desk();
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in [0u64, 1] {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::desk()
        };
        let mut finals = Vec::new();
        for v in AblationVariant::ALL {
            let loss = if v == AblationVariant::Baseline && seed == 0 {
                baseline0.final_val_loss()
            } else {
                run_ablation(v, &arch, &gen, &cfg, None).unwrap().final_val_loss()
            };
            finals.push(loss);
        }
        let [base, nc10, nc20, mid, large] = finals[..] else { unreachable!() };
        let holds = base < nc10 && base < nc20 && base < mid && mid < large;
        ok &= holds;
        detail.push(format!(
            "seed {seed}: baseline {base:.3e} no_centro_10 {nc10:.3e} no_centro_20 {nc20:.3e} inner_mid {mid:.3e} inner_large {large:.3e} [{}]",
            if holds { "ordered" } else { "violated" }
        ));
    }
    verdict(ok, detail.join("; "))
}

fn same_positions(a: &AtomSet, b: &AtomSet, tol: f64) -> bool {
    a.len() == b.len() && a.iter().all(|p| b.iter().any(|q| p.distance(*q) <= tol))
}

fn separation_oracle() -> Verdict {
    let gen = GenConfig::paper();
    let lo = gen.inner_origin();
    let hi = lo + gen.inner_dim as f64;
    let mut solved = 0;
    let mut worst_solved: f64 = 0.0;
    for case in 0..20u64 {
        let ex = make_example(&gen, 6000 + case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let mut pool = augment_with_mates(&ex.truth, gen.outer_dim);
        for _ in 0..10 {
            pool.0.push(Vec3::new(
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ));
        }
        let cfg = SeparationConfig {
            seed: case,
            ..SeparationConfig::default()
        };
        let res = separate(&pool, &ex.input, &gen, &cfg).unwrap();
        let recovered = same_positions(&res.selected, &ex.truth, 1e-6)
            || same_positions(&res.selected, &centro_mates(&ex.truth, gen.outer_dim), 1e-6);
        if recovered && res.score <= 1e-9 {
            solved += 1;
            worst_solved = worst_solved.max(res.score);
        }
    }
    verdict(
        solved >= 19,
        format!("{solved}/20 cases recovered truth or its mates, worst solved score {worst_solved:.2e}"),
    )
}

fn oracle_pipeline() -> Verdict {
    let gen = GenConfig::paper();
    let cfg = EvalConfig::default();
    let (mut total, mut matched, mut err_sum) = (0usize, 0usize, 0.0);
    let mut failed = 0;
    for case in 0..100u64 {
        let ex = make_example(&gen, 7000 + case).unwrap();
        match evaluate_case(case as usize, &ex, MapSource::Oracle, &gen, &cfg) {
            Ok(r) => {
                total += r.atoms;
                matched += r.report.pairs.len();
                err_sum += r.report.pairs.iter().map(|p| p.distance).sum::<f64>();
            }
            Err(_) => {
                total += gen.n_atoms;
                failed += 1;
            }
        }
    }
    let mean = err_sum / matched.max(1) as f64;
    let fraction = matched as f64 / total as f64;
    verdict(
        mean <= 0.35 && fraction >= 0.95,
        format!(
            "100 cases: mean matched error {mean:.3} px, matched {matched}/{total} ({:.1}%), {failed} failed",
            100.0 * fraction
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let gen = GenConfig::desk();
    let mut datasets = Vec::new();
    let mut runs = Vec::new();
    let cfg = TrainConfig {
        train_set_size: 20,
        val_set_size: 10,
        epochs: 4,
        seed: 5,
        ..TrainConfig::desk()
    };
    for k in 0..2 {
        let d = tmp.path().join(format!("data{k}"));
        make_dataset(&gen, 12, 7, &d, Dtype::F32).unwrap();
        datasets.push(dir_bytes(&d));
        let t = tmp.path().join(format!("train{k}"));
        train(&ArchSpec::desk(), &gen, &cfg, Some(&t)).unwrap();
        runs.push(dir_bytes(&t));
    }
    let same_data = datasets[0] == datasets[1];
    let same_train = runs[0] == runs[1];
    verdict(
        same_data && same_train,
        format!(
            "dataset files identical: {same_data} ({} files); training artifacts identical: {same_train} ({} files)",
            datasets[0].len(),
            runs[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let needs_baseline = wanted(4) || wanted(5);
    let baseline = needs_baseline.then(|| {
        let t = Instant::now();
        let out = train(&ArchSpec::desk(), &GenConfig::desk(), &TrainConfig::desk(), None).unwrap();
        (out, t.elapsed())
    });

    let mins = |m: u64| Duration::from_secs(60 * m);
    let mut all_pass = true;
    for n in 1..=8u32 {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let (name, v) = match n {
            1 => ("architecture exactness", time_limit(architecture(), t.elapsed(), Duration::from_secs(1))),
            2 => {
                let v = patterson_invariants();
                ("Patterson invariants", time_limit(v, t.elapsed(), Duration::from_secs(30)))
            }
            3 => {
                let v = gradient_check();
                ("gradient correctness", time_limit(v, t.elapsed(), mins(2)))
            }
            4 => {
                let (out, took) = baseline.as_ref().unwrap();
                ("desk-scale learning", time_limit(desk_learning(out), *took, mins(30)))
            }
            5 => {
                let (out, took) = baseline.as_ref().unwrap();
                let v = ablation_orderings(out);
                ("ablation orderings", time_limit(v, t.elapsed() + *took, mins(120)))
            }
            6 => {
                let v = separation_oracle();
                ("separation oracle", time_limit(v, t.elapsed(), mins(5)))
            }
            7 => {
                let v = oracle_pipeline();
                ("non-network pipeline accuracy", time_limit(v, t.elapsed(), mins(10)))
            }
            _ => ("determinism", determinism()),
        };
        all_pass &= v.pass;
        println!(
            "criterion {n} {}: {name}: {} [{:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed()
        );
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
