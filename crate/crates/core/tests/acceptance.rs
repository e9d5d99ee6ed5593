//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p specboot --test acceptance -- 1 2 10`.

use std::time::Instant;

use rand::Rng;
use specboot::estimators::estimate_all;
use specboot::experiment::{run_experiment, Design, ExperimentConfig, LawTag, SummaryRow};
use specboot::inference::{limiting_rank_variance, limiting_rank_variance_closed_form, prepare};
use specboot::mp::{centering_moments, centering_parameter, esd_grid, EsdOptions};
use specboot::quest::QuestOptions;
use specboot::rng::{derive_seed, stream};
use specboot::sampling::{sample_dataset, sample_unit_sphere, sample_xi_squared};
use specboot::spectra::{kolmogorov_distance, levy_distance, make_covariance_setting};
use specboot::{CovarianceSpec, EllipticalLaw, Setting, SpectralFunction, SpectrumModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn mp_closed_form() -> Outcome {
    let h = SpectrumModel::point_mass(1.0);
    let mut worst = 0.0f64;
    let mut atom_ok = true;
    for c in [0.25, 0.5, 2.0] {
        let dist = esd_grid(&h, c, &EsdOptions::default()).unwrap();
        let (a, b) = ((1.0 - c.sqrt()).powi(2), (1.0 + c.sqrt()).powi(2));
        let band = 0.01 * (b - a);
        for i in 0..=2000 {
            let x = a + band + (b - a - 2.0 * band) * i as f64 / 2000.0;
            let exact = ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * c * x);
            worst = worst.max((dist.density_at(x).unwrap() - exact).abs());
        }
        if c == 2.0 {
            atom_ok = dist.zero_atom() == 1.0 - 1.0 / c;
        }
    }
    outcome(worst < 1e-3 && atom_ok, format!("sup density error {worst:.2e} (< 1e-3), zero atom exact: {atom_ok}"))
}

fn centering_identity() -> Outcome {
    let n = 400;
    let mut worst = 0.0f64;
    for setting in [Setting::S1, Setting::S2, Setting::S3] {
        for c in [0.5, 1.0, 1.5] {
            let p = (c * n as f64).round() as usize;
            let spec = make_covariance_setting(setting, p, None).unwrap();
            let h = SpectrumModel::from_eigenvalues(spec.eigenvalues()).unwrap();
            let dist = esd_grid(&h, p as f64 / n as f64, &EsdOptions::default()).unwrap();
            let (m1, m2) = centering_moments(&h, n, p);
            let t1 = centering_parameter(&dist, &SpectralFunction::Identity).unwrap();
            let t2 = centering_parameter(&dist, &SpectralFunction::Square).unwrap();
            worst = worst.max(rel(t1, m1)).max(rel(t2, m2));
        }
    }
    outcome(worst < 1e-3, format!("max relative error {worst:.2e} over S1-S3, c in {{0.5, 1, 1.5}} (< 1e-3)"))
}

fn quadratic_form_variance() -> Outcome {
    let p = 20;
    let spec = make_covariance_setting(Setting::S1, p, Some(11)).unwrap();
    let cm = spec.matrix().unwrap();
    let law = EllipticalLaw::ChiSquared;
    let draws = 1_000_000;
    let mut rng = stream(7);
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let u = sample_unit_sphere(p, &mut rng).unwrap();
        let xi2 = sample_xi_squared(&law, p, &mut rng).unwrap();
        let mut q = 0.0;
        for i in 0..p {
            let mut row = 0.0;
            for j in 0..p {
                row += cm[(i, j)] * u[j];
            }
            q += u[i] * row;
        }
        let v = xi2 * q;
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / draws as f64;
    let mc = (s2 - draws as f64 * mean * mean) / (draws as f64 - 1.0);
    // E(uᵀCu)² = (tr²C + 2 tr C²) / (p(p+2)), E ξ² = p
    let (tr, tr_sq, pf) = (spec.trace(), spec.trace_sq(), p as f64);
    let exact = law.xi_fourth_moment(p) * (tr * tr + 2.0 * tr_sq) / (pf * (pf + 2.0)) - tr * tr;
    let e = rel(mc, exact);
    outcome(e < 0.02, format!("Monte Carlo {mc:.5} vs closed form {exact:.5}, relative {e:.2e} (< 2%)"))
}

fn varsigma_consistency() -> Outcome {
    let (n, p) = (400, 200);
    let spec = make_covariance_setting(Setting::S1, p, None).unwrap();
    let errs: Vec<f64> = (0..200)
        .map(|t| {
            let x = sample_dataset(&spec, &EllipticalLaw::ChiSquared, n, derive_seed(4, t)).unwrap();
            (estimate_all(&x).unwrap().varsigma_sq_hat / p as f64 - 2.0).abs()
        })
        .collect();
    let m = errs.iter().sum::<f64>() / errs.len() as f64;
    outcome(m < 0.15, format!("mean |varsigma^2/p - 2| = {m:.4} over 200 trials (< 0.15)"))
}

fn cell_config(design: Design, trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(design, trials);
    cfg.n = 400;
    cfg.ratios = vec![0.5];
    cfg.laws = vec![LawTag::I];
    cfg.settings = vec![Setting::S1];
    cfg.master_seed = 1;
    cfg.output_dir = std::env::temp_dir().join(format!("specboot-acceptance-{design:?}-{}", std::process::id()));
    cfg
}

fn run_cell(cfg: &ExperimentConfig) -> Vec<SummaryRow> {
    let out = run_experiment(cfg, None).unwrap();
    let _ = std::fs::remove_dir_all(&cfg.output_dir);
    out.summary
}

fn row<'a>(rows: &'a [SummaryRow], stat: &str) -> &'a SummaryRow {
    rows.iter().find(|r| r.stat == stat).unwrap_or_else(|| panic!("no summary row for {stat}"))
}

fn table1_cell() -> Outcome {
    let mut cfg = cell_config(Design::Table1, 2000);
    cfg.boot_runs = Some(100);
    cfg.b = 250;
    let rows = run_cell(&cfg);
    let r = &rows[0];
    let (e_sd, e_bsd, e_p95) = (rel(r.ground_sd, 3.31), rel(r.boot_sd_mean, 3.27), rel(r.boot_p95_mean, 5.85));
    outcome(
        e_sd < 0.10 && e_bsd < 0.10 && e_p95 < 0.15,
        format!(
            "ground sd {:.3} vs 3.31 ({:.1}% < 10%), boot sd {:.3} vs 3.27 ({:.1}% < 10%), boot p95 {:.3} vs 5.85 ({:.1}% < 15%)",
            r.ground_sd,
            100.0 * e_sd,
            r.boot_sd_mean,
            100.0 * e_bsd,
            r.boot_p95_mean,
            100.0 * e_p95
        ),
    )
}

fn table3_cell() -> Outcome {
    let mut cfg = cell_config(Design::Table3, 2000);
    cfg.boot_runs = Some(100);
    cfg.b = 250;
    let rows = run_cell(&cfg);
    let r = &rows[0];
    let (e_g, e_b) = (rel(r.ground_mean, 2.90), rel(r.boot_mean_mean, 2.93));
    outcome(
        e_g < 0.02 && e_b < 0.02,
        format!(
            "ground mean {:.4} vs 2.90 ({:.2}% < 2%), boot mean {:.4} vs 2.93 ({:.2}% < 2%)",
            r.ground_mean,
            100.0 * e_g,
            r.boot_mean_mean,
            100.0 * e_b
        ),
    )
}

fn table5_coverage() -> Outcome {
    let cfg = cell_config(Design::Table5, 300);
    let rows = run_cell(&cfg);
    let coverage = 100.0 * row(&rows, "ci_covered").ground_mean;
    let width = row(&rows, "ci_width_pct").ground_mean;
    outcome(
        (91.0..=98.0).contains(&coverage) && (1.5..=2.5).contains(&width),
        format!("coverage {coverage:.2}% (in [91, 98]), mean width/r {width:.3}% (in [1.5, 2.5])"),
    )
}

fn rank_test_level_power() -> Outcome {
    let mut cfg = cell_config(Design::RankPower, 200);
    cfg.rank_grid = vec![0.098, 0.105];
    let rows = run_cell(&cfg);
    let rate = |g: &str| {
        rows.iter()
            .find(|r| r.stat == "rank_test_reject" && r.setting == format!("S1-rank-{g}"))
            .map(|r| r.ground_mean)
            .unwrap()
    };
    let (level, power) = (rate("0.0980"), rate("0.1050"));
    outcome(
        level <= 0.07 && power >= 0.90,
        format!(
            "rejection {:.1}% at r/p = 0.098 (<= 7%), {:.1}% at r/p = 0.105 (>= 90%)",
            100.0 * level,
            100.0 * power
        ),
    )
}

fn spectrum_estimate_consistency() -> Outcome {
    let (n, p) = (800, 400);
    let spec = CovarianceSpec::scaled_identity(p, 1.0).unwrap();
    let truth = SpectrumModel::point_mass(1.0);
    let (mut ks, mut levy) = (Vec::new(), Vec::new());
    for t in 0..50 {
        let x = sample_dataset(&spec, &EllipticalLaw::ChiSquared, n, derive_seed(9, t)).unwrap();
        let d = prepare(&x, &QuestOptions::default()).unwrap();
        let est = SpectrumModel::from_eigenvalues(&d.spectrum_tilde).unwrap();
        ks.push(kolmogorov_distance(&est, &truth));
        levy.push(levy_distance(&est, &truth));
    }
    let (ks, levy) = (median(ks), median(levy));
    outcome(ks <= 0.15, format!("median Kolmogorov distance {ks:.4} (<= 0.15); median Levy distance {levy:.4}"))
}

fn variance_formula() -> Outcome {
    let mut rng = stream(10);
    let (mut worst, mut min_var) = (0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let atoms: Vec<(f64, f64)> =
            (0..k).map(|_| (rng.random_range(0.0..5.0), rng.random_range(0.01..1.0))).collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mut phi = [0.0; 4];
        for (i, m) in phi.iter_mut().enumerate() {
            *m = atoms.iter().map(|(t, w)| w * t.powi(i as i32 + 1)).sum::<f64>() / total;
        }
        if phi[1] <= 1e-6 {
            continue;
        }
        let c = rng.random_range(0.01..4.0);
        let tau = rng.random_range(0.0..10.0);
        let quad = limiting_rank_variance(phi, c, tau).unwrap().var_rank;
        let closed = limiting_rank_variance_closed_form(phi, c).unwrap();
        worst = worst.max((quad - closed).abs() / closed.abs().max(1.0));
        min_var = min_var.min(quad);
    }
    outcome(
        worst <= 1e-10 && min_var >= 0.0,
        format!("max scaled gap {worst:.2e} (<= 1e-10), min variance {min_var:.3e} (>= 0)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("MP closed form", mp_closed_form),
        ("centering identity", centering_identity),
        ("quadratic-form variance", quadratic_form_variance),
        ("varsigma consistency", varsigma_consistency),
        ("Table 1 cell (i)/S1/0.5", table1_cell),
        ("Table 3 cell (i)/S1/0.5", table3_cell),
        ("Table 5 coverage (i)/S1/0.5", table5_coverage),
        ("rank test level and power", rank_test_level_power),
        ("spectrum estimate consistency", spectrum_estimate_consistency),
        ("variance formula self-consistency", variance_formula),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "{} [{id}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
