//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails or exceeds its time budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use certbox::geometry::{iou, BBox, GroundTruth, Intersection};
use certbox::harness::{
    self, generate_fixture, records_to_csv, records_to_json, run_sweep, spot_check, BoundsSource,
    DatasetEntry, FixtureConfig, SweepResult, Verdict, VerificationConfig,
};
use certbox::iou_bounds::{iou_gradient, optimal_bounds, vanilla_bounds, BoxBounds};
use certbox::network::{
    digit_loc, external_bounds_to_json, lard, parse_external_bounds, DigitLocConfig,
    ExternalBounds, LardConfig, Network, WeightEncoding,
};
use certbox::oracle::{self, network_bound_check, CampaignConfig};
use certbox::perturbation::{
    build_domain, sweep_magnitudes, ImageTensor, PerturbationKind, PerturbationSpec,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, u64, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn gt(z: [f64; 4]) -> GroundTruth {
    GroundTruth::new(z).unwrap()
}

fn c1_worked_example() -> Outcome {
    let g = gt([3.0, 1.0, 6.0, 4.0]);
    let b = BBox::new([1.0, 3.0, 4.0, 5.0]).unwrap();
    let inter = match g.bbox().intersection(&b) {
        Intersection::Box(i) => i.area(),
        Intersection::Empty => 0.0,
    };
    let v = iou(&g, &b);
    check(
        g.area() == 9.0 && b.area() == 6.0 && inter == 1.0,
        "areas differ from 9, 6, 1",
    )?;
    let err = (v - 1.0 / 14.0).abs();
    check(err <= 1e-12, format!("iou {v}, error {err:e}"))?;
    Ok(format!("iou {v} (|err| {err:e}), areas 9 / 6 / 1"))
}

fn c2_optimal_exactness() -> Outcome {
    let cfg = CampaignConfig {
        trials: 1000,
        seed: 7,
        divisions: 16,
        samples: 0,
        grid: true,
    };
    let r = oracle::run_campaign(&cfg).map_err(|e| e.to_string())?;
    check(
        r.collapsed_instances > 0,
        "instance set has no collapsed cases",
    )?;
    check(
        r.exact(),
        format!("deviation {:e}", r.max_exactness_deviation),
    )?;
    check(
        r.grid_containment_violations == 0,
        format!(
            "{} grid ranges leave the optimal bounds",
            r.grid_containment_violations
        ),
    )?;
    check(
        r.max_grid_gap <= oracle::GRID_GAP_TOL,
        format!("grid gap {:.4} > {}", r.max_grid_gap, oracle::GRID_GAP_TOL),
    )?;
    // The bare lattice is reported, not checked: at 16 divisions it cannot
    // resolve zero-width members or intervals much wider than the ground truth.
    Ok(format!(
        "{} instances ({} collapsed), max deviation {:e}, grid gap {:.4} (bare lattice {:.4})",
        r.trials,
        r.collapsed_instances,
        r.max_exactness_deviation,
        r.max_grid_gap,
        r.max_lattice_gap
    ))
}

fn c3_soundness_and_dominance() -> Outcome {
    let cfg = CampaignConfig {
        trials: 1000,
        seed: 7,
        divisions: 16,
        samples: 100,
        grid: false,
    };
    let r = oracle::run_campaign(&cfg).map_err(|e| e.to_string())?;
    check(
        r.samples_checked >= 100 * (r.trials - r.collapsed_instances),
        "too few samples drawn",
    )?;
    check(
        r.vanilla_soundness_violations == 0 && r.optimal_soundness_violations == 0,
        format!(
            "escapes: vanilla {}, optimal {}",
            r.vanilla_soundness_violations, r.optimal_soundness_violations
        ),
    )?;
    check(
        r.dominance_violations == 0,
        format!("{} dominance violations", r.dominance_violations),
    )?;
    Ok(format!(
        "{} samples over {} instances, no escapes, optimal inside vanilla",
        r.samples_checked, r.trials
    ))
}

fn c4_worked_instance() -> Outcome {
    let g = gt([0.0, 0.0, 2.0, 2.0]);
    let bb = BoxBounds::from_corners([0.0, 0.0, 2.0, 2.0], [1.0, 0.0, 2.0, 2.0]).unwrap();
    let v = vanilla_bounds(&g, &bb);
    let o = optimal_bounds(&g, &bb);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    check(
        close(v.lo, 1.0 / 3.0) && close(v.hi, 1.0),
        format!("vanilla [{}, {}]", v.lo, v.hi),
    )?;
    check(
        close(o.lo, 0.5) && close(o.hi, 1.0),
        format!("optimal [{}, {}]", o.lo, o.hi),
    )?;
    Ok(format!(
        "vanilla [{}, {}], optimal [{}, {}]",
        v.lo, v.hi, o.lo, o.hi
    ))
}

/// Overlapping configuration with every coordinate at least `margin` away
/// from the ground truth and from the overlap edges.
fn differentiable_pair(rng: &mut ChaCha8Rng, margin: f64) -> (GroundTruth, BBox) {
    loop {
        let g0: f64 = rng.gen_range(0.0..10.0);
        let g1: f64 = rng.gen_range(0.0..10.0);
        let g = [
            g0,
            g1,
            g0 + rng.gen_range(1.0..10.0),
            g1 + rng.gen_range(1.0..10.0),
        ];
        let x0 = rng.gen_range(g[0] - 5.0..g[2]);
        let y0 = rng.gen_range(g[1] - 5.0..g[3]);
        let z = [
            x0,
            y0,
            x0 + rng.gen_range(0.5..10.0),
            y0 + rng.gen_range(0.5..10.0),
        ];
        let apart = (0..4).all(|k| (z[k] - g[k]).abs() > margin);
        let overlap =
            z[2].min(g[2]) - z[0].max(g[0]) > margin && z[3].min(g[3]) - z[1].max(g[1]) > margin;
        if apart && overlap {
            return (gt(g), BBox::new(z).unwrap());
        }
    }
}

fn c5_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n = 1000;
    for _ in 0..n {
        let (g, b) = differentiable_pair(&mut rng, 1e-3);
        let grad = iou_gradient(&g, &b);
        check(
            grad.overlap && !grad.non_differentiable,
            "sample flagged non-differentiable",
        )?;
        let z = b.coords();
        for k in 0..4 {
            let mut up = z;
            let mut down = z;
            up[k] += h;
            down[k] -= h;
            let fd =
                (iou(&g, &BBox::new(up).unwrap()) - iou(&g, &BBox::new(down).unwrap())) / (2.0 * h);
            let rel = (grad.d[k] - fd).abs() / fd.abs().max(1e-12);
            worst = worst.max(rel);
            check(
                rel <= 1e-5,
                format!(
                    "d{k}: closed form {} vs fd {fd} at {z:?} gt {:?}",
                    grad.d[k],
                    g.coords()
                ),
            )?;
            // Moving a side toward the ground-truth side increases IoU.
            let expected = (g.coords()[k] - z[k]).signum();
            check(
                grad.d[k].signum() == expected,
                format!(
                    "sign of d{k} is {} at {z:?}, gt {:?}",
                    grad.d[k],
                    g.coords()
                ),
            )?;
        }
    }
    Ok(format!(
        "{n} configurations, max relative error {worst:e}, signs follow sign(gt - z)"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::new(
        h,
        w,
        c,
        (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn c6_ibp_soundness() -> Outcome {
    let mut nets: Vec<(&str, Network)> = Vec::new();
    for seed in 0..6 {
        let d = DigitLocConfig {
            input: (16, 16, 1),
            channels: 4,
            hidden: 32,
        };
        nets.push(("digit_loc", digit_loc(&d, seed)));
        let l = LardConfig {
            input: (16, 16, 3),
            channels: [4, 8, 8],
            hidden: 32,
        };
        nets.push(("lard", lard(&l, 100 + seed)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut samples, mut violations, mut worst_point) = (0usize, 0usize, 0.0f64);
    for (i, (name, net)) in nets.iter().enumerate() {
        let (h, w, c) = net.input_shape();
        let img = random_image(&mut rng, h, w, c);

        let zero = PerturbationSpec::new(PerturbationKind::WhiteNoise, 0.0).unwrap();
        let ibp = net
            .propagate_ibp(&build_domain(&img, &zero, false).unwrap())
            .unwrap();
        let fwd = net.forward(&img).unwrap();
        for k in 0..4 {
            let scale = fwd.coords[k].abs().max(1.0);
            let dev = (ibp.raw[k].lo() - fwd.coords[k])
                .abs()
                .max((ibp.raw[k].hi() - fwd.coords[k]).abs())
                / scale;
            worst_point = worst_point.max(dev);
        }

        for kind in [
            PerturbationKind::WhiteNoise,
            PerturbationKind::Brightness,
            PerturbationKind::Contrast,
        ] {
            for m in [0.001, 0.01, 0.05] {
                let spec = PerturbationSpec::new(kind, m).unwrap();
                let r = network_bound_check(net, &spec, &img, 100, (i * 31) as u64)
                    .map_err(|e| e.to_string())?;
                samples += r.samples;
                if r.violations > 0 {
                    violations += r.violations;
                    eprintln!(
                        "  {name} #{i} {kind} {m}: {} escapes, max {:e}",
                        r.violations, r.max_escape
                    );
                }
            }
        }
    }
    check(
        violations == 0,
        format!("{violations} of {samples} samples escape"),
    )?;
    check(
        worst_point <= 1e-9,
        format!("zero-magnitude bounds deviate by {worst_point:e}"),
    )?;
    Ok(format!(
        "{} networks, {samples} sampled passes inside bounds, point deviation {worst_point:e}",
        nets.len()
    ))
}

/// Fixture sweeps: kind and largest magnitude, 11 steps each.
const FIXTURE_SWEEPS: [(PerturbationKind, f64); 3] = [
    (PerturbationKind::WhiteNoise, 0.12),
    (PerturbationKind::Brightness, 0.12),
    (PerturbationKind::Contrast, 0.5),
];

fn fixture_sweep(
    data: &[DatasetEntry],
    net: &Network,
    kind: PerturbationKind,
    max: f64,
    workers: usize,
) -> SweepResult {
    let sweep = sweep_magnitudes(0.0, max, 11)
        .unwrap()
        .into_iter()
        .map(|m| PerturbationSpec::new(kind, m).unwrap())
        .collect();
    let mut cfg = VerificationConfig::new(sweep);
    cfg.workers = workers;
    cfg.record_timings = false;
    run_sweep(data, BoundsSource::Ibp(net), &cfg).unwrap()
}

fn c7_pipeline_monotonicity(fixture: &(Vec<DatasetEntry>, Network)) -> Outcome {
    let (data, net) = fixture;
    check(data.len() >= 20, "fixture too small")?;
    let mut summary = Vec::new();
    for (kind, max) in FIXTURE_SWEEPS {
        let res = fixture_sweep(data, net, kind, max, 0);
        check(res.table.len() == 11, "sweep does not have 11 steps")?;
        for pair in res.table.windows(2) {
            check(
                pair[1].vba <= pair[0].vba,
                format!(
                    "{kind}: VBA rises from {} to {} at {}",
                    pair[0].vba, pair[1].vba, pair[1].spec.magnitude
                ),
            )?;
        }
        for row in &res.table {
            let (v, o) = (row.vanilla.unwrap(), row.optimal.unwrap());
            let m = row.spec.magnitude;
            check(
                o.vba >= v.vba,
                format!("{kind} {m}: optimal VBA {} < vanilla {}", o.vba, v.vba),
            )?;
            check(
                o.mean_lo >= v.mean_lo && o.mean_hi <= v.mean_hi,
                format!("{kind} {m}: mean envelopes do not nest"),
            )?;
        }
        let last = res.table.last().unwrap();
        summary.push(format!(
            "{kind} VBA {} -> {} (vanilla {})",
            res.table[0].vba,
            last.vba,
            last.vanilla.unwrap().vba
        ));
    }
    Ok(format!("{} images; {}", data.len(), summary.join(", ")))
}

fn c8_verdict_contract(fixture: &(Vec<DatasetEntry>, Network)) -> Outcome {
    let (data, net) = fixture;
    let (mut verified, mut unknown, mut samples) = (0usize, 0usize, 0usize);
    let mut min_iou = f64::INFINITY;
    for (kind, max) in FIXTURE_SWEEPS {
        let res = fixture_sweep(data, net, kind, max, 0);
        for r in &res.records {
            let expected = if r.certified_lower() >= 0.5 {
                Verdict::Verified
            } else {
                Verdict::Unknown
            };
            check(
                r.verdict == expected,
                format!(
                    "{} {}: verdict {} with lo {}",
                    r.image_id,
                    r.spec.magnitude,
                    r.verdict,
                    r.certified_lower()
                ),
            )?;
            if r.verdict == Verdict::Unknown {
                unknown += 1;
                continue;
            }
            verified += 1;
            let entry = data.iter().find(|e| e.image_id == r.image_id).unwrap();
            let s = spot_check(net, entry, &r.spec, false, 100, 8).map_err(|e| e.to_string())?;
            samples += s.samples;
            check(
                s.malformed == 0,
                format!("{}: {} malformed predictions", r.image_id, s.malformed),
            )?;
            check(
                s.min_iou >= 0.5,
                format!(
                    "{} {} {}: sampled IoU {}",
                    r.image_id, kind, r.spec.magnitude, s.min_iou
                ),
            )?;
            min_iou = min_iou.min(s.min_iou);
        }
        let csv = records_to_csv(&res.records);
        check(
            csv.lines()
                .skip(1)
                .all(|l| l.contains(",verified,") || l.contains(",unknown,")),
            "report holds a verdict other than verified/unknown",
        )?;
    }
    check(
        verified > 0 && unknown > 0,
        "sweep does not exercise both verdicts",
    )?;
    Ok(format!(
        "{verified} verified ({samples} samples, min IoU {min_iou:.4}), {unknown} unknown"
    ))
}

fn c9_determinism(fixture: &(Vec<DatasetEntry>, Network)) -> Outcome {
    let (data, net) = fixture;
    let a = fixture_sweep(data, net, PerturbationKind::Contrast, 0.5, 1);
    let b = fixture_sweep(data, net, PerturbationKind::Contrast, 0.5, 4);
    check(
        records_to_csv(&a.records) == records_to_csv(&b.records),
        "CSV differs between runs",
    )?;
    check(
        records_to_json(&a.records) == records_to_json(&b.records),
        "JSON differs between runs",
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("r.json");
    harness::write_report(&a.records, &path, harness::ReportFormat::Json)
        .map_err(|e| e.to_string())?;
    check(
        harness::read_json_report(&path).map_err(|e| e.to_string())? == a.records,
        "JSON report round trip",
    )?;

    let again = generate_fixture(&FixtureConfig::default(), 1).unwrap();
    check(
        again.0 == *data && again.1 == *net,
        "fixture generation is not deterministic",
    )?;

    let nets = [
        net.clone(),
        digit_loc(
            &DigitLocConfig {
                input: (28, 28, 1),
                channels: 8,
                hidden: 64,
            },
            9,
        ),
        lard(
            &LardConfig {
                input: (16, 16, 3),
                channels: [4, 8, 8],
                hidden: 32,
            },
            9,
        ),
    ];
    for n in &nets {
        for enc in [WeightEncoding::Base64, WeightEncoding::Nested] {
            let text = n.to_json(enc);
            let back = Network::from_json(&text).map_err(|e| e.to_string())?;
            check(
                back == *n && back.to_json(enc) == text,
                format!("{enc:?} model round trip"),
            )?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ext = ExternalBounds::new();
    for i in 0..50 {
        let lo: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..50.0));
        let lo = [lo[0], lo[1], lo[0] + lo[2], lo[1] + lo[3]];
        let up = lo.map(|v| v + rng.gen::<f64>() / 3.0);
        ext.insert(format!("img{i}"), BoxBounds::from_corners(lo, up).unwrap());
    }
    let text = external_bounds_to_json(&ext);
    let back = parse_external_bounds(&text).map_err(|e| e.to_string())?;
    check(
        back == ext && external_bounds_to_json(&back) == text,
        "bounds file round trip",
    )?;
    Ok(format!(
        "{} records identical across worker counts; {} models and {} bounds round-trip bit-exactly",
        a.records.len(),
        nets.len(),
        ext.len()
    ))
}

fn c10_two_vertex_probe() -> Outcome {
    let cfg = CampaignConfig {
        trials: 10_000,
        seed: 10,
        divisions: 2,
        samples: 0,
        grid: false,
    };
    let r = oracle::run_campaign(&cfg).map_err(|e| e.to_string())?;
    check(
        r.trials >= 10_000 && r.extremes_probed > 0,
        "probe did not run",
    )?;
    Ok(format!(
        "two-box minimum exceeds the 16-vertex minimum on {} of {} non-collapsed instances (max gap {:.4}); \
         two-box lower bound differs on {}",
        r.extremes_looser, r.extremes_probed, r.max_extremes_gap, r.extremes_variant_differs
    ))
}

fn main() -> ExitCode {
    let fixture = generate_fixture(&FixtureConfig::default(), 1).expect("default fixture");
    let criteria: Vec<Criterion> = vec![
        ("1 iou worked example", 1, Box::new(c1_worked_example)),
        ("2 optimal exactness", 60, Box::new(c2_optimal_exactness)),
        (
            "3 soundness and dominance",
            120,
            Box::new(c3_soundness_and_dominance),
        ),
        ("4 loose vs tight instance", 1, Box::new(c4_worked_instance)),
        ("5 gradient agreement", 30, Box::new(c5_gradient)),
        ("6 ibp soundness", 300, Box::new(c6_ibp_soundness)),
        (
            "7 pipeline monotonicity",
            600,
            Box::new(|| c7_pipeline_monotonicity(&fixture)),
        ),
        (
            "8 verdict contract",
            120,
            Box::new(|| c8_verdict_contract(&fixture)),
        ),
        (
            "9 determinism and formats",
            60,
            Box::new(|| c9_determinism(&fixture)),
        ),
        ("10 two-vertex probe", 60, Box::new(c10_two_vertex_probe)),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > Duration::from_secs(budget) => {
                Err(format!("{msg}; took {took:.2?}, budget {budget} s"))
            }
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name} [{took:.2?}]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} [{took:.2?}]: {msg}");
            }
        }
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
