use certbox::harness::{
    generate_fixture, run_sweep, BoundsSource, FixtureConfig, Verdict, VerificationConfig,
};
use certbox::perturbation::{sweep_magnitudes, ContrastMode, PerturbationKind, PerturbationSpec};

fn sweep(
    kind: PerturbationKind,
    max: f64,
    mode: ContrastMode,
    clamp01: bool,
) -> VerificationConfig {
    let specs = sweep_magnitudes(0.0, max, 6)
        .unwrap()
        .into_iter()
        .map(|m| {
            PerturbationSpec::new(kind, m)
                .unwrap()
                .with_contrast_mode(mode)
        })
        .collect();
    let mut cfg = VerificationConfig::new(specs);
    cfg.clamp01 = clamp01;
    cfg.record_timings = false;
    cfg
}

#[test]
fn per_image_bounds_nest_across_magnitudes() {
    let (data, net) = generate_fixture(
        &FixtureConfig {
            images: 8,
            ..FixtureConfig::default()
        },
        2,
    )
    .unwrap();
    for clamp01 in [false, true] {
        let cfg = sweep(
            PerturbationKind::WhiteNoise,
            0.12,
            ContrastMode::Relative,
            clamp01,
        );
        let res = run_sweep(&data, BoundsSource::Ibp(&net), &cfg).unwrap();
        for e in &data {
            let recs: Vec<_> = res
                .records
                .iter()
                .filter(|r| r.image_id == e.image_id)
                .collect();
            assert_eq!(recs.len(), 6);
            assert_eq!(recs[0].optimal.unwrap().lo, 1.0);
            for w in recs.windows(2) {
                assert!(w[0].box_bounds.is_subset_of(&w[1].box_bounds));
                let (a, b) = (w[0].optimal.unwrap(), w[1].optimal.unwrap());
                assert!(b.lo <= a.lo && a.hi <= b.hi);
            }
        }
    }
}

#[test]
fn literal_contrast_darkens_everything() {
    // With s = s0 * alpha the domain around alpha = 0 holds the black image,
    // where the rectangle is invisible and nothing can be certified.
    let (data, net) = generate_fixture(
        &FixtureConfig {
            images: 4,
            ..FixtureConfig::default()
        },
        2,
    )
    .unwrap();
    let cfg = sweep(
        PerturbationKind::Contrast,
        0.5,
        ContrastMode::Literal,
        false,
    );
    let res = run_sweep(&data, BoundsSource::Ibp(&net), &cfg).unwrap();
    assert!(res.records.iter().all(|r| r.verdict == Verdict::Unknown));
    assert!(res
        .records
        .iter()
        .all(|r| r.spec.contrast_mode == ContrastMode::Literal));
}
