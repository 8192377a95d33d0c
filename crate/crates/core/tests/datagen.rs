use kmcsvm::datagen::{self, CohortConfig, GenConfig};
use kmcsvm::dataset::Label;
use kmcsvm::kmeans::{KMeansConfig, KRule};
use kmcsvm::pipeline::{self, Granularity};
use kmcsvm::svm::{self, TrainConfig};

fn band_frequencies(speeds: &[f64], edges: &[(f64, f64)]) -> Vec<f64> {
    let n = speeds.len() as f64;
    let last = edges.len() - 1;
    edges
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            // jitter can push samples past the outer edges; count them with
            // the outermost bands
            let inside = |s: f64| (b == 0 || s >= lo) && (b == last || s < hi);
            speeds.iter().filter(|&&s| inside(s)).count() as f64 / n
        })
        .collect()
}

#[test]
fn moderate_histogram_matches_band_weights() {
    let profile = datagen::default_profile(Label::Moderate, 1).unwrap();
    for seed in [1u64, 2] {
        let ds = datagen::generate(&GenConfig {
            duration: 2000.0,
            rate: 50.0,
            seed,
            profile: profile.clone(),
            label: Label::Moderate,
        })
        .unwrap();
        assert_eq!(ds.len(), 100_000);
        let speeds: Vec<f64> = ds.samples.iter().map(|s| s.speed).collect();
        let edges: Vec<(f64, f64)> = profile.bands.iter().map(|b| (b.lo, b.hi)).collect();
        for (b, (freq, band)) in band_frequencies(&speeds, &edges)
            .iter()
            .zip(&profile.bands)
            .enumerate()
        {
            assert!(
                (freq - band.weight).abs() <= 0.03,
                "seed {seed} band {b} [{}, {}): {freq} vs weight {}",
                band.lo,
                band.hi,
                band.weight
            );
        }
    }
}

#[test]
fn samples_respect_invariants() {
    for (label, group) in [
        (Label::Aggressive, 1),
        (Label::Moderate, 1),
        (Label::Aggressive, 2),
        (Label::Moderate, 2),
    ] {
        let ds = datagen::generate(&GenConfig {
            duration: 200.0,
            rate: 50.0,
            seed: 5,
            profile: datagen::default_profile(label, group).unwrap(),
            label,
        })
        .unwrap();
        for s in &ds.samples {
            assert!((0.0..=datagen::MAX_SPEED).contains(&s.speed));
            assert!((0.0..=1.0).contains(&s.throttle));
            assert_eq!(s.label, label);
        }
    }
}

#[test]
fn cohort_shape() {
    let cfg = CohortConfig::new(1.4, 9, 1);
    let (ds, part) = datagen::generate_cohort(4, 10, &cfg).unwrap();
    assert_eq!(part.z, 80);
    assert_eq!(ds.len(), 80 * 70);
    assert_eq!(ds.count(Label::Aggressive), ds.count(Label::Moderate));
    for subset in part.subsets() {
        let first = ds.samples[subset[0]].label;
        assert!(subset.iter().all(|&i| ds.samples[i].label == first));
        // runs are consecutive blocks
        assert_eq!(subset.last().unwrap() - subset[0] + 1, subset.len());
    }
}

#[test]
fn cohort_is_deterministic_and_seed_sensitive() {
    let a = datagen::generate_cohort(2, 3, &CohortConfig::new(2.0, 77, 2)).unwrap();
    let b = datagen::generate_cohort(2, 3, &CohortConfig::new(2.0, 77, 2)).unwrap();
    let c = datagen::generate_cohort(2, 3, &CohortConfig::new(2.0, 78, 2)).unwrap();
    assert_eq!(pipeline::checksum(&a.0), pipeline::checksum(&b.0));
    assert_eq!(a.1, b.1);
    assert_ne!(pipeline::checksum(&a.0), pipeline::checksum(&c.0));
}

#[test]
fn cohort_matches_sequential_execution() {
    let mut cfg = CohortConfig::new(2.0, 4, 1);
    let par = datagen::generate_cohort(3, 2, &cfg).unwrap();
    cfg.exec = kmcsvm::Execution::Sequential;
    let seq = datagen::generate_cohort(3, 2, &cfg).unwrap();
    assert_eq!(par, seq);
}

/// Plain SVM on 1000 samples per class lands in the overlapping regime:
/// neither trivially separable nor useless.
#[test]
fn styles_overlap_but_separate() {
    let cfg = TrainConfig::new(128.0, 1.0 / 512.0).unwrap();
    for group in [1u8, 2] {
        let (train, _) =
            datagen::generate_cohort(2, 2, &CohortConfig::new(5.0, 100 + group as u64, group))
                .unwrap();
        let (test, _) =
            datagen::generate_cohort(4, 5, &CohortConfig::new(5.0, 200 + group as u64, group))
                .unwrap();
        assert_eq!(train.count(Label::Aggressive), 1000);
        let model = svm::train_smo(&train.points(), &train.labels(), &cfg, 1).unwrap();
        let report = pipeline::evaluate_offline(
            &model,
            &test,
            KRule::SqrtNOver3,
            1,
            Granularity::Raw,
            &KMeansConfig::default(),
        )
        .unwrap();
        for lambda in [report.lambda_agg.unwrap(), report.lambda_mod.unwrap()] {
            assert!((0.70..=0.98).contains(&lambda), "group {group}: {report:?}");
        }
    }
}
