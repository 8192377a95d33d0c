//! Seeded synthetic driver telemetry.
//!
//! Speed follows a mixture of uniform bands. Temporal continuity comes from a
//! Gaussian copula: a stationary AR(1) process `z_t` with unit variance is
//! mapped through the normal CDF and then through the mixture's quantile
//! function, so the marginal speed law is exactly the band mixture while
//! consecutive samples stay correlated. Throttle uses a second AR(1) latent,
//! read through a logit-normal law centred on the current band's mode.
//! Small Gaussian jitter is added last and values are clamped to the valid
//! sample ranges.
//!
//! Profiles live in a plain-text `key = value` file; the shipped calibration
//! is `profiles/default.profiles`.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, Label, Sample, SubsetPartition};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::seed;

pub const DEFAULT_PROFILES: &str = include_str!("../profiles/default.profiles");
pub const MAX_SPEED: f64 = 140.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedBand {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
    pub throttle_mode: f64,
    pub throttle_concentration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleProfile {
    /// Sorted by `lo`; weights sum to one.
    pub bands: Vec<SpeedBand>,
    pub speed_noise_sd: f64,
    pub throttle_noise_sd: f64,
    pub correlation: f64,
}

impl StyleProfile {
    pub fn new(
        mut bands: Vec<SpeedBand>,
        speed_noise_sd: f64,
        throttle_noise_sd: f64,
        correlation: f64,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("profile needs at least one speed band"));
        }
        for b in &bands {
            if !(b.lo >= 0.0 && b.hi <= MAX_SPEED && b.lo < b.hi) {
                return Err(Error::invalid(format!(
                    "band [{}, {}] outside [0, {MAX_SPEED}]",
                    b.lo, b.hi
                )));
            }
            if !(b.weight > 0.0) {
                return Err(Error::invalid(format!(
                    "band weight {} must be positive",
                    b.weight
                )));
            }
            if !(b.throttle_mode > 0.0 && b.throttle_mode < 1.0) {
                return Err(Error::invalid(format!(
                    "throttle mode {} must lie in (0, 1)",
                    b.throttle_mode
                )));
            }
            if !(b.throttle_concentration > 0.0) {
                return Err(Error::invalid("throttle concentration must be positive"));
            }
        }
        let total: f64 = bands.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "band weights sum to {total}, expected 1"
            )));
        }
        if !(0.0..1.0).contains(&correlation) {
            return Err(Error::invalid(format!(
                "correlation {correlation} outside [0, 1)"
            )));
        }
        if !(speed_noise_sd >= 0.0) || !(throttle_noise_sd >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be >= 0"));
        }
        bands.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        Ok(StyleProfile {
            bands,
            speed_noise_sd,
            throttle_noise_sd,
            correlation,
        })
    }

    /// Probability mass the band mixture puts on `[lo, hi]` km/h.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.bands
            .iter()
            .map(|b| {
                let overlap = (hi.min(b.hi) - lo.max(b.lo)).max(0.0);
                b.weight * overlap / (b.hi - b.lo)
            })
            .sum()
    }

    /// Band index and speed at mixture quantile `u` in `[0, 1)`.
    fn quantile(&self, u: f64) -> (usize, f64) {
        let mut acc = 0.0;
        for (i, b) in self.bands.iter().enumerate() {
            if u < acc + b.weight || i + 1 == self.bands.len() {
                let frac = ((u - acc) / b.weight).clamp(0.0, 1.0);
                return (i, b.lo + frac * (b.hi - b.lo));
            }
            acc += b.weight;
        }
        unreachable!("profile has at least one band")
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Throttle drawn at standard-normal score `w` for a band: logit-normal with
/// location `logit(mode)` and scale `2 / sqrt(concentration)`.
fn throttle_at(band: &SpeedBand, w: f64) -> f64 {
    let m = band.throttle_mode;
    sigmoid((m / (1.0 - m)).ln() + w * 2.0 / band.throttle_concentration.sqrt())
}

/// A set of named profiles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    pub profiles: BTreeMap<String, StyleProfile>,
}

impl ProfileSet {
    /// Parses the `[name]` / `key = value` profile format.
    pub fn parse(text: &str) -> Result<Self> {
        struct Partial {
            bands: Vec<SpeedBand>,
            speed_sd: f64,
            throttle_sd: f64,
            correlation: f64,
        }
        let fresh = || Partial {
            bands: Vec::new(),
            speed_sd: 1.0,
            throttle_sd: 0.02,
            correlation: 0.95,
        };

        let mut done: Vec<(String, Partial)> = Vec::new();
        let mut current: Option<(String, Partial)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("profile line {}: {what}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some(prev) = current.take() {
                    done.push(prev);
                }
                current = Some((name.trim().to_string(), fresh()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected `key = value`"))?;
            let (_, p) = current
                .as_mut()
                .ok_or_else(|| bad("setting outside a [profile] section"))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("bad number `{}`", s.trim())))
            };
            match key.trim() {
                "correlation" => p.correlation = num(value)?,
                "speed_noise_sd" => p.speed_sd = num(value)?,
                "throttle_noise_sd" => p.throttle_sd = num(value)?,
                "band" => {
                    let v: Vec<f64> = value.split_whitespace().map(num).collect::<Result<_>>()?;
                    if v.len() != 5 {
                        return Err(bad(
                            "band needs `lo hi weight throttle_mode throttle_concentration`",
                        ));
                    }
                    p.bands.push(SpeedBand {
                        lo: v[0],
                        hi: v[1],
                        weight: v[2],
                        throttle_mode: v[3],
                        throttle_concentration: v[4],
                    });
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        if let Some(last) = current {
            done.push(last);
        }

        let mut profiles = BTreeMap::new();
        for (name, p) in done {
            let profile = StyleProfile::new(p.bands, p.speed_sd, p.throttle_sd, p.correlation)
                .map_err(|e| Error::Format(format!("profile [{name}]: {e}")))?;
            profiles.insert(name, profile);
        }
        Ok(ProfileSet { profiles })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, style: Label, group: u8) -> Result<&StyleProfile> {
        let name = profile_name(style, group);
        self.profiles
            .get(&name)
            .ok_or_else(|| Error::invalid(format!("no profile named [{name}]")))
    }
}

pub fn profile_name(style: Label, group: u8) -> String {
    format!("{}-{group}", style.name())
}

/// The shipped calibration for `style` in driver group 1 or 2.
pub fn default_profile(style: Label, group: u8) -> Result<StyleProfile> {
    if !(1..=2).contains(&group) {
        return Err(Error::invalid(format!(
            "driver group must be 1 or 2, got {group}"
        )));
    }
    let set = ProfileSet::parse(DEFAULT_PROFILES).expect("shipped profiles parse");
    set.get(style, group).cloned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Seconds of driving.
    pub duration: f64,
    /// Samples per second.
    pub rate: f64,
    pub seed: u64,
    pub profile: StyleProfile,
    pub label: Label,
}

impl GenConfig {
    pub fn sample_count(&self) -> Result<usize> {
        if !(self.rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::invalid("duration and rate must be > 0"));
        }
        let n = (self.duration * self.rate).round();
        if n < 1.0 || !n.is_finite() {
            return Err(Error::invalid(
                "duration * rate must be at least one sample",
            ));
        }
        Ok(n as usize)
    }
}

/// One driving trace of `round(duration * rate)` samples.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    let n = cfg.sample_count()?;
    let p = &cfg.profile;
    let mut rng = seed::rng(cfg.seed);
    let rho = p.correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    let speed_jitter =
        Normal::new(0.0, p.speed_noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let throttle_jitter =
        Normal::new(0.0, p.throttle_noise_sd).map_err(|e| Error::invalid(e.to_string()))?;

    let mut z: f64 = StandardNormal.sample(&mut rng);
    let mut w: f64 = StandardNormal.sample(&mut rng);
    let mut samples = Vec::with_capacity(n);
    for step in 0..n {
        if step > 0 {
            let ez: f64 = StandardNormal.sample(&mut rng);
            let ew: f64 = StandardNormal.sample(&mut rng);
            z = rho * z + innovation * ez;
            w = rho * w + innovation * ew;
        }
        // keep u strictly below 1 so it lands inside the last band
        let u = normal_cdf(z).min(1.0 - f64::EPSILON);
        let (band, base_speed) = p.quantile(u);
        let speed = (base_speed + speed_jitter.sample(&mut rng)).clamp(0.0, MAX_SPEED);
        let throttle =
            (throttle_at(&p.bands[band], w) + throttle_jitter.sample(&mut rng)).clamp(0.0, 1.0);
        samples.push(Sample {
            speed,
            throttle,
            label: cfg.label,
        });
    }
    Dataset::with_rate(samples, cfg.rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    /// Seconds per run.
    pub run_duration: f64,
    pub rate: f64,
    pub seed: u64,
    /// Driver group whose profiles are used (1 or 2).
    pub group: u8,
    pub profiles: ProfileSet,
    pub exec: Execution,
}

impl CohortConfig {
    pub fn new(run_duration: f64, seed: u64, group: u8) -> Self {
        CohortConfig {
            run_duration,
            rate: crate::dataset::DEFAULT_SAMPLE_RATE,
            seed,
            group,
            profiles: ProfileSet::parse(DEFAULT_PROFILES).expect("shipped profiles parse"),
            exec: Execution::default(),
        }
    }
}

/// Aggressive drivers first, then moderate ones; each driver contributes
/// `runs_per_driver` consecutive runs, and each run is one subset of the
/// returned partition.
pub fn generate_cohort(
    drivers_per_style: usize,
    runs_per_driver: usize,
    cfg: &CohortConfig,
) -> Result<(Dataset, SubsetPartition)> {
    if drivers_per_style < 1 || runs_per_driver < 1 {
        return Err(Error::invalid(
            "cohort needs at least one driver per style and one run",
        ));
    }
    let agg = cfg.profiles.get(Label::Aggressive, cfg.group)?.clone();
    let moderate = cfg.profiles.get(Label::Moderate, cfg.group)?.clone();

    let drivers: Vec<(usize, Label)> = (0..2 * drivers_per_style)
        .map(|d| {
            (
                d,
                if d < drivers_per_style {
                    Label::Aggressive
                } else {
                    Label::Moderate
                },
            )
        })
        .collect();
    let traces = cfg
        .exec
        .map(&drivers, |&(d, label)| -> Result<Vec<Dataset>> {
            let driver_seed = seed::derive(cfg.seed, d as u64);
            let profile = if label == Label::Aggressive {
                &agg
            } else {
                &moderate
            };
            (0..runs_per_driver)
                .map(|r| {
                    generate(&GenConfig {
                        duration: cfg.run_duration,
                        rate: cfg.rate,
                        seed: seed::derive(driver_seed, r as u64),
                        profile: profile.clone(),
                        label,
                    })
                })
                .collect()
        });

    let mut samples = Vec::new();
    let mut assignments = Vec::new();
    let mut run_index = 0;
    for runs in traces {
        for run in runs? {
            assignments.extend(std::iter::repeat_n(run_index, run.len()));
            samples.extend(run.samples);
            run_index += 1;
        }
    }
    let part = SubsetPartition::from_assignments(run_index, assignments)?;
    Ok((Dataset::with_rate(samples, cfg.rate)?, part))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(style: Label, group: u8, duration: f64, seed: u64) -> GenConfig {
        GenConfig {
            duration,
            rate: 50.0,
            seed,
            profile: default_profile(style, group).unwrap(),
            label: style,
        }
    }

    #[test]
    fn shipped_profiles_are_valid() {
        let set = ProfileSet::parse(DEFAULT_PROFILES).unwrap();
        assert_eq!(set.profiles.len(), 4);
        for p in set.profiles.values() {
            let total: f64 = p.bands.iter().map(|b| b.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(default_profile(Label::Moderate, 3).is_err());
    }

    #[test]
    fn calibration_matches_narrative() {
        // integrate the shipped mixtures directly
        let m1 = default_profile(Label::Moderate, 1).unwrap();
        assert!(m1.mass_between(80.0, MAX_SPEED) <= 0.02);
        let a1 = default_profile(Label::Aggressive, 1).unwrap();
        assert!(a1.mass_between(75.0, 95.0) >= 0.25);
        assert!(a1.mass_between(30.0, 50.0) < m1.mass_between(30.0, 50.0));
        let m2 = default_profile(Label::Moderate, 2).unwrap();
        let a2 = default_profile(Label::Aggressive, 2).unwrap();
        assert!(m2.mass_between(35.0, 75.0) >= 0.75);
        assert!(a2.mass_between(80.0, MAX_SPEED) > m2.mass_between(80.0, MAX_SPEED));
    }

    #[test]
    fn sample_counts_and_determinism() {
        let c = cfg(Label::Aggressive, 1, 1.4, 3);
        let a = generate(&c).unwrap();
        assert_eq!(a.len(), 70);
        assert_eq!(a, generate(&c).unwrap());
        assert_ne!(a, generate(&GenConfig { seed: 4, ..c }).unwrap());
        assert!(a.samples.iter().all(|s| s.label == Label::Aggressive));
    }

    #[test]
    fn samples_are_valid_and_smooth() {
        let ds = generate(&cfg(Label::Moderate, 2, 120.0, 9)).unwrap();
        for s in &ds.samples {
            assert!(Sample::new(s.speed, s.throttle, s.label).is_ok());
        }
        let jumps: f64 = ds
            .samples
            .windows(2)
            .map(|w| (w[1].speed - w[0].speed).abs())
            .sum::<f64>()
            / (ds.len() - 1) as f64;
        // independent draws from a ~60 km/h wide mixture would jump ~20 km/h on average
        assert!(jumps < 6.0, "mean step {jumps}");
    }

    #[test]
    fn profile_parse_errors() {
        assert!(ProfileSet::parse("band = 1 2 1 0.5 4").is_err());
        assert!(ProfileSet::parse("[x]\nband = 1 2 0.5 0.5 4").is_err());
        assert!(ProfileSet::parse("[x]\nband = 1 2 1 0.5").is_err());
        assert!(ProfileSet::parse("[x]\ncolour = red").is_err());
        let ok =
            ProfileSet::parse("[x]\ncorrelation = 0.5\nband = 0 10 1 0.5 4 # one band\n").unwrap();
        assert_eq!(ok.profiles["x"].correlation, 0.5);
    }

    #[test]
    fn cohort_layout() {
        let cohort = CohortConfig::new(1.4, 5, 1);
        let (ds, part) = generate_cohort(4, 10, &cohort).unwrap();
        assert_eq!(part.z, 80);
        assert_eq!(ds.len(), 80 * 70);
        for subset in part.subsets() {
            assert_eq!(subset.len(), 70);
            let first = ds.samples[subset[0]].label;
            assert!(subset.iter().all(|&i| ds.samples[i].label == first));
        }
        assert_eq!(ds.count(Label::Aggressive), ds.count(Label::Moderate));
        let seq = CohortConfig {
            exec: Execution::Sequential,
            ..cohort.clone()
        };
        assert_eq!(generate_cohort(4, 10, &seq).unwrap().0, ds);
    }
}
