//! Seeded generation of train / validation / test / OOD datasets.
//!
//! Every sample draws a reference topology (the unchanged grid with
//! probability `p_unchanged`, otherwise random busbar reassignments on a few
//! substations), overlays line disconnections according to the split rule,
//! samples injections and solves the DC power flow for the ground truth.
//!
//! Sample `i` owns the ChaCha stream `i` of the dataset seed, so the result
//! does not depend on generation order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dc::{solve_case, Injection, LineFlows};
use crate::error::{Error, Result};
use crate::grid::{apply_topology, Busbar, Grid, TopologyVector};

pub const GENERATOR_VERSION: &str = concat!("pflab-scenario/", env!("CARGO_PKG_VERSION"));

/// Attempts allowed per sample before a draw is declared impossible.
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisconnectionRule {
    AtMostOne,
    ExactlyOne,
    ExactlyTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Ood,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Ood];

    pub fn rule(self) -> DisconnectionRule {
        match self {
            Split::Train | Split::Val => DisconnectionRule::AtMostOne,
            Split::Test => DisconnectionRule::ExactlyOne,
            Split::Ood => DisconnectionRule::ExactlyTwo,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Ood => "ood",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "ood" => Ok(Split::Ood),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_samples: usize,
    pub p_unchanged: f64,
    pub max_reconfigured_substations: usize,
    pub disconnection_rule: DisconnectionRule,
    pub load_scale_range: [f64; 2],
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_samples: 1000,
            p_unchanged: 0.3,
            max_reconfigured_substations: 2,
            disconnection_rule: DisconnectionRule::AtMostOne,
            load_scale_range: [0.8, 1.2],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Defaults for a split: its disconnection rule, given size and seed.
    pub fn for_split(split: Split, n_samples: usize, seed: u64) -> Self {
        ScenarioConfig {
            n_samples,
            disconnection_rule: split.rule(),
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_unchanged) {
            return Err(Error::InvalidConfig(format!(
                "p_unchanged must lie in [0, 1], got {}",
                self.p_unchanged
            )));
        }
        let [lo, hi] = self.load_scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "load_scale_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One input with its exact DC ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tau: TopologyVector,
    pub inj: Injection,
    /// Bus angles in the `2K` busbar-slot layout, zero on empty busbars.
    pub theta_bus: Vec<f64>,
    /// `[θ_or per line | θ_ex per line]`, zero for disconnected lines.
    pub theta_line: Vec<f64>,
    pub flows: LineFlows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid: String,
    pub split: Split,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub generator_version: String,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples, manifest updated accordingly.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.samples.len());
        let mut manifest = self.manifest.clone();
        manifest.n_samples = n;
        Dataset {
            split: self.split,
            samples: self.samples[..n].to_vec(),
            manifest,
        }
    }
}

/// RNG stream owned by sample `index` of a dataset seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn is_admissible(grid: &Grid, tau: &TopologyVector) -> bool {
    apply_topology(grid, tau).is_ok()
}

pub fn sample_reference_topology<R: Rng>(grid: &Grid, rng: &mut R, config: &ScenarioConfig) -> Result<TopologyVector> {
    let reference = TopologyVector::reference(grid);
    if rng.gen_bool(config.p_unchanged) || config.max_reconfigured_substations == 0 {
        return Ok(reference);
    }
    let max_subs = config.max_reconfigured_substations.min(grid.substations);
    let subs: Vec<usize> = (0..grid.substations).collect();
    for _ in 0..MAX_RETRIES {
        let count = rng.gen_range(1..=max_subs);
        let mut tau = reference.clone();
        for &sub in subs.choose_multiple(rng, count) {
            for e in grid.substation_elements(sub) {
                tau.element_bus[e] = if rng.gen_bool(0.5) { Busbar::One } else { Busbar::Two };
            }
        }
        // A reconfiguration that reproduces the reference is redrawn, so the
        // reference shows up with probability exactly `p_unchanged`.
        if tau != reference && is_admissible(grid, &tau) {
            return Ok(tau);
        }
    }
    Err(Error::RetriesExhausted {
        what: "reference topology",
        attempts: MAX_RETRIES,
    })
}

/// Apply the split's line outages to a topology with every line connected.
///
/// For `AtMostOne` the coin deciding whether a line goes out is drawn once;
/// only the choice of line is redrawn when it would island the grid.
pub fn overlay_disconnections<R: Rng>(
    grid: &Grid,
    tau: &TopologyVector,
    rng: &mut R,
    rule: DisconnectionRule,
) -> Result<TopologyVector> {
    if tau.n_disconnected() != 0 {
        return Err(Error::InvalidConfig(
            "disconnections must be overlaid on a topology with every line connected".into(),
        ));
    }
    let n_out = match rule {
        DisconnectionRule::AtMostOne => usize::from(rng.gen_bool(0.5)),
        DisconnectionRule::ExactlyOne => 1,
        DisconnectionRule::ExactlyTwo => 2,
    };
    if n_out == 0 {
        return Ok(tau.clone());
    }
    let lines: Vec<usize> = (0..grid.n_lines()).collect();
    if lines.len() < n_out {
        return Err(Error::InvalidConfig(format!(
            "cannot disconnect {n_out} lines on a grid with {}",
            lines.len()
        )));
    }
    for _ in 0..MAX_RETRIES {
        let mut out = tau.clone();
        for &l in lines.choose_multiple(rng, n_out) {
            out.line_status[l] = false;
        }
        if is_admissible(grid, &out) {
            return Ok(out);
        }
    }
    Err(Error::RetriesExhausted {
        what: "line disconnections",
        attempts: MAX_RETRIES,
    })
}

/// Loads scaled independently around nominal; generation shares the total
/// in proportion to capacity, with the first slack-substation generator
/// (or the last generator when none sits there) closing the balance.
pub fn sample_injection<R: Rng>(grid: &Grid, rng: &mut R, config: &ScenarioConfig) -> Injection {
    let [lo, hi] = config.load_scale_range;
    let p_load: Vec<f64> = grid
        .loads
        .iter()
        .map(|d| {
            let scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            d.p_nominal * scale
        })
        .collect();
    dispatch(grid, p_load)
}

/// Proportional-to-capacity dispatch of a given load vector.
pub fn dispatch(grid: &Grid, p_load: Vec<f64>) -> Injection {
    let total: f64 = p_load.iter().sum();
    let capacity: f64 = grid.generators.iter().map(|g| g.p_max).sum();
    let mut p_prod: Vec<f64> = grid
        .generators
        .iter()
        .map(|g| {
            if capacity > 0.0 {
                total * g.p_max / capacity
            } else {
                0.0
            }
        })
        .collect();
    let balancing = grid
        .generators
        .iter()
        .position(|g| g.substation == grid.slack_substation)
        .or(grid.generators.len().checked_sub(1));
    if let Some(b) = balancing {
        let others: f64 = p_prod.iter().enumerate().filter(|&(i, _)| i != b).map(|(_, v)| v).sum();
        p_prod[b] = total - others;
    }
    Injection { p_prod, p_load }
}

/// Nominal loads with proportional dispatch.
pub fn nominal_injection(grid: &Grid) -> Injection {
    dispatch(grid, grid.loads.iter().map(|d| d.p_nominal).collect())
}

/// Solve `(τ, injection)` and package the ground truth.
pub fn build_sample(grid: &Grid, tau: TopologyVector, inj: Injection) -> Result<Sample> {
    let case = solve_case(grid, &tau, &inj)?;
    Ok(Sample {
        theta_bus: case.bus_graph.to_slots(&case.theta),
        theta_line: case.theta_line(),
        flows: case.flows,
        tau,
        inj,
    })
}

/// Draw sample `index` of a dataset.
pub fn generate_sample(grid: &Grid, config: &ScenarioConfig, index: u64) -> Result<Sample> {
    let mut rng = sample_rng(config.seed, index);
    let mut last_err = None;
    for _ in 0..MAX_RETRIES {
        let reference = sample_reference_topology(grid, &mut rng, config)?;
        match overlay_disconnections(grid, &reference, &mut rng, config.disconnection_rule) {
            Ok(tau) => {
                let inj = sample_injection(grid, &mut rng, config);
                return build_sample(grid, tau, inj);
            }
            // This reference admits no valid outage; draw another one.
            Err(e @ Error::RetriesExhausted { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

pub fn generate_dataset(grid: &Grid, split: Split, config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    if config.disconnection_rule != split.rule() {
        return Err(Error::InvalidConfig(format!(
            "split {} requires disconnection rule {:?}, config has {:?}",
            split.name(),
            split.rule(),
            config.disconnection_rule
        )));
    }
    let samples = (0..config.n_samples as u64)
        .map(|i| generate_sample(grid, config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        split,
        samples,
        manifest: DatasetManifest {
            grid: grid.name.clone(),
            split,
            config: config.clone(),
            seed: config.seed,
            generator_version: GENERATOR_VERSION.to_string(),
            n_samples: config.n_samples,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ieee() -> Grid {
        Grid::ieee14()
    }

    #[test]
    fn p_unchanged_one_keeps_reference() {
        let grid = ieee();
        let config = ScenarioConfig {
            p_unchanged: 1.0,
            ..Default::default()
        };
        let mut rng = sample_rng(1, 0);
        for _ in 0..50 {
            assert_eq!(
                sample_reference_topology(&grid, &mut rng, &config).unwrap(),
                TopologyVector::reference(&grid)
            );
        }
    }

    #[test]
    fn reference_fraction_concentrates() {
        let grid = ieee();
        let config = ScenarioConfig::default();
        let mut rng = sample_rng(7, 0);
        let reference = TopologyVector::reference(&grid);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_reference_topology(&grid, &mut rng, &config).unwrap() == reference)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }

    #[test]
    fn reconfiguration_touches_at_most_two_substations() {
        let grid = ieee();
        let config = ScenarioConfig {
            p_unchanged: 0.0,
            ..Default::default()
        };
        let mut rng = sample_rng(3, 0);
        for _ in 0..500 {
            let tau = sample_reference_topology(&grid, &mut rng, &config).unwrap();
            let mut subs: Vec<usize> = (0..grid.n_elements())
                .filter(|&e| tau.element_bus[e] == Busbar::Two)
                .map(|e| grid.element_substation(e))
                .collect();
            subs.dedup();
            subs.sort();
            subs.dedup();
            assert!(subs.len() <= 2);
            assert!(apply_topology(&grid, &tau).is_ok());
        }
    }

    #[test]
    fn exactly_two_disconnects_two() {
        let grid = ieee();
        let mut rng = sample_rng(4, 0);
        let tau = TopologyVector::reference(&grid);
        for _ in 0..200 {
            let out = overlay_disconnections(&grid, &tau, &mut rng, DisconnectionRule::ExactlyTwo).unwrap();
            assert_eq!(out.n_disconnected(), 2);
        }
    }

    #[test]
    fn exactly_one_is_uniform_over_survivable_lines() {
        let grid = ieee();
        let tau = TopologyVector::reference(&grid);
        let survivable: Vec<usize> = (0..grid.n_lines())
            .filter(|&l| {
                let mut t = tau.clone();
                t.line_status[l] = false;
                apply_topology(&grid, &t).is_ok()
            })
            .collect();
        // Only the radial 7-8 line islands the reference grid.
        assert_eq!(survivable.len(), 19);
        let mut counts = vec![0usize; grid.n_lines()];
        let mut rng = sample_rng(5, 0);
        let n = 10_000;
        for _ in 0..n {
            let out = overlay_disconnections(&grid, &tau, &mut rng, DisconnectionRule::ExactlyOne).unwrap();
            let l = out.line_status.iter().position(|&s| !s).unwrap();
            counts[l] += 1;
        }
        let expected = n as f64 / survivable.len() as f64;
        let chi2: f64 = survivable
            .iter()
            .map(|&l| (counts[l] as f64 - expected).powi(2) / expected)
            .sum();
        // χ²(18) critical value at α = 0.01.
        assert!(chi2 < 34.805, "chi2 = {chi2}");
        assert!((0..grid.n_lines())
            .filter(|l| !survivable.contains(l))
            .all(|l| counts[l] == 0));
    }

    #[test]
    fn at_most_one_half_the_time() {
        let grid = ieee();
        let tau = TopologyVector::reference(&grid);
        let mut rng = sample_rng(6, 0);
        let n = 10_000;
        let mut with = 0;
        for _ in 0..n {
            let out = overlay_disconnections(&grid, &tau, &mut rng, DisconnectionRule::AtMostOne).unwrap();
            assert!(out.n_disconnected() <= 1);
            with += out.n_disconnected();
        }
        let frac = with as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn overlay_requires_connected_input() {
        let grid = ieee();
        let mut tau = TopologyVector::reference(&grid);
        tau.line_status[0] = false;
        let mut rng = sample_rng(0, 0);
        assert!(overlay_disconnections(&grid, &tau, &mut rng, DisconnectionRule::ExactlyOne).is_err());
    }

    #[test]
    fn nominal_loads_when_range_degenerate() {
        let grid = ieee();
        let config = ScenarioConfig {
            load_scale_range: [1.0, 1.0],
            ..Default::default()
        };
        let inj = sample_injection(&grid, &mut sample_rng(0, 0), &config);
        for (p, d) in inj.p_load.iter().zip(&grid.loads) {
            assert_eq!(*p, d.p_nominal);
        }
    }

    #[test]
    fn generation_balances_load() {
        let grid = ieee();
        let config = ScenarioConfig::default();
        let mut rng = sample_rng(9, 0);
        for _ in 0..100 {
            let inj = sample_injection(&grid, &mut rng, &config);
            assert!((inj.total_prod() - inj.total_load()).abs() < 1e-12);
            assert!(inj.p_prod.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn load_means_match_nominal() {
        let grid = ieee();
        let config = ScenarioConfig::default();
        let mut rng = sample_rng(10, 0);
        let n = 10_000;
        let mut sums = vec![0.0; grid.loads.len()];
        for _ in 0..n {
            let inj = sample_injection(&grid, &mut rng, &config);
            for (s, p) in sums.iter_mut().zip(&inj.p_load) {
                *s += p;
            }
        }
        for (s, d) in sums.iter().zip(&grid.loads) {
            let mean = s / n as f64;
            assert!((mean / d.p_nominal - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn split_rules_and_determinism() {
        let grid = ieee();
        let train = generate_dataset(&grid, Split::Train, &ScenarioConfig::for_split(Split::Train, 300, 1)).unwrap();
        let ood = generate_dataset(&grid, Split::Ood, &ScenarioConfig::for_split(Split::Ood, 100, 4)).unwrap();
        assert!(train.samples.iter().all(|s| s.tau.n_disconnected() <= 1));
        assert!(ood.samples.iter().all(|s| s.tau.n_disconnected() == 2));
        let again = generate_dataset(&grid, Split::Ood, &ScenarioConfig::for_split(Split::Ood, 100, 4)).unwrap();
        assert_eq!(ood, again);
        assert_eq!(ood.manifest.config.disconnection_rule, DisconnectionRule::ExactlyTwo);
    }

    #[test]
    fn samples_are_order_independent() {
        let grid = ieee();
        let config = ScenarioConfig::for_split(Split::Test, 20, 99);
        let ds = generate_dataset(&grid, Split::Test, &config).unwrap();
        assert_eq!(generate_sample(&grid, &config, 13).unwrap(), ds.samples[13]);
    }

    #[test]
    fn split_rule_mismatch_rejected() {
        let grid = ieee();
        let config = ScenarioConfig::for_split(Split::Train, 10, 0);
        assert!(matches!(
            generate_dataset(&grid, Split::Ood, &config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn ground_truth_resolves() {
        let grid = ieee();
        let ds = generate_dataset(&grid, Split::Test, &ScenarioConfig::for_split(Split::Test, 50, 2)).unwrap();
        for s in &ds.samples {
            let again = build_sample(&grid, s.tau.clone(), s.inj.clone()).unwrap();
            for (a, b) in again.theta_bus.iter().zip(&s.theta_bus) {
                assert!((a - b).abs() < 1e-12);
            }
            let bg = apply_topology(&grid, &s.tau).unwrap();
            for (l, buses) in bg.line_buses.iter().enumerate() {
                if let Some((o, e)) = buses {
                    assert_eq!(s.theta_line[l], s.theta_bus[bg.bus_slot[*o]]);
                    assert_eq!(s.theta_line[grid.n_lines() + l], s.theta_bus[bg.bus_slot[*e]]);
                }
            }
        }
    }
}
