//! Genetic-algorithm search over flattened gain vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Channel, ControllerGains, ControllerKind, LpidGains, NlpidGains, PerChannel};
use crate::metrics::{MetricsReport, OpiWeights};
use crate::presets::{preset_lpid_gains, preset_nlpid_gains};
use crate::sim::{simulate, Scenario, Termination};

/// Fitness floor for runs that stop early or cannot be scored.
pub const PENALTY: f64 = 1e9;
/// Extra penalty per second of horizon lost to divergence.
pub const PENALTY_PER_SECOND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuningError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("gain vector has {got} entries, {kind:?} needs {expected}")]
    Length {
        kind: ControllerKind,
        expected: usize,
        got: usize,
    },
}

/// Flattened gains, channel-major in `x y z phi theta psi` order. Within a
/// channel the nonlinear order is `[k11 k12 k21 k22 k31 k32 mu1 mu2 mu3 a1 a2 a3]`
/// and the linear order `[kp kd ki]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub kind: ControllerKind,
    pub values: Vec<f64>,
}

impl GainVector {
    pub fn len_for(kind: ControllerKind) -> usize {
        6 * kind.params_per_channel()
    }

    pub fn new(kind: ControllerKind, values: Vec<f64>) -> Result<Self, TuningError> {
        let expected = Self::len_for(kind);
        if values.len() != expected {
            return Err(TuningError::Length {
                kind,
                expected,
                got: values.len(),
            });
        }
        Ok(Self { kind, values })
    }

    pub fn encode(gains: &ControllerGains) -> Self {
        let mut values = Vec::with_capacity(Self::len_for(gains.kind()));
        for c in Channel::ALL {
            match gains {
                ControllerGains::Lpid(g) => values.extend(g.get(c).to_array()),
                ControllerGains::Nlpid(g) => values.extend(g.get(c).to_array()),
            }
        }
        Self {
            kind: gains.kind(),
            values,
        }
    }

    pub fn decode(&self) -> ControllerGains {
        let n = self.kind.params_per_channel();
        let chunk = |c: Channel| {
            let i = Channel::ALL.iter().position(|&k| k == c).unwrap_or(0);
            &self.values[i * n..(i + 1) * n]
        };
        match self.kind {
            ControllerKind::Lpid => ControllerGains::Lpid(PerChannel::from_fn(|c| {
                LpidGains::from_array(std::array::from_fn(|j| chunk(c)[j]))
            })),
            ControllerKind::Nlpid => ControllerGains::Nlpid(PerChannel::from_fn(|c| {
                NlpidGains::from_array(std::array::from_fn(|j| chunk(c)[j]))
            })),
        }
    }
}

/// Box bounds, one interval per gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Lower bound of every non-exponent parameter.
pub const GAIN_FLOOR: f64 = 1e-7;
/// Exponent range for the nonlinear law.
pub const ALPHA_RANGE: (f64, f64) = (0.5, 1.2);

impl Bounds {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Each parameter role spans `[1e-7, 4 × (largest reference value of that
    /// role over the six channels)]`; exponents span `[0.5, 1.2]`.
    pub fn reference(kind: ControllerKind) -> Self {
        let reference = match kind {
            ControllerKind::Lpid => GainVector::encode(&ControllerGains::Lpid(preset_lpid_gains())),
            ControllerKind::Nlpid => GainVector::encode(&ControllerGains::Nlpid(preset_nlpid_gains())),
        };
        let n = kind.params_per_channel();
        let role_max: Vec<f64> = (0..n)
            .map(|j| (0..6).map(|c| reference.values[c * n + j]).fold(0.0, f64::max))
            .collect();
        let mut lower = Vec::with_capacity(6 * n);
        let mut upper = Vec::with_capacity(6 * n);
        for _ in 0..6 {
            for (j, &m) in role_max.iter().enumerate() {
                if kind == ControllerKind::Nlpid && j >= 9 {
                    lower.push(ALPHA_RANGE.0);
                    upper.push(ALPHA_RANGE.1);
                } else {
                    lower.push(GAIN_FLOOR);
                    upper.push(4.0 * m);
                }
            }
        }
        Self { lower, upper }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(TuningError::Config("bounds must be non-empty and of equal length".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(TuningError::Config(format!("bound {i}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Mutation standard deviation as a fraction of each gene's range.
    pub mutation_scale: f64,
    pub tournament_size: usize,
    pub seed: u64,
    pub bounds: Bounds,
}

impl GaConfig {
    pub fn new(bounds: Bounds, seed: u64) -> Self {
        Self {
            population: 40,
            generations: 50,
            crossover_prob: 0.9,
            mutation_prob: 0.1,
            mutation_scale: 0.1,
            tournament_size: 3,
            seed,
            bounds,
        }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        let bad = |m: String| Err(TuningError::Config(m));
        if self.population < 2 {
            return bad(format!("population must be at least 2, got {}", self.population));
        }
        if self.generations == 0 {
            return bad("generations must be at least 1".into());
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.mutation_scale.is_finite() && self.mutation_scale >= 0.0) {
            return bad(format!("mutation_scale must be non-negative, got {}", self.mutation_scale));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1".into());
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

fn tournament<'a>(rng: &mut ChaCha8Rng, pop: &'a [Vec<f64>], fit: &[f64], size: usize) -> &'a [f64] {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let i = rng.gen_range(0..pop.len());
        if fit[i] < fit[best] {
            best = i;
        }
    }
    &pop[best]
}

/// Minimises `fitness` over the box. `seeds` replace the first random
/// individuals of the initial population (clamped into the box).
///
/// Randomness is drawn only by this loop; fitness calls run in parallel and
/// must be deterministic, so a fixed seed gives a fixed result.
pub fn ga_optimize<F>(config: &GaConfig, seeds: &[Vec<f64>], fitness: F) -> Result<GaResult, TuningError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let b = &config.bounds;
    let dim = b.len();
    if let Some(s) = seeds.iter().find(|s| s.len() != dim) {
        return Err(TuningError::Config(format!("seed individual has {} genes, bounds have {dim}", s.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clamp = |i: usize, v: f64| v.clamp(b.lower[i], b.upper[i]);
    let sigma: Vec<f64> = (0..dim).map(|i| config.mutation_scale * (b.upper[i] - b.lower[i])).collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut pop: Vec<Vec<f64>> = (0..config.population)
        .map(|p| match seeds.get(p) {
            Some(s) => s.iter().enumerate().map(|(i, &v)| clamp(i, v)).collect(),
            None => (0..dim).map(|i| rng.gen_range(b.lower[i]..=b.upper[i])).collect(),
        })
        .collect();

    let score = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut history = Vec::with_capacity(config.generations);
    let mut best = pop[0].clone();
    let mut best_fitness = f64::INFINITY;
    let mut evaluations = 0;
    let mut elite: Option<f64> = None;

    for generation in 0..config.generations {
        // The elite sits at index 0 and keeps its known fitness.
        let fit: Vec<f64> = pop
            .par_iter()
            .enumerate()
            .map(|(i, x)| match (i, elite) {
                (0, Some(f)) => f,
                _ => score(fitness(x)),
            })
            .collect();
        evaluations += fit.len() - usize::from(elite.is_some());

        let (ib, &fb) = fit
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("population is non-empty");
        if fb < best_fitness || history.is_empty() {
            best_fitness = fb;
            best = pop[ib].clone();
        }
        let finite: Vec<f64> = fit.iter().copied().filter(|f| f.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        history.push(GenerationRecord {
            generation,
            best: fb,
            mean,
            best_so_far: best_fitness,
        });
        if generation + 1 == config.generations {
            break;
        }

        let mut next = Vec::with_capacity(config.population);
        next.push(best.clone());
        while next.len() < config.population {
            let a = tournament(&mut rng, &pop, &fit, config.tournament_size);
            let c = tournament(&mut rng, &pop, &fit, config.tournament_size);
            let mut child: Vec<f64> = if rng.gen_bool(config.crossover_prob) {
                a.iter().zip(c).map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y }).collect()
            } else {
                a.to_vec()
            };
            for (i, g) in child.iter_mut().enumerate() {
                if rng.gen_bool(config.mutation_prob) {
                    *g = clamp(i, *g + sigma[i] * unit.sample(&mut rng));
                }
            }
            next.push(child);
        }
        pop = next;
        elite = Some(best_fitness);
    }

    Ok(GaResult {
        best,
        best_fitness,
        history,
        evaluations,
    })
}

/// The experiment a candidate is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessTemplate {
    pub scenario: Scenario,
    pub weights: OpiWeights,
}

impl FitnessTemplate {
    /// Unit step from the default offset under the reference weights.
    pub fn step(kind: ControllerKind) -> Self {
        let gains = match kind {
            ControllerKind::Lpid => ControllerGains::Lpid(preset_lpid_gains()),
            ControllerKind::Nlpid => ControllerGains::Nlpid(preset_nlpid_gains()),
        };
        let traj = crate::presets::trajectory(crate::presets::STEP).expect("step preset");
        Self {
            scenario: Scenario::new(gains, traj),
            weights: OpiWeights::standard(),
        }
    }
}

/// OPI of the candidate on the template scenario. Runs that diverge or
/// fault score `PENALTY + PENALTY_PER_SECOND × (horizon lost)`; candidates
/// that cannot be simulated at all score twice `PENALTY`.
pub fn fitness(candidate: &GainVector, template: &FitnessTemplate) -> f64 {
    let mut sc = template.scenario.clone();
    sc.controller = candidate.decode();
    let Ok(log) = simulate(&sc) else {
        return 2.0 * PENALTY;
    };
    match log.termination {
        Termination::Completed => MetricsReport::from_log(&log, &template.weights)
            .map(|r| r.opi.total)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(PENALTY),
        Termination::Diverged { t } | Termination::Fault { t, .. } => PENALTY + PENALTY_PER_SECOND * (sc.t_final - t).max(0.0),
    }
}

/// Runs the GA on the template's step scenario.
pub fn tune(config: &GaConfig, template: &FitnessTemplate, kind: ControllerKind, seeds: &[GainVector]) -> Result<(GainVector, GaResult), TuningError> {
    let dim = GainVector::len_for(kind);
    if config.bounds.len() != dim {
        return Err(TuningError::Length {
            kind,
            expected: dim,
            got: config.bounds.len(),
        });
    }
    let seeds: Vec<Vec<f64>> = seeds.iter().filter(|s| s.kind == kind).map(|s| s.values.clone()).collect();
    let result = ga_optimize(config, &seeds, |x| {
        let gv = GainVector {
            kind,
            values: x.to_vec(),
        };
        fitness(&gv, template)
    })?;
    let best = GainVector::new(kind, result.best.clone())?;
    Ok((best, result))
}

/// Sphere function `Σ (x_i - c_i)^2`, minimum 0 at `c`.
pub fn sphere(x: &[f64], centre: &[f64]) -> f64 {
    x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere_config(seed: u64) -> GaConfig {
        let bounds = Bounds {
            lower: vec![-5.0; 2],
            upper: vec![5.0; 2],
        };
        GaConfig {
            generations: 30,
            mutation_prob: 0.5,
            mutation_scale: 0.01,
            ..GaConfig::new(bounds, seed)
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        for gains in [ControllerGains::Nlpid(preset_nlpid_gains()), ControllerGains::Lpid(preset_lpid_gains())] {
            let v = GainVector::encode(&gains);
            assert_eq!(v.values.len(), GainVector::len_for(gains.kind()));
            assert_eq!(v.decode(), gains);
        }
        let v = GainVector::encode(&ControllerGains::Nlpid(preset_nlpid_gains()));
        assert_eq!(v.values[24], 27.5);
        assert_eq!(v.values[35], 0.97);
        let l = GainVector::encode(&ControllerGains::Lpid(preset_lpid_gains()));
        assert_eq!(&l.values[6..9], &[184.02, 22.5, 103.73]);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(
            GainVector::new(ControllerKind::Lpid, vec![0.0; 5]),
            Err(TuningError::Length { expected: 18, .. })
        ));
    }

    #[test]
    fn reference_bounds_contain_reference_gains() {
        for (kind, gains) in [
            (ControllerKind::Nlpid, ControllerGains::Nlpid(preset_nlpid_gains())),
            (ControllerKind::Lpid, ControllerGains::Lpid(preset_lpid_gains())),
        ] {
            let b = Bounds::reference(kind);
            b.validate().unwrap();
            assert!(b.contains(&GainVector::encode(&gains).values));
        }
        let b = Bounds::reference(ControllerKind::Nlpid);
        assert_eq!(b.upper[0], 4.0 * 27.5);
        assert_eq!((b.lower[9], b.upper[9]), ALPHA_RANGE);
    }

    #[test]
    fn config_validation() {
        let ok = sphere_config(1);
        ok.validate().unwrap();
        for bad in [
            GaConfig { population: 1, ..ok.clone() },
            GaConfig { crossover_prob: 1.5, ..ok.clone() },
            GaConfig { mutation_prob: -0.1, ..ok.clone() },
            GaConfig { tournament_size: 0, ..ok.clone() },
            GaConfig {
                bounds: Bounds {
                    lower: vec![1.0],
                    upper: vec![1.0],
                },
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sphere_smoke() {
        let centre = [1.0, -2.0];
        let r = ga_optimize(&sphere_config(3), &[], |x| sphere(x, &centre)).unwrap();
        assert_eq!(r.history.len(), 30);
        assert!(r.best_fitness < 1e-3, "best {}", r.best_fitness);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let c = sphere_config(11);
        let a = ga_optimize(&c, &[], |x| sphere(x, &[0.0; 2])).unwrap();
        let b = ga_optimize(&c, &[], |x| sphere(x, &[0.0; 2])).unwrap();
        assert_eq!(a, b);
        let other = ga_optimize(&sphere_config(12), &[], |x| sphere(x, &[0.0; 2])).unwrap();
        assert_ne!(a.history, other.history);
    }

    #[test]
    fn seeds_enter_the_population() {
        let c = GaConfig {
            generations: 1,
            ..sphere_config(5)
        };
        let r = ga_optimize(&c, &[vec![0.0; 2]], |x| sphere(x, &[0.0; 2])).unwrap();
        assert_eq!(r.best_fitness, 0.0);
        assert!(ga_optimize(&c, &[vec![0.0; 3]], |x| sphere(x, &[0.0; 2])).is_err());
    }

    #[test]
    fn zero_gains_are_penalised() {
        let template = FitnessTemplate::step(ControllerKind::Lpid);
        let zero = GainVector::new(ControllerKind::Lpid, vec![0.0; 18]).unwrap();
        // No thrust authority: the vehicle falls for the whole horizon.
        let f = fitness(&zero, &template);
        assert!(f > 1e5, "zero gains scored {f}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn history_is_monotone_and_bounded(seed in any::<u64>(), pop in 2usize..12, gens in 1usize..12) {
            let bounds = Bounds { lower: vec![-1.0, 0.0, 2.0], upper: vec![1.0, 0.5, 9.0] };
            let cfg = GaConfig { population: pop, generations: gens, mutation_prob: 0.5, mutation_scale: 1.0, ..GaConfig::new(bounds.clone(), seed) };
            let seen = std::sync::Mutex::new(Vec::new());
            let r = ga_optimize(&cfg, &[], |x| {
                seen.lock().unwrap().push(x.to_vec());
                (x[0] - 0.3).abs() + (x[2] - 5.0).powi(2) - x[1]
            }).unwrap();
            prop_assert_eq!(r.history.len(), gens);
            for w in r.history.windows(2) {
                prop_assert!(w[1].best_so_far <= w[0].best_so_far);
                prop_assert!(w[1].best <= w[0].best);
            }
            prop_assert!(bounds.contains(&r.best));
            for x in seen.into_inner().unwrap() {
                prop_assert!(bounds.contains(&x));
            }
        }
    }
}
