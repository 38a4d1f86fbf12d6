//! Seeded property battery over tiny games: entropy ordering, mixture
//! decomposition, importance-sampling unbiasedness, surrogate gradients,
//! finite-trial concentration and pessimism, and independent ascent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{self, TinySpec};
use crate::error::Result;
use crate::game::{sample_batch, MarkovGame};
use crate::objectives::{
    self, entropy_chain_from, finite_trial_samples, mean_stderr, mismatch_bound, mixture_decomposition_from,
    ObjectiveKind,
};
use crate::oracle;
use crate::policy::{AgentPolicy, PolicyClass, PolicySet};
use crate::stats::exact_distributions;
use crate::trpe::{build_datasets, surrogate_and_grad, DEFAULT_WEIGHT_GUARD};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {}: {}", self.name, self.detail)
    }
}

/// Copy of `p` with every parameter drawn uniformly from `[-scale, scale)`.
pub fn randomize(p: &PolicySet, scale: f64, rng: &mut impl Rng) -> PolicySet {
    PolicySet::new(
        p.agents()
            .iter()
            .map(|a| {
                let params = (0..a.num_params()).map(|_| rng.gen_range(-scale..scale)).collect();
                a.with_params(params).expect("same length")
            })
            .collect(),
    )
}

/// Copy of `a` with uniform noise of half-width `scale` added.
pub fn perturb(a: &AgentPolicy, scale: f64, rng: &mut impl Rng) -> AgentPolicy {
    let params = a.params().iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
    a.with_params(params).expect("same length")
}

/// Random tiny games with random tabular policies, half with two agents and
/// half with three.
pub fn random_corpus(size: usize, seed: u64) -> Result<Vec<(MarkovGame, PolicySet)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [(&[usize], &[usize]); 4] = [
        (&[2, 2], &[2, 2]),
        (&[3, 3], &[2, 2]),
        (&[4, 4], &[3, 3]),
        (&[2, 2, 2], &[2, 2, 2]),
    ];
    (0..size)
        .map(|k| {
            let (states, actions) = if k % 2 == 0 { shapes[k / 2 % 3] } else { shapes[3] };
            let horizon = rng.gen_range(1..=4);
            let game = envs::tiny_mg(&TinySpec::random(states.to_vec(), actions.to_vec(), horizon, rng.gen()))?;
            let scale = rng.gen_range(0.1..4.0);
            let policies = randomize(&PolicySet::tabular_uniform(&game), scale, &mut rng);
            Ok((game, policies))
        })
        .collect()
}

/// Ordering of the five infinite-trial entropies, slack ≥ -1e-9.
pub fn check_entropy_chain(corpus: &[(MarkovGame, PolicySet)]) -> Result<Check> {
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for (g, p) in corpus {
        let chain = entropy_chain_from(&exact_distributions(g, p)?)?;
        let min = chain.slacks.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.min(min);
        if !chain.holds(1e-9) {
            failures += 1;
        }
    }
    Ok(Check::new(
        "entropy chain",
        failures == 0 && !corpus.is_empty(),
        format!("{} pairs, {failures} violations, smallest slack {worst:.3e}", corpus.len()),
    ))
}

pub fn check_mixture_decomposition(corpus: &[(MarkovGame, PolicySet)]) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (g, p) in corpus {
        worst = worst.max(mixture_decomposition_from(&exact_distributions(g, p)?)?.residual());
    }
    Ok(Check::new(
        "mixture decomposition",
        worst <= 1e-9 && !corpus.is_empty(),
        format!("{} pairs, largest residual {worst:.3e}", corpus.len()),
    ))
}

/// The two-agent, two-state, two-action, `T = 3` game used by the
/// importance-sampling checks.
pub fn is_fixture(seed: u64) -> Result<MarkovGame> {
    envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, seed))
}

/// Exact surrogate versus the exact objective of the candidate, and a
/// Monte-Carlo surrogate versus the exact value.
pub fn check_is_unbiasedness(seed: u64, perturbations: usize, mc_batch: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let game = is_fixture(seed)?;
    let kinds = [ObjectiveKind::Joint, ObjectiveKind::Disjoint(0), ObjectiveKind::Mixture];
    let behavior = randomize(&PolicySet::tabular_uniform(&game), 1.0, &mut rng);
    let mut worst: f64 = 0.0;
    for k in 0..perturbations {
        let kind = kinds[k % kinds.len()];
        let agent = k % 2;
        let cand = perturb(behavior.agent(agent), 0.8, &mut rng);
        let lhs = oracle::exact_surrogate(&game, &behavior, agent, cand.params(), kind)?;
        let rhs = oracle::exact_single_trial_objective(&game, &behavior.with_agent(agent, cand), kind)?;
        worst = worst.max((lhs - rhs).abs());
    }

    let kind = ObjectiveKind::Mixture;
    let cand = perturb(behavior.agent(0), 0.5, &mut rng);
    let exact = oracle::exact_single_trial_objective(&game, &behavior.with_agent(0, cand.clone()), kind)?;
    let batch = sample_batch(&game, &behavior, mc_batch, rng.gen())?;
    let obs = game.observations();
    let mut terms = Vec::with_capacity(batch.len());
    for t in &batch {
        let mut log_rho = 0.0;
        for step in 0..t.len() {
            let o = obs.observe(t.states()[step], 0);
            let a = t.local_action(step, 0) as usize;
            log_rho += cand.log_prob(o, a)? - behavior.agent(0).log_prob(o, a)?;
        }
        terms.push(log_rho.exp() * objectives::single_trial_value(&game, t, kind)?);
    }
    let (mc, se) = mean_stderr(&terms);
    let ds = build_datasets(&game, &batch, kind)?;
    let via_surrogate =
        surrogate_and_grad(behavior.agent(0), &ds[0], cand.params(), behavior.agent(0).params(), DEFAULT_WEIGHT_GUARD)?
            .value;
    let agree = (via_surrogate - mc).abs() <= 1e-9 * mc.abs().max(1.0);
    let within = (mc - exact).abs() <= 3.0 * se;
    Ok(Check::new(
        "IS unbiasedness",
        worst <= 1e-9 && within && agree,
        format!(
            "{perturbations} perturbations, max |exact surrogate - objective| {worst:.3e}; \
             Monte-Carlo N={mc_batch}: {mc:.5} vs exact {exact:.5} (stderr {se:.5})"
        ),
    ))
}

/// Analytic surrogate gradients against central differences, `cases` per
/// policy class.
pub fn check_surrogate_gradients(seed: u64, cases: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = [PolicyClass::Tabular, PolicyClass::Mlp { hidden: vec![8, 8] }];
    let mut worst: f64 = 0.0;
    for class in &classes {
        for case in 0..cases {
            let side = 2 + case % 2;
            let horizon = 3 + case % 4;
            let game = envs::open_grid(side, 2, horizon)?;
            let base = PolicySet::for_game(&game, class, rng.gen());
            let behavior = PolicySet::new(base.agents().iter().map(|a| perturb(a, 0.3, &mut rng)).collect());
            let kind = [ObjectiveKind::Joint, ObjectiveKind::Disjoint(1), ObjectiveKind::Mixture][case % 3];
            let batch = sample_batch(&game, &behavior, 2 + case % 6, rng.gen())?;
            let agent = case % 2;
            let ds = build_datasets(&game, &batch, kind)?;
            let pol = behavior.agent(agent);
            let cand = perturb(pol, 0.2, &mut rng);
            let f = |x: &[f64]| {
                surrogate_and_grad(pol, &ds[agent], x, pol.params(), DEFAULT_WEIGHT_GUARD)
                    .map(|e| e.value)
                    .unwrap_or(f64::NAN)
            };
            let analytic = surrogate_and_grad(pol, &ds[agent], cand.params(), pol.params(), DEFAULT_WEIGHT_GUARD)?.grad;
            let fd = oracle::finite_difference_gradient(f, cand.params(), 1e-5)?;
            let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-6);
            let err = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            worst = worst.max(err);
        }
    }
    Ok(Check::new(
        "surrogate gradient",
        worst <= 1e-5,
        format!("{} cases per class (tabular, mlp), worst relative error {worst:.3e}", cases),
    ))
}

/// Mean and standard error of `|F(d_K) - ζ_∞|` per `K`.
pub fn mismatch_curve(
    game: &MarkovGame,
    policies: &PolicySet,
    kind: ObjectiveKind,
    ks: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let exact = objectives::infinite_trial_value(game, policies, kind)?;
    ks.iter()
        .enumerate()
        .map(|(j, &k)| {
            let xs = finite_trial_samples(game, policies, kind, k, reps, crate::rng::derive(seed, j as u64))?;
            let dev: Vec<f64> = xs.iter().map(|x| (x - exact).abs()).collect();
            Ok(mean_stderr(&dev))
        })
        .collect()
}

/// Non-increasing up to one inversion that stays within one standard error.
pub fn mostly_non_increasing(curve: &[(f64, f64)]) -> bool {
    let inversions: Vec<_> = curve.windows(2).filter(|w| w[1].0 > w[0].0).collect();
    match inversions.as_slice() {
        [] => true,
        [w] => w[1].0 - w[0].0 <= w[1].1.max(w[0].1),
        _ => false,
    }
}

pub fn concentration_fixture(seed: u64) -> Result<(MarkovGame, PolicySet)> {
    let game = envs::tiny_mg(&TinySpec::random(vec![3, 3], vec![2, 2], 4, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = randomize(&PolicySet::tabular_uniform(&game), 1.0, &mut rng);
    Ok((game, p))
}

pub fn check_concentration(seed: u64) -> Result<Check> {
    let (game, p) = concentration_fixture(seed)?;
    let ks = [1, 4, 16, 64];
    let kinds = [ObjectiveKind::Joint, ObjectiveKind::Disjoint(0), ObjectiveKind::Mixture];
    let mut ok = true;
    let mut detail = Vec::new();
    let mut curves = Vec::new();
    for (j, &kind) in kinds.iter().enumerate() {
        let curve = mismatch_curve(&game, &p, kind, &ks, 20, crate::rng::derive(seed, j as u64))?;
        let trend = mostly_non_increasing(&curve);
        let shrinks = curve[3].0 < curve[0].0;
        ok &= trend && shrinks;
        let means: Vec<String> = curve.iter().map(|c| format!("{:.4}", c.0)).collect();
        detail.push(format!("{kind} [{}]", means.join(", ")));
        curves.push(curve);
    }
    let mixture_below = curves[2].iter().zip(&curves[0]).all(|(m, j)| m.0 < j.0);
    ok &= mixture_below;
    Ok(Check::new(
        "finite-trial concentration",
        ok,
        format!(
            "mean |F(d_K) - ζ∞| at K=1,4,16,64: {}; mixture below joint at every K: {mixture_below}",
            detail.join("; ")
        ),
    ))
}

/// Enumerable fixtures: the enumerable members of a random corpus of size
/// `random`, plus structured games.
pub fn enumerable_fixtures(seed: u64, random: usize) -> Result<Vec<(MarkovGame, PolicySet)>> {
    let mut out: Vec<_> = random_corpus(random, seed)?
        .into_iter()
        .filter(|(g, _)| oracle::is_enumerable(g, oracle::DEFAULT_ENUMERATION_CAP))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for side in [1, 2] {
        let g = envs::open_grid(side, 2, 2)?;
        out.push((g.clone(), PolicySet::tabular_uniform(&g)));
        out.push((g.clone(), randomize(&PolicySet::tabular_uniform(&g), 2.0, &mut rng)));
    }
    out.push(concentration_fixture(seed)?);
    let g = is_fixture(seed)?;
    out.push((g.clone(), randomize(&PolicySet::tabular_uniform(&g), 1.0, &mut rng)));
    Ok(out)
}

pub fn check_single_trial_pessimism(fixtures: &[(MarkovGame, PolicySet)]) -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for (g, p) in fixtures {
        let mut kinds = vec![ObjectiveKind::Joint];
        kinds.extend((0..g.num_agents()).map(ObjectiveKind::Disjoint));
        if g.uniform_local_states() {
            kinds.push(ObjectiveKind::Mixture);
        }
        for kind in kinds {
            let z1 = oracle::exact_single_trial_objective(g, p, kind)?;
            let zinf = objectives::infinite_trial_value(g, p, kind)?;
            worst = worst.max(z1 - zinf);
            count += 1;
        }
    }
    Ok(Check::new(
        "single-trial pessimism",
        worst <= 1e-9,
        format!("{count} (fixture, objective) pairs, max ζ1 - ζ∞ = {worst:.3e}"),
    ))
}

pub fn check_pga_monotone(seed: u64, steps: usize, eta: f64) -> Result<Check> {
    let game = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 4, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [ObjectiveKind::Joint, ObjectiveKind::Mixture] {
        let p = randomize(&oracle::joint_observation_policies(&game), 2.0, &mut rng);
        let curve = oracle::independent_pga(&game, &p, kind, eta, steps)?;
        let worst = curve
            .values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        ok &= worst >= -1e-8;
        detail.push(format!(
            "{kind}: {:.5} -> {:.5}, smallest step change {worst:.3e}",
            curve.values[0],
            curve.values[curve.values.len() - 1]
        ));
    }
    Ok(Check::new(
        "independent PGA monotone",
        ok,
        format!("{steps} steps, eta {eta}; {}", detail.join("; ")),
    ))
}

/// The documented bound example, `50·sqrt(20·ln 1000) = 587.697`.
pub fn check_bound_example() -> Result<Check> {
    let joint = mismatch_bound(ObjectiveKind::Joint, 1.0, 50, 100, 10, 4, 0.1)?;
    let mixture = mismatch_bound(ObjectiveKind::Mixture, 1.0, 50, 100, 10, 4, 0.1)?;
    let direct = 50.0 * (20.0 * 1000f64.ln()).sqrt();
    let ok = (joint - direct).abs() < 1e-9 && (mixture - joint / 2.0).abs() < 1e-9;
    Ok(Check::new(
        "mismatch bound",
        ok,
        format!("joint {joint:.2}, mixture (4 agents) {mixture:.2}"),
    ))
}

/// Validation of a game, as a check.
pub fn check_game_valid(name: &str, game: &MarkovGame) -> Check {
    let v = game.validate();
    let detail = if v.is_empty() {
        "valid".to_string()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
    };
    Check::new(name, v.is_empty(), detail)
}

/// Fixture counts of the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatterySize {
    pub corpus: usize,
    pub perturbations: usize,
    pub mc_batch: usize,
    pub gradient_cases: usize,
    pub pga_steps: usize,
}

impl BatterySize {
    pub fn full() -> Self {
        BatterySize {
            corpus: 120,
            perturbations: 50,
            mc_batch: 10_000,
            gradient_cases: 100,
            pga_steps: 200,
        }
    }

    /// A few seconds' worth, for smoke tests.
    pub fn quick() -> Self {
        BatterySize {
            corpus: 12,
            perturbations: 9,
            mc_batch: 2_000,
            gradient_cases: 6,
            pga_steps: 20,
        }
    }
}

/// The full battery with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    run_battery(seed, BatterySize::full())
}

pub fn run_battery(seed: u64, size: BatterySize) -> Result<Vec<Check>> {
    let corpus = random_corpus(size.corpus, seed)?;
    let fixtures = enumerable_fixtures(seed, size.corpus.min(60))?;
    Ok(vec![
        check_entropy_chain(&corpus)?,
        check_mixture_decomposition(&corpus)?,
        check_is_unbiasedness(seed, size.perturbations, size.mc_batch)?,
        check_surrogate_gradients(seed, size.gradient_cases)?,
        check_concentration(seed)?,
        check_single_trial_pessimism(&fixtures)?,
        check_pga_monotone(seed, size.pga_steps, 0.05)?,
        check_bound_example()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_battery_passes() {
        let corpus = random_corpus(12, 3).unwrap();
        assert!(check_entropy_chain(&corpus).unwrap().passed);
        assert!(check_mixture_decomposition(&corpus).unwrap().passed);
        assert!(check_surrogate_gradients(3, 4).unwrap().passed);
        assert!(check_bound_example().unwrap().passed);
    }

    #[test]
    fn trend_rule() {
        assert!(mostly_non_increasing(&[(3.0, 0.1), (2.0, 0.1), (1.0, 0.1)]));
        assert!(mostly_non_increasing(&[(3.0, 0.1), (2.0, 0.1), (2.05, 0.1), (1.0, 0.1)]));
        assert!(!mostly_non_increasing(&[(3.0, 0.1), (2.0, 0.1), (2.5, 0.1), (1.0, 0.1)]));
        assert!(!mostly_non_increasing(&[(3.0, 0.1), (3.01, 0.1), (2.0, 0.1), (2.01, 0.1)]));
    }

    #[test]
    fn broken_game_is_reported() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2], vec![2], 2, 1)).unwrap();
        let text = crate::game_io::write_game(&g);
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.len() - 1;
        lines[last] = "0.5 0.4";
        let broken = crate::game_io::read_game(&lines.join("\n")).unwrap();
        let c = check_game_valid("fixture", &broken);
        assert!(!c.passed);
        assert!(c.detail.contains("state 1, action 1"));
        assert!(check_game_valid("fixture", &g).passed);
    }
}
