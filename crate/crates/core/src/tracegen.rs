//! Seeded synthetic expert-popularity traces and CSV trace ingestion.
//!
//! The generator drives per-class token counts from latent log-weights:
//! softmax of the latents gives class probabilities, and a multinomial draw
//! (sequential conditional binomials, so rows always sum exactly to the token
//! budget) produces the counts. `walk` mode moves the latents by a Gaussian
//! random walk; `spiky` mode additionally swaps the hottest latent with a
//! random one now and then, flipping class loads by an order of magnitude
//! within a couple of iterations; `uniform` keeps equal probabilities.
//!
//! All randomness comes from a ChaCha8 stream keyed by the config seed, so a
//! config reproduces its trace bit-exactly on any platform.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PopularityVector, Trace};

/// Spread of the initial latent log-weights. Large enough that skew exists
/// from iteration 0 and a hot/cold swap moves loads by well over an order of
/// magnitude once the walk has widened the spread a little.
const INITIAL_LATENT_SPREAD: f64 = 1.25;

/// Popularity dynamics produced by [`generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    Walk,
    Spiky,
    Uniform,
}

/// Configuration for the synthetic trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGenConfig {
    pub experts: usize,
    pub iterations: usize,
    pub tokens_per_batch: u64,
    pub mode: TraceMode,
    /// Standard deviation of the per-iteration latent walk step.
    #[serde(default = "default_volatility")]
    pub volatility: f64,
    /// Per-iteration probability of swapping the hottest latent with a random
    /// one (spiky mode only).
    #[serde(default = "default_spike_probability")]
    pub spike_probability: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_volatility() -> f64 {
    0.2
}

fn default_spike_probability() -> f64 {
    0.05
}

fn default_seed() -> u64 {
    42
}

impl Default for TraceGenConfig {
    fn default() -> Self {
        TraceGenConfig {
            experts: 16,
            iterations: 200,
            tokens_per_batch: 32_768,
            mode: TraceMode::Spiky,
            volatility: default_volatility(),
            spike_probability: default_spike_probability(),
            seed: default_seed(),
        }
    }
}

impl TraceGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experts < 1 {
            return Err(Error::InvalidConfig("experts must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.volatility.is_nan() || self.volatility < 0.0 {
            return Err(Error::InvalidConfig("volatility must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return Err(Error::InvalidConfig(
                "spike_probability must be within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn softmax(latents: &[f64]) -> Vec<f64> {
    let max = latents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = latents.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Multinomial draw via sequential conditional binomials: the last class
/// takes the remainder, so the counts always sum to exactly `n`.
fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut rest: f64 = probs.iter().sum();
    for i in 0..probs.len() {
        if i + 1 == probs.len() || rest <= 0.0 {
            counts[i] = remaining;
            break;
        }
        if remaining == 0 {
            break;
        }
        let p = (probs[i] / rest).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p)
            .expect("p is clamped to [0, 1]")
            .sample(rng);
        counts[i] = draw;
        remaining -= draw;
        rest -= probs[i];
    }
    counts
}

pub(crate) fn latent_probabilities(cfg: &TraceGenConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let uniform = vec![1.0 / cfg.experts as f64; cfg.experts];
    let mut latents: Vec<f64> = (0..cfg.experts)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * INITIAL_LATENT_SPREAD)
        .collect();

    let mut rows = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        match cfg.mode {
            TraceMode::Uniform => {
                rows.push(uniform.clone());
                continue;
            }
            TraceMode::Walk | TraceMode::Spiky => {
                if t > 0 {
                    for l in latents.iter_mut() {
                        *l += rng.sample::<f64, _>(StandardNormal) * cfg.volatility;
                    }
                    if cfg.mode == TraceMode::Spiky
                        && rng.random::<f64>() < cfg.spike_probability
                    {
                        let hottest = latents
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(i, _)| i)
                            .unwrap_or(0);
                        let other = rng.random_range(0..cfg.experts);
                        latents.swap(hottest, other);
                    }
                }
                rows.push(softmax(&latents));
            }
        }
    }
    rows
}

/// Generates a seeded synthetic trace. Identical configs produce bit-exact
/// identical traces.
pub fn generate(cfg: &TraceGenConfig) -> Result<Trace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probabilities = latent_probabilities(cfg, &mut rng);
    let rows = probabilities
        .into_iter()
        .enumerate()
        .map(|(t, probs)| PopularityVector {
            iteration: t,
            counts: multinomial(&mut rng, cfg.tokens_per_batch, &probs),
        })
        .collect();
    Ok(Trace {
        expert_classes: cfg.experts,
        tokens_per_batch: cfg.tokens_per_batch,
        rows,
    })
}

/// Renders a trace in the canonical CSV format:
/// header `iter,e0,...,e{E-1}`, one row of non-negative integers per
/// iteration.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = String::new();
    out.push_str("iter");
    for e in 0..trace.expert_classes {
        let _ = write!(out, ",e{e}");
    }
    out.push('\n');
    for row in &trace.rows {
        let _ = write!(out, "{}", row.iteration);
        for c in &row.counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Writes a trace as CSV. Output is byte-deterministic given the trace.
pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

/// Parses a CSV trace. The header fixes the number of expert classes; the
/// loaded token budget is the largest row sum, which round-trips traces whose
/// rows all sum to the generation budget.
pub fn parse_trace_csv(text: &str) -> Result<Trace> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty trace file".into()))?;
    let mut fields = header.split(',');
    if fields.next() != Some("iter") {
        return Err(Error::Schema("header must start with 'iter'".into()));
    }
    let mut expert_classes = 0usize;
    for field in fields {
        if field != format!("e{expert_classes}") {
            return Err(Error::Schema(format!(
                "header column {} should be e{expert_classes}, found '{field}'",
                expert_classes + 1
            )));
        }
        expert_classes += 1;
    }
    if expert_classes == 0 {
        return Err(Error::Schema("header declares no expert columns".into()));
    }

    let mut rows = Vec::new();
    let mut tokens_per_batch = 0u64;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2; // one-based, after the header
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let iter_field = fields.next().unwrap_or("");
        let iteration: usize = iter_field.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad iteration index '{iter_field}'"),
        })?;
        if iteration != rows.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("iteration {iteration} out of order, expected {}", rows.len()),
            });
        }
        let mut counts = Vec::with_capacity(expert_classes);
        for field in fields {
            let value: u64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad token count '{field}'"),
            })?;
            counts.push(value);
        }
        if counts.len() != expert_classes {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "row has {} counts, header declares {expert_classes}",
                    counts.len()
                ),
            });
        }
        tokens_per_batch = tokens_per_batch.max(counts.iter().sum());
        rows.push(PopularityVector { iteration, counts });
    }

    Ok(Trace {
        expert_classes,
        tokens_per_batch,
        rows,
    })
}

/// Loads a CSV trace from disk.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let text = std::fs::read_to_string(path)?;
    parse_trace_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_sum_exactly() {
        let cfg = TraceGenConfig {
            experts: 4,
            iterations: 50,
            tokens_per_batch: 400,
            mode: TraceMode::Uniform,
            ..TraceGenConfig::default()
        };
        let trace = generate(&cfg).unwrap();
        trace.validate().unwrap();
        let mut grand_total = 0u64;
        for row in &trace.rows {
            assert_eq!(row.total(), 400);
            grand_total += row.total();
        }
        // Expected per-class share is 100 tokens; check the pooled mean.
        let pooled: u64 = trace.rows.iter().map(|r| r.counts[0]).sum();
        let mean = pooled as f64 / trace.rows.len() as f64;
        assert!((mean - 100.0).abs() < 15.0, "mean {mean}");
        assert_eq!(grand_total, 400 * 50);
    }

    #[test]
    fn zero_volatility_keeps_probabilities_constant() {
        let cfg = TraceGenConfig {
            experts: 8,
            iterations: 5,
            mode: TraceMode::Walk,
            volatility: 0.0,
            ..TraceGenConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let probs = latent_probabilities(&cfg, &mut rng);
        for row in &probs[1..] {
            assert_eq!(row, &probs[0]);
        }
    }

    #[test]
    fn identical_seeds_reproduce_bit_exactly() {
        let cfg = TraceGenConfig {
            mode: TraceMode::Spiky,
            iterations: 100,
            ..TraceGenConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace_to_csv(&a), trace_to_csv(&b));

        let other = generate(&TraceGenConfig {
            seed: 43,
            ..cfg
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn spiky_default_seed_flips_sixteen_fold_within_three_iterations() {
        let cfg = TraceGenConfig {
            experts: 32,
            iterations: 200,
            ..TraceGenConfig::default()
        };
        let trace = generate(&cfg).unwrap();
        let mut found = false;
        'outer: for expert in 0..cfg.experts {
            for t in 0..trace.rows.len().saturating_sub(3) {
                let window: Vec<u64> = (t..=t + 3).map(|i| trace.rows[i].counts[expert]).collect();
                let max = *window.iter().max().unwrap();
                let min = *window.iter().min().unwrap();
                if max >= 16 * min.max(1) && max >= 16 {
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found, "no 16x load flip within any 3-iteration window");
    }

    #[test]
    fn walk_mode_is_autocorrelated() {
        let cfg = TraceGenConfig {
            experts: 16,
            iterations: 300,
            mode: TraceMode::Walk,
            ..TraceGenConfig::default()
        };
        let trace = generate(&cfg).unwrap();
        let mut correlations = Vec::new();
        for expert in 0..cfg.experts {
            let series: Vec<f64> = trace
                .rows
                .iter()
                .map(|r| r.counts[expert] as f64)
                .collect();
            let x = &series[..series.len() - 1];
            let y = &series[1..];
            let mean_x: f64 = x.iter().sum::<f64>() / x.len() as f64;
            let mean_y: f64 = y.iter().sum::<f64>() / y.len() as f64;
            let mut cov = 0.0;
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            for (a, b) in x.iter().zip(y) {
                cov += (a - mean_x) * (b - mean_y);
                var_x += (a - mean_x).powi(2);
                var_y += (b - mean_y).powi(2);
            }
            if var_x > 0.0 && var_y > 0.0 {
                correlations.push(cov / (var_x * var_y).sqrt());
            }
        }
        let mean_corr: f64 = correlations.iter().sum::<f64>() / correlations.len() as f64;
        assert!(mean_corr > 0.5, "lag-1 correlation {mean_corr}");
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let cfg = TraceGenConfig {
            experts: 5,
            iterations: 20,
            tokens_per_batch: 1000,
            mode: TraceMode::Spiky,
            ..TraceGenConfig::default()
        };
        let trace = generate(&cfg).unwrap();
        let parsed = parse_trace_csv(&trace_to_csv(&trace)).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = generate(&TraceGenConfig::default()).unwrap();
        save_trace(&trace, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), trace);
    }

    #[test]
    fn negative_count_is_a_parse_error() {
        let err = parse_trace_csv("iter,e0,e1\n0,5,-3\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("-3"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn short_row_is_a_parse_error() {
        let header: String = {
            let mut h = String::from("iter");
            for e in 0..16 {
                h.push_str(&format!(",e{e}"));
            }
            h
        };
        let row = format!("0{}", ",1".repeat(15));
        let err = parse_trace_csv(&format!("{header}\n{row}\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn bad_header_is_a_schema_error() {
        assert!(matches!(
            parse_trace_csv("step,e0,e1\n"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            parse_trace_csv("iter,x0,x1\n"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(parse_trace_csv("iter\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn config_validation() {
        let bad = TraceGenConfig {
            experts: 0,
            ..TraceGenConfig::default()
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidConfig(_))));
        let bad = TraceGenConfig {
            spike_probability: 1.5,
            ..TraceGenConfig::default()
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidConfig(_))));
        let bad = TraceGenConfig {
            volatility: -0.1,
            ..TraceGenConfig::default()
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidConfig(_))));
    }
}
