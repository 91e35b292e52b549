use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::harness::PreparedPhi;
use crate::phi::KernelConfig;
use crate::solver::{cp_apr_mu, SolverOptions};
use crate::tensor::SparseTensor;

use super::PolicyParams;

/// Vector size used when the space leaves it to be chosen automatically.
pub const AUTO_VECTOR_SIZE: usize = 128;

/// Candidate values for each policy parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySpace {
    pub leagues: Vec<usize>,
    pub teams: Vec<usize>,
    pub vectors: Vec<usize>,
    /// Ignore `vectors` and use the largest of [`AUTO_VECTOR_SIZE`] and
    /// `1024 / team` that is still valid.
    pub auto_vector: bool,
}

impl PolicySpace {
    pub fn new(leagues: Vec<usize>, teams: Vec<usize>, vectors: Vec<usize>) -> Self {
        PolicySpace {
            leagues,
            teams,
            vectors,
            auto_vector: false,
        }
    }

    /// Single-point space.
    pub fn only(p: PolicyParams) -> Self {
        Self::new(vec![p.league_size], vec![p.team_size], vec![p.vector_size])
    }

    /// Full cross product in lexicographic order, including invalid triples.
    pub fn candidates(&self) -> Result<Vec<PolicyParams>> {
        if self.leagues.is_empty() || self.teams.is_empty() || (self.vectors.is_empty() && !self.auto_vector) {
            return Err(Error::InvalidArgument("policy space has an empty candidate list".into()));
        }
        let mut out = BTreeSet::new();
        for &league_size in &self.leagues {
            for &team_size in &self.teams {
                let vectors = if self.auto_vector {
                    vec![AUTO_VECTOR_SIZE.min((super::MAX_TEAM_TIMES_VECTOR / team_size.max(1)).max(1))]
                } else {
                    self.vectors.clone()
                };
                for vector_size in vectors {
                    out.insert(PolicyParams {
                        league_size,
                        team_size,
                        vector_size,
                    });
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}

/// Valid policies of the space, duplicate-free, ordered by (league, team, vector).
pub fn enumerate_policies(space: &PolicySpace) -> Result<Vec<PolicyParams>> {
    Ok(space.candidates()?.into_iter().filter(PolicyParams::is_valid).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridTarget {
    /// The Φ kernel alone, per mode.
    PhiOnly,
    /// The whole decomposition.
    FullSolver,
}

impl fmt::Display for GridTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridTarget::PhiOnly => "phi",
            GridTarget::FullSolver => "wall",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub policy: PolicyParams,
    /// `None` for whole-solver rows.
    pub mode: Option<usize>,
    pub target: GridTarget,
    pub mean_ms: Option<f64>,
    pub speedup: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub baseline: PolicyParams,
    pub order: usize,
    pub entries: Vec<GridEntry>,
}

impl GridResult {
    /// Entries for one policy.
    pub fn for_policy(&self, p: PolicyParams) -> impl Iterator<Item = &GridEntry> {
        self.entries.iter().filter(move |e| e.policy == p)
    }

    /// Skipped (constraint-violating) policies.
    pub fn skipped(&self) -> Vec<PolicyParams> {
        let set: BTreeSet<_> = self.entries.iter().filter(|e| !e.valid).map(|e| e.policy).collect();
        set.into_iter().collect()
    }

    /// Total Φ time over all modes for a policy.
    pub fn phi_total_ms(&self, p: PolicyParams) -> Option<f64> {
        self.for_policy(p)
            .filter(|e| e.target == GridTarget::PhiOnly)
            .map(|e| e.mean_ms)
            .sum()
    }

    /// Valid policy with the smallest total Φ time and its speedup over the
    /// baseline.
    pub fn best_phi(&self, baseline_ms: f64) -> Option<(PolicyParams, f64)> {
        let policies: BTreeSet<_> = self.entries.iter().filter(|e| e.valid).map(|e| e.policy).collect();
        policies
            .into_iter()
            .filter_map(|p| self.phi_total_ms(p).map(|t| (p, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, t)| (p, baseline_ms / t))
    }
}

struct Measurement {
    per_mode: Vec<f64>,
    full: Option<f64>,
}

fn measure(
    prepared: &PreparedPhi<'_>,
    tensor: &SparseTensor,
    options: &SolverOptions,
    policy: PolicyParams,
    reps: usize,
    full_solver: bool,
) -> Result<Measurement> {
    let cfg = KernelConfig {
        strategy: options.strategy.with_policy_vector(policy),
        policy,
        worker_budget: options.worker_budget,
        perturbation: options.perturbation,
    };
    // warm-up
    prepared.sweep_time(&cfg)?;
    let per_mode = (0..prepared.order())
        .map(|m| Ok(prepared.mean_time(m, &cfg, reps)?.as_secs_f64() * 1e3))
        .collect::<Result<Vec<_>>>()?;
    let full = if full_solver {
        let opts = SolverOptions {
            policy,
            strategy: cfg.strategy,
            ..options.clone()
        };
        let mut total = Duration::ZERO;
        for _ in 0..reps {
            let start = Instant::now();
            cp_apr_mu(tensor, &opts)?;
            total += start.elapsed();
        }
        Some(total.as_secs_f64() * 1e3 / reps as f64)
    } else {
        None
    };
    Ok(Measurement { per_mode, full })
}

/// Times the Φ kernel per mode (and optionally the full solver) for every
/// policy in `space`, `reps` times each, one policy at a time.
///
/// Policies violating the team × vector bound are reported as invalid rows
/// without timings. The chunked strategy takes its chunk width from each
/// policy's vector size.
pub fn grid_search(
    tensor: &SparseTensor,
    options: &SolverOptions,
    space: &PolicySpace,
    baseline: PolicyParams,
    reps: usize,
    full_solver: bool,
) -> Result<GridResult> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    baseline
        .validate()
        .map_err(|e| Error::InvalidPolicy(format!("baseline {e}")))?;
    let candidates = space.candidates()?;
    let prepared = PreparedPhi::new(tensor, options.rank, options.seed, options.epsilon)?;
    let base = measure(&prepared, tensor, options, baseline, reps, full_solver)?;

    let mut entries = Vec::new();
    for policy in candidates {
        if !policy.is_valid() {
            for mode in 0..tensor.order() {
                entries.push(GridEntry {
                    policy,
                    mode: Some(mode),
                    target: GridTarget::PhiOnly,
                    mean_ms: None,
                    speedup: None,
                    valid: false,
                });
            }
            if full_solver {
                entries.push(GridEntry {
                    policy,
                    mode: None,
                    target: GridTarget::FullSolver,
                    mean_ms: None,
                    speedup: None,
                    valid: false,
                });
            }
            continue;
        }
        let owned;
        let m = if policy == baseline {
            &base
        } else {
            owned = measure(&prepared, tensor, options, policy, reps, full_solver)?;
            &owned
        };
        for (mode, (&t, &b)) in m.per_mode.iter().zip(&base.per_mode).enumerate() {
            entries.push(GridEntry {
                policy,
                mode: Some(mode),
                target: GridTarget::PhiOnly,
                mean_ms: Some(t),
                speedup: Some(b / t),
                valid: true,
            });
        }
        if let (Some(t), Some(b)) = (m.full, base.full) {
            entries.push(GridEntry {
                policy,
                mode: None,
                target: GridTarget::FullSolver,
                mean_ms: Some(t),
                speedup: Some(b / t),
                valid: true,
            });
        }
    }
    Ok(GridResult {
        baseline,
        order: tensor.order(),
        entries,
    })
}

/// CSV: `league,team,vector,mode,target,mean_ms,speedup,valid`.
pub fn write_grid_csv<W: Write>(result: &GridResult, mut out: W) -> Result<()> {
    writeln!(out, "league,team,vector,mode,target,mean_ms,speedup,valid")?;
    for e in &result.entries {
        let mode = e.mode.map_or_else(|| "all".to_string(), |m| m.to_string());
        let ms = e.mean_ms.map_or_else(String::new, |v| format!("{v:.6}"));
        let sp = e.speedup.map_or_else(String::new, |v| format!("{v:.6}"));
        writeln!(
            out,
            "{},{},{},{mode},{},{ms},{sp},{}",
            e.policy.league_size, e.policy.team_size, e.policy.vector_size, e.target, e.valid
        )?;
    }
    Ok(())
}

/// Gnuplot-ready matrices of total Φ time (ms), one block per league size:
/// rows are team sizes, columns vector sizes, `NaN` for skipped policies.
/// Blocks are separated by two blank lines so `index` can select them.
pub fn write_heatmap<W: Write>(result: &GridResult, mut out: W) -> Result<()> {
    let leagues: BTreeSet<usize> = result.entries.iter().map(|e| e.policy.league_size).collect();
    let teams: BTreeSet<usize> = result.entries.iter().map(|e| e.policy.team_size).collect();
    let vectors: BTreeSet<usize> = result.entries.iter().map(|e| e.policy.vector_size).collect();
    for (k, &league) in leagues.iter().enumerate() {
        if k > 0 {
            write!(out, "\n\n")?;
        }
        writeln!(out, "# league {league}")?;
        let header: Vec<String> = vectors.iter().map(ToString::to_string).collect();
        writeln!(out, "team\\vector {}", header.join(" "))?;
        for &team in &teams {
            let cells: Vec<String> = vectors
                .iter()
                .map(|&vector| {
                    let p = PolicyParams {
                        league_size: league,
                        team_size: team,
                        vector_size: vector,
                    };
                    let valid = result.for_policy(p).any(|e| e.valid);
                    match result.phi_total_ms(p) {
                        Some(t) if valid => format!("{t:.6}"),
                        _ => "NaN".to_string(),
                    }
                })
                .collect();
            writeln!(out, "{team} {}", cells.join(" "))?;
        }
    }
    Ok(())
}
