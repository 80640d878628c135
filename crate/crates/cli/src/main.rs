//! `annulus`: construct Bernoulli product measures exactly, audit their
//! annular decay / doubling / contiguity behavior, and run singularity
//! diagnostics. Outputs are byte-deterministic for fixed inputs and seed.
//!
//! Exit codes: 0 success; 1 operational or validation error (machine-readable
//! JSON on stderr); 2 a mathematical claim check failed.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use annulus_core::audit::{
    adc_scan, chain_measure, chain_step_factor, contiguous_pair_audit, d1_blowup_series,
    doubling_ratio, epsilon_of, DoublingReport, RadiusFamily, ScanGrid,
};
use annulus_core::config::MeasureConfig;
use annulus_core::diag::{
    density_trajectory, dimension, entropy, expected_log, lln_experiment, sample_point, Law,
};
use annulus_core::measure::{AxisBox, ValidatedMeasure};
use annulus_core::rational::{fmt_ratio, parse_ratio, ratio_from_int, Rational};
use annulus_core::solver::{build_adc_system, solve_affine};
use annulus_core::{Error, Metric};

#[derive(Parser)]
#[command(
    name = "annulus",
    about = "Exact Bernoulli product measures with annular decay audits",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// Output file (defaults to stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for randomized grids and sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Ceiling for enclosure refinement generations.
    #[arg(long, global = true, default_value_t = 24)]
    gen_cap: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the slab-balance system and emit a measure config.
    SolveCoeffs {
        /// Ambient dimension N.
        #[arg(long)]
        dim: usize,
        /// Comma-separated rational parameters (N-1 of them; default zeros).
        #[arg(long, allow_hyphen_values = true)]
        t: Option<String>,
    },
    /// Evaluate the measure of regions.
    #[command(subcommand)]
    Measure(MeasureCmd),
    /// Annular decay, doubling and contiguity audits.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Entropy, trajectory and law-of-large-numbers diagnostics.
    #[command(subcommand)]
    Diag(DiagCmd),
}

#[derive(Subcommand)]
enum MeasureCmd {
    /// Exact measure of a half-open box with grid endpoints, or a certified
    /// enclosure when --gen is given.
    Box {
        #[arg(long)]
        config: PathBuf,
        /// Box as "lo,hi;lo,hi;..." with one lo,hi pair per axis.
        #[arg(long = "box", allow_hyphen_values = true)]
        box_spec: String,
        /// Refinement generation for enclosure mode.
        #[arg(long)]
        gen: Option<u32>,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Annulus ratio scan over a documented grid of centers and radii.
    Adc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "linf")]
        metric: String,
        /// Generation of the center grid.
        #[arg(long, default_value_t = 3)]
        depth: u32,
        #[arg(long, default_value_t = 3)]
        k_max: u32,
        #[arg(long, default_value_t = 6)]
        j_max: u32,
        /// Per-sample refinement is k + j + this offset.
        #[arg(long, default_value_t = 2)]
        gen_offset: u32,
    },
    /// Doubling ratios over seeded grid-exact samples; checks the
    /// 2^N a_min^-(N+3) bound.
    Doubling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 300)]
        samples: usize,
        /// Center grid generation.
        #[arg(long, default_value_t = 3)]
        depth: u32,
        /// Refinement for off-grid fallbacks.
        #[arg(long, default_value_t = 6)]
        gen: u32,
    },
    /// Exhaustive face-adjacent measure ratios at one generation; checks the
    /// minimum against the smallest child probability.
    Contiguity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        depth: u32,
    },
    /// Exact diagonal-chain measures against the closed form (2a1 + a2)^n.
    Counterexample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: u32,
    },
    /// d_1 annulus growth series at center (0, 1/2).
    Blowup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_max: u32,
        /// Per-term refinement is n + this offset.
        #[arg(long, default_value_t = 5)]
        gen_offset: u32,
    },
}

#[derive(Subcommand)]
enum DiagCmd {
    /// Entropy, dimension and the two expected log values.
    Entropy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Log-density trajectory of a sampled (or given) point.
    Trajectory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "lebesgue")]
        law: String,
        #[arg(long, default_value_t = 40)]
        depth: u32,
        /// Explicit point "x;y;0.." as rationals; sampled by law when absent.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
    },
    /// Law-of-large-numbers experiment on S_n / n.
    Lln {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "lebesgue")]
        law: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 40)]
        depth: u32,
    },
}

enum Outcome {
    Ok(String),
    /// A paper-claim style check failed; emit the report and exit 2.
    ClaimFailed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.jobs > 0 {
        // Results are merged in deterministic order regardless of pool size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.jobs)
            .build_global();
    }
    match run(&cli) {
        Ok(Outcome::Ok(output)) => {
            if let Err(err) = write_output(&cli.global.out, &output) {
                report_error(&err);
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Ok(Outcome::ClaimFailed(output)) => {
            let _ = write_output(&cli.global.out, &output);
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": "ClaimFailed",
                    "message": "a mathematical claim check failed; see the report",
                })
            );
            ExitCode::from(2)
        }
        Err(err) => {
            report_error(&err);
            ExitCode::from(1)
        }
    }
}

fn report_error(err: &Error) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": error_code(err), "message": err.to_string() })
    );
}

fn error_code(err: &Error) -> &'static str {
    match err {
        Error::NotNormalized { .. } => "NotNormalized",
        Error::NonPositiveProbability { .. } => "NonPositiveProbability",
        Error::BadDivisionNumber { .. } => "BadDivisionNumber",
        Error::IndexOutOfRange(_) => "IndexOutOfRange",
        Error::NotGridRational { .. } => "NotGridRational",
        Error::GenerationTooLarge { .. } => "GenerationTooLarge",
        Error::AdcClassRequired(_) => "AdcClassRequired",
        Error::StripNotContained { .. } => "StripNotContained",
        Error::DegenerateRadii { .. } => "DegenerateRadii",
        Error::OutOfOpenBox { .. } => "OutOfOpenBox",
        Error::DimensionMismatch { .. } => "DimensionMismatch",
        Error::DegenerateBox { .. } => "DegenerateBox",
        Error::InvalidInput(_) => "InvalidInput",
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_measure(path: &Path, gen_cap: u32) -> Result<ValidatedMeasure, Error> {
    Ok(MeasureConfig::load(path)?.validate()?.with_gen_cap(gen_cap))
}

fn parse_law(s: &str) -> Result<Law, Error> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<Metric, Error> {
    s.parse()
}

/// "lo,hi;lo,hi;..." into an [`AxisBox`].
fn parse_box(spec: &str) -> Result<AxisBox, Error> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for pair in spec.split(';') {
        let (l, h) = pair.split_once(',').ok_or_else(|| {
            Error::InvalidInput(format!("box axis {pair:?} is not a lo,hi pair"))
        })?;
        lo.push(parse_ratio(l)?);
        hi.push(parse_ratio(h)?);
    }
    AxisBox::new(lo, hi)
}

fn parse_point(spec: &str) -> Result<Vec<Rational>, Error> {
    spec.split(';').map(parse_ratio).collect()
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let seed = cli.global.seed;
    let gen_cap = cli.global.gen_cap;
    match &cli.command {
        Command::SolveCoeffs { dim, t } => {
            if *dim == 0 {
                return Err(Error::InvalidInput("dimension must be >= 1".into()));
            }
            let param = solve_affine(&build_adc_system(*dim));
            let t: Vec<Rational> = match t {
                Some(text) => text
                    .split(',')
                    .map(parse_ratio)
                    .collect::<Result<_, _>>()?,
                None => vec![Rational::from_integer(0.into()); param.basis_dim()],
            };
            let coeffs = param.sample(&t)?;
            Ok(Outcome::Ok(
                MeasureConfig::from_coefficients(&coeffs).to_json(),
            ))
        }

        Command::Measure(MeasureCmd::Box {
            config,
            box_spec,
            gen,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let bx = parse_box(box_spec)?;
            match gen {
                None => {
                    let value = measure.box_measure_exact(&bx)?;
                    Ok(Outcome::Ok(format!("{}\n", fmt_ratio(&value))))
                }
                Some(g) => {
                    let enc = measure.box_measure_enclosure(&bx, *g)?;
                    Ok(Outcome::Ok(format!(
                        "{},{}\n",
                        fmt_ratio(&enc.lo),
                        fmt_ratio(&enc.hi)
                    )))
                }
            }
        }

        Command::Audit(AuditCmd::Adc {
            config,
            metric,
            depth,
            k_max,
            j_max,
            gen_offset,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let metric = parse_metric(metric)?;
            let grid = ScanGrid {
                center_generation: *depth,
            };
            let radii = RadiusFamily {
                k_max: *k_max,
                j_max: *j_max,
            };
            let scan = adc_scan(&measure, metric, &grid, &radii, *gen_offset)?;
            Ok(Outcome::Ok(report::scan_csv(&scan)))
        }

        Command::Audit(AuditCmd::Doubling {
            config,
            samples,
            depth,
            gen,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let reports = doubling_grid(&measure, *samples, *depth, *gen, seed)?;
            let bound = doubling_bound(&measure);
            let csv = report::doubling_csv(reports.iter());
            let ok = reports
                .iter()
                .all(|r| r.ratio.hi.as_ref().is_some_and(|hi| hi <= &bound));
            if ok {
                Ok(Outcome::Ok(csv))
            } else {
                Ok(Outcome::ClaimFailed(csv))
            }
        }

        Command::Audit(AuditCmd::Contiguity { config, depth }) => {
            let measure = load_measure(config, gen_cap)?;
            let min_ratio = contiguous_pair_audit(&measure, *depth)?;
            let a_min = measure.prob_min().clone();
            let pass = min_ratio >= a_min;
            let out = format!(
                "{}\n",
                serde_json::json!({
                    "generation": depth,
                    "min_adjacent_ratio": fmt_ratio(&min_ratio),
                    "a_min": fmt_ratio(&a_min),
                    "pass": pass,
                })
            );
            Ok(if pass {
                Outcome::Ok(out)
            } else {
                Outcome::ClaimFailed(out)
            })
        }

        Command::Audit(AuditCmd::Counterexample { config, n }) => {
            let measure = load_measure(config, gen_cap)?;
            let eps = epsilon_of(&measure).ok_or_else(|| {
                Error::AdcClassRequired(
                    "chain comparison needs balanced N = 2 length-class weights".into(),
                )
            })?;
            let factor = chain_step_factor(&measure)?;
            let mut csv = String::from("n,chain,expected,pass\n");
            let mut all_pass = true;
            let mut expected = Rational::from_integer(1.into());
            for level in 1..=*n {
                expected *= &factor;
                let chain = chain_measure(&measure, level)?;
                let pass = chain == expected;
                all_pass &= pass;
                csv.push_str(&format!(
                    "{level},{},{},{pass}\n",
                    fmt_ratio(&chain),
                    fmt_ratio(&expected)
                ));
            }
            csv.push_str(&format!("# eps = {}\n", fmt_ratio(&eps)));
            Ok(if all_pass {
                Outcome::Ok(csv)
            } else {
                Outcome::ClaimFailed(csv)
            })
        }

        Command::Audit(AuditCmd::Blowup {
            config,
            n_max,
            gen_offset,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let reports = d1_blowup_series(&measure, *n_max, *gen_offset)?;
            Ok(Outcome::Ok(report::annulus_csv(reports.iter())))
        }

        Command::Diag(DiagCmd::Entropy { config }) => {
            let measure = load_measure(config, gen_cap)?;
            Ok(Outcome::Ok(format!(
                "{}\n",
                serde_json::json!({
                    "entropy": entropy(&measure),
                    "dimension": dimension(&measure),
                    "expected_log_lebesgue": expected_log(&measure, Law::Lebesgue),
                    "expected_log_mu": expected_log(&measure, Law::Mu),
                    "uniform": measure.is_uniform(),
                })
            )))
        }

        Command::Diag(DiagCmd::Trajectory {
            config,
            law,
            depth,
            point,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let law = parse_law(law)?;
            let x = match point {
                Some(spec) => parse_point(spec)?,
                None => sample_point(&measure, law, *depth, seed),
            };
            let sample = density_trajectory(&measure, &x, *depth)?;
            let mut csv = format!("# point = {}\n", report::fmt_point(&x));
            csv.push_str(&format!("# slope_estimate = {}\n", sample.slope_estimate));
            csv.push_str("n,log_density\n");
            for (n, v) in sample.values.iter().enumerate() {
                csv.push_str(&format!("{n},{v}\n"));
            }
            Ok(Outcome::Ok(csv))
        }

        Command::Diag(DiagCmd::Lln {
            config,
            law,
            samples,
            depth,
        }) => {
            let measure = load_measure(config, gen_cap)?;
            let law = parse_law(law)?;
            let stats = lln_experiment(&measure, law, *samples, *depth, seed);
            let pass = stats.pass;
            let out = format!(
                "{}\n",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
            Ok(if pass {
                Outcome::Ok(out)
            } else {
                Outcome::ClaimFailed(out)
            })
        }
    }
}

/// `2^N a_min^-(N+3)`.
fn doubling_bound(measure: &ValidatedMeasure) -> Rational {
    let n = measure.dim() as u32;
    let a_min = measure.prob_min().clone();
    let mut inv = Rational::from_integer(1.into());
    for _ in 0..n + 3 {
        inv /= &a_min;
    }
    ratio_from_int(1 << n) * inv
}

/// Seeded doubling samples on the shifted grid: centers on the
/// generation-`depth` corner grid, radii `u / 3^m`, all evaluated exactly.
fn doubling_grid(
    measure: &ValidatedMeasure,
    samples: usize,
    depth: u32,
    gen: u32,
    seed: u64,
) -> Result<Vec<DoublingReport>, Error> {
    use rand_chacha_draw::Stream;
    let mut stream = Stream::new(seed);
    let side = 3i64.pow(depth);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let center: Vec<Rational> = (0..measure.dim())
            .map(|_| {
                Rational::new(stream.below(side as u64).into(), side.into())
                    - Rational::new(1.into(), 2.into())
            })
            .collect();
        let m_exp = 1 + stream.below(3) as u32;
        let denom = 3i64.pow(m_exp);
        let r = Rational::new(
            (1 + stream.below((denom / 2) as u64) as i64).into(),
            denom.into(),
        );
        out.push(doubling_ratio(measure, &center, &r, gen)?);
    }
    Ok(out)
}

/// Minimal deterministic u64 stream (splitmix64) for grid sampling; the
/// sequence is pinned by the tests, independent of external RNG crates.
mod rand_chacha_draw {
    pub struct Stream {
        state: u64,
    }

    impl Stream {
        pub fn new(seed: u64) -> Self {
            Stream {
                state: seed ^ 0x9e37_79b9_7f4a_7c15,
            }
        }

        fn next(&mut self) -> u64 {
            self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = self.state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }

        pub fn below(&mut self, bound: u64) -> u64 {
            ((self.next() as u128 * bound as u128) >> 64) as u64
        }
    }
}
