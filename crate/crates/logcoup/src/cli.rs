//! Command surface: dataset ingestion, strict JSON configuration, and the
//! `fit` / `sample` / `verify` commands with their file outputs.
//!
//! Exit codes: 0 ok, 1 config error, 2 data error, 3 sampler failure,
//! 4 verification failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::densities::DensitySpec;
use crate::error::{Error, Result};
use crate::greedy_bayes::{fit, fit_parallel, GreedyBayesModel};
use crate::model::{validate_dataset, Activation, ActivationKind, Dataset, HyperParams, PriorSpec};
use crate::report::CheckReport;
use crate::samplers::{sample_posterior, ChainConfig, SamplerDiagnostics};
use crate::util::derive_seed;
use crate::verification::{
    check_cov_domination, check_lemma3_bound, check_reverse_logconcavity,
    check_xi_strict_logconcavity, holder_ratio,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SAMPLER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Chain settings as they appear in config files; every field optional,
/// defaults documented in [`ChainConfig`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub step_size: Option<f64>,
    pub inner_step_size: Option<f64>,
    pub burn_in: Option<usize>,
    pub inner_burn_in: Option<usize>,
    pub thinning: Option<usize>,
    pub n_steps: Option<usize>,
    pub inner_budget: Option<usize>,
    pub warm_start: Option<bool>,
}

/// One run: dataset, model, chain settings, seed, output directory.
/// Unknown fields are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: String,
    pub prior: PriorSpec,
    pub activation: ActivationKind,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub l: usize,
    #[serde(default)]
    pub chain: ChainSettings,
    pub seed: u64,
    pub output_dir: String,
    /// Residuals for single-density `sample` jobs; defaults to `y`.
    #[serde(default)]
    pub residuals: Option<Vec<f64>>,
    /// Parallelize the index loop within each greedy stage.
    #[serde(default)]
    pub parallel: bool,
}

impl RunConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        HyperParams::new(self.alpha, self.beta, self.k, self.l)?;
        self.prior.validate()?;
        if let Some(r) = &self.residuals {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("residuals contain non-finite entries".into()));
            }
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
            l: self.l,
        }
    }

    /// Materialize a [`ChainConfig`] for `spec`, filling unset fields with
    /// the spec-derived defaults.
    pub fn chain_config(&self, spec: &DensitySpec) -> ChainConfig {
        let defaults = ChainConfig::for_spec(spec, self.seed);
        ChainConfig {
            step_size: self.chain.step_size.unwrap_or(defaults.step_size),
            burn_in: self.chain.burn_in.unwrap_or(defaults.burn_in),
            thinning: self.chain.thinning.unwrap_or(defaults.thinning),
            n_steps: self.chain.n_steps.unwrap_or(defaults.n_steps),
            inner_budget: self.chain.inner_budget.unwrap_or(defaults.inner_budget),
            seed: self.seed,
            warm_start: self.chain.warm_start.unwrap_or(defaults.warm_start),
            inner_step_size: self.chain.inner_step_size,
            inner_burn_in: self.chain.inner_burn_in,
        }
    }
}

/// Write `bytes` atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::from_csv(&config.dataset_path)
        .map_err(|e| Error::Data(format!("{}: {e}", config.dataset_path)))?;
    let report = validate_dataset(&ds, &config.prior);
    if !report.passed {
        return Err(Error::Data(format!("dataset invalid: {}", report.details)));
    }
    Ok(ds)
}

/// The single-density spec of a `sample`/`verify` job: the full design with
/// explicit residuals, or `r = y` when none are given.
fn job_spec(config: &RunConfig, ds: &Dataset) -> Result<DensitySpec> {
    let r = match &config.residuals {
        Some(r) => {
            if r.len() != ds.n() {
                return Err(Error::Config(format!(
                    "config has {} residuals, dataset has {} rows",
                    r.len(),
                    ds.n()
                )));
            }
            DVector::from_vec(r.clone())
        }
        None => ds.y().clone(),
    };
    DensitySpec::new(
        ds.x().clone(),
        r,
        Activation::new(config.activation),
        config.alpha,
        config.prior,
    )
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    seed: u64,
    wall_secs: f64,
    outputs: &[&str],
) -> Result<()> {
    let manifest = json!({
        "artifact": "logcoup",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "seed": seed,
        "wall_time_secs": wall_secs,
        "outputs": outputs,
    });
    atomic_write(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::State(e.to_string()))?
            .as_bytes(),
    )
}

fn float_csv(v: f64) -> String {
    // shortest round-trip formatting keeps files byte-stable across runs
    format!("{v}")
}

struct CommandArgs<'a> {
    config_path: &'a Path,
    seed_override: Option<u64>,
    out_override: Option<&'a Path>,
}

fn prepare(args: &CommandArgs) -> Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(args.config_path)?;
    if let Some(seed) = args.seed_override {
        config.seed = seed;
    }
    if let Some(out) = args.out_override {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    Ok((config, out_dir))
}

/// `fit`: run the greedy recursion, write the model archive, the training
/// curve CSV, and a run manifest.
pub fn cmd_fit(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> i32 {
    run_command(|| {
        let start = Instant::now();
        let (config, out_dir) = prepare(&CommandArgs {
            config_path,
            seed_override,
            out_override,
        })?;
        let ds = load_dataset(&config)?;
        let hyper = config.hyper();
        let act = Activation::new(config.activation);
        // chain defaults are derived from the full-data spec
        let full_spec = job_spec(&config, &ds)?;
        let chain = config.chain_config(&full_spec);

        let model: GreedyBayesModel = if config.parallel {
            fit_parallel(&ds, &hyper, &act, &config.prior, &chain)?
        } else {
            fit(&ds, &hyper, &act, &config.prior, &chain)?
        };

        let archive = out_dir.join("model.gbm");
        model.save(&archive)?;

        let curve = model.training_curve(&ds)?;
        let mut csv = String::from("stage,mse\n");
        for (stage, mse) in curve.iter().enumerate() {
            csv.push_str(&format!("{stage},{}\n", float_csv(*mse)));
        }
        atomic_write(&out_dir.join("training_curve.csv"), csv.as_bytes())?;

        write_manifest(
            &out_dir,
            "fit",
            &config,
            config.seed,
            start.elapsed().as_secs_f64(),
            &["model.gbm", "training_curve.csv"],
        )?;
        println!(
            "fit: n={} d={} K={} L={} -> {} (final mse {:.6})",
            ds.n(),
            ds.dim(),
            hyper.k,
            hyper.l,
            archive.display(),
            curve.last().copied().unwrap_or(f64::NAN)
        );
        Ok(())
    })
}

/// `sample`: draw `count` posterior weights through the two-stage pipeline
/// and write `samples.csv` plus diagnostics.
pub fn cmd_sample(
    config_path: &Path,
    count: usize,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> i32 {
    run_command(|| {
        let start = Instant::now();
        let (config, out_dir) = prepare(&CommandArgs {
            config_path,
            seed_override,
            out_override,
        })?;
        let ds = load_dataset(&config)?;
        let spec = job_spec(&config, &ds)?;
        let chain = config.chain_config(&spec);

        let (draws, diag): (Vec<DVector<f64>>, SamplerDiagnostics) =
            sample_posterior(&spec, &chain, count)?;

        let mut csv = String::new();
        let header: Vec<String> = (1..=ds.dim()).map(|j| format!("w{j}")).collect();
        csv.push_str(&header.join(","));
        csv.push('\n');
        for w in &draws {
            let row: Vec<String> = w.iter().map(|v| float_csv(*v)).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        atomic_write(&out_dir.join("samples.csv"), csv.as_bytes())?;

        let diag_json = json!({
            "count": draws.len(),
            "acceptance_rate": diag.acceptance_rate,
            "effective_sample_size": diag.effective_sample_size,
            "n_evals": diag.n_evals,
        });
        atomic_write(
            &out_dir.join("diagnostics.json"),
            serde_json::to_string_pretty(&diag_json)
                .map_err(|e| Error::State(e.to_string()))?
                .as_bytes(),
        )?;

        write_manifest(
            &out_dir,
            "sample",
            &config,
            config.seed,
            start.elapsed().as_secs_f64(),
            &["samples.csv", "diagnostics.json"],
        )?;
        println!("sample: wrote {} draws to {}", draws.len(), out_dir.display());
        Ok(())
    })
}

/// `verify`: run the battery applicable to the configured prior and write
/// `verify_report.json`. Exit 0 iff every theorem-backed check passes;
/// conjecture-evidence checks are informational.
pub fn cmd_verify(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
    negative_control: bool,
) -> i32 {
    let gate = match run_verify(config_path, seed_override, out_override, negative_control) {
        Ok(gate) => gate,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if gate {
        EXIT_OK
    } else {
        eprintln!("verification failed: a theorem-backed check did not pass");
        EXIT_VERIFY
    }
}

fn run_verify(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
    negative_control: bool,
) -> Result<bool> {
    let start = Instant::now();
    let (config, out_dir) = prepare(&CommandArgs {
        config_path,
        seed_override,
        out_override,
    })?;
    let ds = load_dataset(&config)?;

    let act = if negative_control {
        // deliberately undersized curvature bound; the concavity check
        // must fail on this
        Activation::with_curvature(
            config.activation,
            crate::model::curvature_constant(config.activation) / 10.0,
        )
    } else {
        Activation::new(config.activation)
    };
    let r = match &config.residuals {
        Some(r) => DVector::from_vec(r.clone()),
        None => ds.y().clone(),
    };
    let spec = DensitySpec::new(ds.x().clone(), r, act, config.alpha, config.prior)?;

    let inner_cfg = ChainConfig {
        step_size: ChainConfig::default_inner_step(&spec),
        burn_in: config.chain.inner_burn_in.unwrap_or(300),
        thinning: 2,
        n_steps: 2 * config.chain.inner_budget.unwrap_or(2000),
        inner_budget: 1,
        seed: derive_seed(config.seed, &[0x7E57]),
        warm_start: false,
        inner_step_size: config.chain.inner_step_size,
        inner_burn_in: None,
    };

    // (report, gating?) — conjecture evidence never gates
    let mut checks: Vec<(CheckReport, bool)> = Vec::new();
    checks.push((
        check_reverse_logconcavity(&spec, 1000, derive_seed(config.seed, &[1])),
        true,
    ));
    checks.push((
        check_cov_domination(&spec, 10, &inner_cfg)?,
        spec.prior().is_gaussian(),
    ));
    checks.push((check_xi_strict_logconcavity(&spec, 10, &inner_cfg)?, false));
    if spec.prior().is_gaussian() {
        let l3 = crate::densities::build_lemma3(&spec, &DVector::zeros(spec.dim()))?;
        let threshold = l3.threshold_sigma0_sq(&spec);
        let grid = [0.25 * threshold, 0.5 * threshold, threshold];
        checks.push((
            check_lemma3_bound(&spec, 50, &grid, derive_seed(config.seed, &[2]))?,
            true,
        ));
    }

    let ratio = holder_ratio(
        config.alpha,
        spec.activation().curvature(),
        ds.n(),
        spec.r_inf(),
        ds.dim(),
    );
    let gate = checks.iter().all(|(report, gating)| !gating || report.passed);

    let reports: Vec<&CheckReport> = checks.iter().map(|(r, _)| r).collect();
    let doc = json!({
        "reports": reports,
        "informational": {
            "holder_ratio": ratio,
            "holder_ratio_below_one": ratio < 1.0,
            "negative_control": negative_control,
        },
        "gating_checks": checks
            .iter()
            .filter(|(_, g)| *g)
            .map(|(r, _)| r.check_name.clone())
            .collect::<Vec<_>>(),
    });
    atomic_write(
        &out_dir.join("verify_report.json"),
        serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::State(e.to_string()))?
            .as_bytes(),
    )?;
    write_manifest(
        &out_dir,
        "verify",
        &config,
        config.seed,
        start.elapsed().as_secs_f64(),
        &["verify_report.json"],
    )?;

    for (report, gating) in &checks {
        let tag = if *gating { "gate" } else { "info" };
        println!(
            "verify [{tag}] {}: {} (margin {:+.3e})",
            report.check_name,
            if report.passed { "pass" } else { "FAIL" },
            report.margin
        );
    }
    println!("verify [info] holder_ratio: {ratio:.4}");
    Ok(gate)
}

fn run_command<F: FnOnce() -> Result<()>>(f: F) -> i32 {
    match f() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
