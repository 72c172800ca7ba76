//! Batch experiment front end: TOML model configs, deterministic
//! artifacts, and the subcommand implementations behind the CLI binary.
//!
//! Every run is named by the SHA-256 of its fully-resolved spec; artifacts
//! land under `<out>/<hash12>/<subcommand>/` and are written atomically
//! (temp file + rename), so a rerun with the same spec produces
//! byte-identical files and never exposes partial output.

use crate::correlator::{correlator_profile, fit_exponential_decay, EnergyWindow};
use crate::error::{Error, Result};
use crate::ksoperator::{chain_bound_profile, contraction_scan};
use crate::lyapunov::{
    block_transfer, exceptional_support, furstenberg_check, lyapunov_estimate, Mat2,
    support_block_transfers,
};
use crate::model::{
    realization_seed, BackgroundPotential, BlockProfile, ModelConfig, Realization, SingleSiteLaw,
};
use crate::prufer::{dphi_de, dphi_domega, jacobian_det, prufer_trajectory};
use crate::spectrum::{containment_fraction, spectrum_estimate, SpectrumScan};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Single-site law section of a TOML model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LawSpec {
    /// Piecewise-constant density over `breakpoints` with `values`.
    Density {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Finitely many atoms; uniform weights when `probs` is omitted.
    Atomic {
        points: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<f64>>,
    },
}

/// Background potential section of a TOML model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum V0Spec {
    Zero,
    Constant { value: f64 },
    Periodic { table: Vec<f64> },
    Window { start: i64, table: Vec<f64> },
}

fn default_profile() -> Vec<f64> {
    vec![1.0]
}

fn default_law() -> LawSpec {
    LawSpec::Density {
        breakpoints: vec![0.0, 1.0],
        values: vec![1.0],
    }
}

fn default_v0() -> V0Spec {
    V0Spec::Zero
}

/// Serializable model description; the default is the α = 1 Anderson
/// model with couplings uniform on `[0, 1]` and no background.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_profile")]
    pub f: Vec<f64>,
    #[serde(default = "default_law")]
    pub law: LawSpec,
    #[serde(default = "default_v0")]
    pub v0: V0Spec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            f: default_profile(),
            law: default_law(),
            v0: default_v0(),
        }
    }
}

/// Wire format of the TOML file: `[profile]`, `[law]`, `[v0]` tables.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ModelFile {
    #[serde(default)]
    profile: ProfileTable,
    #[serde(default)]
    law: Option<LawSpec>,
    #[serde(default)]
    v0: Option<V0Spec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileTable {
    #[serde(default = "default_profile")]
    f: Vec<f64>,
}

impl Default for ProfileTable {
    fn default() -> Self {
        ProfileTable {
            f: default_profile(),
        }
    }
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<ModelSpec> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        Ok(ModelSpec {
            f: file.profile.f,
            law: file.law.unwrap_or_else(default_law),
            v0: file.v0.unwrap_or_else(default_v0),
        })
    }

    pub fn to_config(&self) -> Result<ModelConfig> {
        let profile = BlockProfile::new(self.f.clone())?;
        let law = match &self.law {
            LawSpec::Density {
                breakpoints,
                values,
            } => SingleSiteLaw::Density {
                breakpoints: breakpoints.clone(),
                values: values.clone(),
            },
            LawSpec::Atomic { points, probs } => SingleSiteLaw::Atomic {
                points: points.clone(),
                probs: probs
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / points.len() as f64; points.len()]),
            },
        };
        let v0 = match &self.v0 {
            V0Spec::Zero => BackgroundPotential::Zero,
            V0Spec::Constant { value } => BackgroundPotential::Constant(*value),
            V0Spec::Periodic { table } => BackgroundPotential::Periodic(table.clone()),
            V0Spec::Window { start, table } => BackgroundPotential::Window {
                start: *start,
                table: table.clone(),
            },
        };
        ModelConfig::new(profile, law, v0)
    }
}

/// Fully-resolved experiment request; its serialization is hashed to name
/// the artifact directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub subcommand: String,
    pub model: ModelSpec,
    pub seed: u64,
    /// Realization / step budget (per subcommand meaning).
    pub samples: usize,
    /// Energy-grid points.
    pub grid: usize,
    /// Quadrature cells per kernel dimension.
    pub quad_n: usize,
    /// Period budget (blocks) or exceptional order `N`.
    pub period: usize,
    /// Box half-length `L` in blocks.
    pub length: usize,
}

impl ExperimentSpec {
    /// Subcommand-appropriate defaults; CLI flags override fields.
    pub fn new(subcommand: &str, model: ModelSpec) -> ExperimentSpec {
        let (samples, grid, quad_n, period, length) = match subcommand {
            "correlator" => (400, 0, 0, 0, 20),
            "lyapunov" => (20_000, 32, 0, 0, 0),
            "furstenberg" => (100_000, 16, 0, 0, 0),
            "exceptional" => (1_000_000, 0, 0, 6, 0),
            "spectrum" => (200, 600, 0, 3, 40),
            "opnorm" => (0, 64, 400, 0, 0),
            "prufer-verify" => (100, 0, 0, 0, 4),
            "localize" => (400, 16, 200, 0, 10),
            _ => (0, 0, 0, 0, 0),
        };
        ExperimentSpec {
            subcommand: subcommand.to_string(),
            model,
            seed: 1,
            samples,
            grid,
            quad_n,
            period,
            length,
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let digest = h.finalize();
        let mut out = String::new();
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Paths of the files produced by a run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// `E`-grid of `n` midpoints across `Σ₀`.
/// Midpoints of an `n`-cell partition of `Σ₀`.
pub fn sigma0_grid(cfg: &ModelConfig, n: usize) -> Vec<f64> {
    let (lo, hi) = cfg.sigma0();
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

struct Emitter {
    dir: PathBuf,
    header: String,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(dir: PathBuf, spec: &ExperimentSpec) -> Result<Emitter> {
        std::fs::create_dir_all(&dir)?;
        let header = format!(
            "# spec {} anderson-lab {}\n",
            spec.hash(),
            env!("CARGO_PKG_VERSION")
        );
        Ok(Emitter {
            dir,
            header,
            files: Vec::new(),
        })
    }

    fn table(&mut self, name: &str, columns: &str, rows: &[Vec<f64>]) -> Result<()> {
        let mut text = self.header.clone();
        let _ = writeln!(text, "{columns}");
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            let _ = writeln!(text, "{}", cells.join(","));
        }
        let path = self.dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    fn report(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut obj = value.clone();
        if let serde_json::Value::Object(map) = &mut obj {
            let trimmed = self.header.trim_start_matches("# ").trim_end();
            map.insert(
                "provenance".to_string(),
                serde_json::Value::String(trimmed.to_string()),
            );
        }
        let text = serde_json::to_string_pretty(&obj).expect("report serializes") + "\n";
        let path = self.dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }
}

/// Execute a spec, writing artifacts under `out_root`.
pub fn run(spec: &ExperimentSpec, out_root: &Path) -> Result<RunArtifacts> {
    let hash = spec.hash();
    let dir = out_root.join(&hash[..12]).join(&spec.subcommand);
    let mut em = Emitter::new(dir.clone(), spec)?;
    let manifest = serde_json::json!({
        "spec": spec,
        "hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
    });
    em.report("manifest.json", &manifest)?;
    match spec.subcommand.as_str() {
        "correlator" => run_correlator(spec, &mut em)?,
        "lyapunov" => run_lyapunov(spec, &mut em)?,
        "furstenberg" => run_furstenberg(spec, &mut em)?,
        "exceptional" => run_exceptional(spec, &mut em)?,
        "spectrum" => run_spectrum(spec, &mut em)?,
        "opnorm" => run_opnorm(spec, &mut em)?,
        "prufer-verify" => run_prufer_verify(spec, &mut em)?,
        "localize" => run_localize(spec, &mut em)?,
        other => {
            return Err(Error::ConfigParse(format!("unknown subcommand `{other}`")));
        }
    }
    Ok(RunArtifacts {
        dir,
        files: em.files,
    })
}

fn run_correlator(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    let profile = correlator_profile(
        &cfg,
        spec.length,
        spec.samples,
        EnergyWindow::All,
        spec.seed,
    )?;
    let rows: Vec<Vec<f64>> = profile
        .distances
        .iter()
        .map(|&d| vec![d as f64, profile.rho[d], profile.stderr[d]])
        .collect();
    em.table("profile.csv", "distance,rho,stderr", &rows)?;
    let fit = fit_exponential_decay(&profile, spec.length / 4)?;
    em.report(
        "fit.json",
        &serde_json::json!({
            "gamma": fit.gamma,
            "ci": [fit.ci.0, fit.ci.1],
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "n_points": fit.n_points,
            "l": spec.length,
            "n_realizations": spec.samples,
        }),
    )
}

fn run_lyapunov(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    let rows: Vec<Vec<f64>> = sigma0_grid(&cfg, spec.grid)
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let est = lyapunov_estimate(&cfg, e, spec.samples, realization_seed(spec.seed, i as u64));
            vec![e, est.gamma, est.stderr]
        })
        .collect();
    em.table("lyapunov.csv", "energy,gamma,stderr", &rows)
}

fn run_furstenberg(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    let mut rows = Vec::new();
    let mut all_positive = true;
    for (i, e) in sigma0_grid(&cfg, spec.grid).into_iter().enumerate() {
        let mats = support_block_transfers(&cfg, e).ok_or_else(|| {
            Error::InvalidRequest("furstenberg check needs an atomic single-site law".into())
        })?;
        let report = furstenberg_check(&mats, 1e-9);
        let est = lyapunov_estimate(&cfg, e, spec.samples, realization_seed(spec.seed, i as u64));
        all_positive &= report.positive() && est.gamma - 2.0 * est.stderr > 0.0;
        rows.push(vec![
            e,
            report.noncompact as u8 as f64,
            report.strongly_irreducible as u8 as f64,
            est.gamma,
            est.stderr,
        ]);
    }
    em.table(
        "furstenberg.csv",
        "energy,noncompact,strongly_irreducible,gamma,stderr",
        &rows,
    )?;
    em.report(
        "report.json",
        &serde_json::json!({
            "grid": spec.grid,
            "all_positive": all_positive,
        }),
    )
}

fn run_exceptional(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let n = spec.period as u32;
    if n < 2 {
        return Err(Error::ConfigParse("exceptional order N must be >= 2".into()));
    }
    let support = exceptional_support(n);
    // potential atoms -E_j make each block the free monodromy at the
    // elliptic energy E_j, an exact identity; with +E_j the odd-order
    // blocks would land on -I instead
    let atoms: Vec<f64> = support.iter().map(|e| -e).collect();
    let mut max_dev = 0.0f64;
    for &v in &atoms {
        let pot = vec![v; n as usize];
        let dev = block_transfer(&pot, 0.0)
            .distance_to(&Mat2::IDENTITY);
        max_dev = max_dev.max(dev);
    }
    let (gamma, stderr) = if support.is_empty() {
        (0.0, 0.0)
    } else {
        let profile = BlockProfile::new(vec![1.0; n as usize])?;
        let mut sorted = atoms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let law = SingleSiteLaw::uniform_atoms(&sorted);
        let cfg = ModelConfig::new(profile, law, BackgroundPotential::Zero)?;
        let est = lyapunov_estimate(&cfg, 0.0, spec.samples / n as usize, spec.seed);
        (est.gamma, est.stderr)
    };
    em.report(
        "report.json",
        &serde_json::json!({
            "order": n,
            "support": support,
            "max_monodromy_deviation": max_dev,
            "lyapunov_at_zero": gamma,
            "lyapunov_stderr": stderr,
        }),
    )
}

fn run_spectrum(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    let scan = SpectrumScan {
        period_blocks: spec.period,
        grid_n: spec.grid,
        max_words: 4096,
        seed: spec.seed,
    };
    let est = spectrum_estimate(&cfg, &scan)?;
    let rows: Vec<Vec<f64>> = est.bands.iter().map(|&(a, b)| vec![a, b]).collect();
    em.table("bands.csv", "band_lo,band_hi", &rows)?;
    let contained = containment_fraction(&cfg, &est, spec.length, spec.samples, 1e-6, spec.seed)?;
    em.report(
        "report.json",
        &serde_json::json!({
            "bands": est.bands,
            "containment_fraction": contained,
            "period_blocks": spec.period,
        }),
    )
}

fn run_opnorm(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    let energies = sigma0_grid(&cfg, spec.grid);
    let scan = contraction_scan(&cfg, &energies, spec.quad_n)?;
    let rows: Vec<Vec<f64>> = scan
        .energies
        .iter()
        .zip(&scan.norms)
        .map(|(&e, &s)| vec![e, s])
        .collect();
    em.table("opnorm.csv", "energy,norm", &rows)?;
    em.report(
        "report.json",
        &serde_json::json!({
            "q_hat": scan.q_hat,
            "max_jump": scan.max_jump,
            "quad_n": spec.quad_n,
        }),
    )
}

fn run_prufer_verify(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let mut worst_domega = 0.0f64;
    let mut worst_de = 0.0f64;
    let mut worst_jac = 0.0f64;
    let step = 1e-6;
    for _ in 0..spec.samples {
        let alpha = 1 + rng.gen_range(0..3usize);
        let f: Vec<f64> = (0..alpha).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let cfg = ModelConfig::new(
            BlockProfile::new(f)?,
            SingleSiteLaw::uniform(-1.0, 1.0),
            BackgroundPotential::Zero,
        )?;
        let l = spec.length.max(2);
        let re = Realization::sample(&cfg, l, rng.gen());
        let e = rng.gen::<f64>() * 4.0 - 2.0;
        let traj = prufer_trajectory(&cfg, &re, e)?;
        let n_probe = (cfg.alpha() * l) as i64 - 1;
        let j = rng.gen_range(-(l as i64)..l as i64 - 1);
        let analytic = dphi_domega(&cfg, &traj, j, n_probe);
        let mut re_p = re.clone();
        *re_p.omega_mut(j) += step;
        let mut re_m = re.clone();
        *re_m.omega_mut(j) -= step;
        let fd = (prufer_trajectory(&cfg, &re_p, e)?.phi(n_probe)
            - prufer_trajectory(&cfg, &re_m, e)?.phi(n_probe))
            / (2.0 * step);
        worst_domega = worst_domega.max((analytic - fd).abs() / (1.0 + fd.abs()));
        let analytic_e = dphi_de(&traj, n_probe);
        let fd_e = (prufer_trajectory(&cfg, &re, e + step)?.phi(n_probe)
            - prufer_trajectory(&cfg, &re, e - step)?.phi(n_probe))
            / (2.0 * step);
        worst_de = worst_de.max((analytic_e - fd_e).abs() / (1.0 + fd_e.abs()));
    }
    for _ in 0..spec.samples.min(20) {
        let alpha = 1 + rng.gen_range(0..2usize);
        let f: Vec<f64> = (0..alpha).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let cfg = ModelConfig::new(
            BlockProfile::new(f)?,
            SingleSiteLaw::uniform(-1.0, 1.0),
            BackgroundPotential::Zero,
        )?;
        let re = Realization::sample(&cfg, 2, rng.gen());
        let rel = jacobian_fd_check(&cfg, &re)?;
        worst_jac = worst_jac.max(rel);
    }
    em.report(
        "report.json",
        &serde_json::json!({
            "samples": spec.samples,
            "worst_dphi_domega_rel": worst_domega,
            "worst_dphi_de_rel": worst_de,
            "worst_jacobian_rel": worst_jac,
        }),
    )
}

/// `(E_l, θ_{-L}, …, θ_{L-2})` for the middle eigenvalue of a box.
fn change_of_variable_point(cfg: &ModelConfig, re: &Realization, li: usize) -> Result<Vec<f64>> {
    let sys = crate::hamiltonian::FiniteBox::assemble(cfg, re).eigensystem()?;
    let e_l = sys.values[li];
    let traj = prufer_trajectory(cfg, re, e_l)?;
    let mut out = vec![e_l];
    out.extend(crate::prufer::boundary_phases(&traj));
    Ok(out)
}

fn gauss_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0f64;
    for col in 0..n {
        let (pivot, _) = m
            .iter()
            .enumerate()
            .skip(col)
            .map(|(i, row)| (i, row[col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        let p = m[col][col];
        if p == 0.0 {
            return 0.0;
        }
        det *= p;
        for i in col + 1..n {
            let factor = m[i][col] / p;
            for k in col..n {
                m[i][k] -= factor * m[col][k];
            }
        }
    }
    det
}

/// Relative error between the closed-form Jacobian determinant of
/// `ω ↦ (E_l, boundary phases)` and its central finite-difference value;
/// errors out if the sign is not negative.
pub fn jacobian_fd_check(cfg: &ModelConfig, re: &Realization) -> Result<f64> {
    let l = re.l as i64;
    let dim = 2 * cfg.alpha() * re.l;
    let li = dim / 2;
    let sys = crate::hamiltonian::FiniteBox::assemble(cfg, re).eigensystem()?;
    let analytic = jacobian_det(cfg, re, sys.values[li])?;
    let step = 1e-6;
    let n_in = (2 * l) as usize;
    let mut cols = Vec::with_capacity(n_in);
    for j in -l..l {
        let mut rp = re.clone();
        *rp.omega_mut(j) += step;
        let mut rm = re.clone();
        *rm.omega_mut(j) -= step;
        let hi = change_of_variable_point(cfg, &rp, li)?;
        let lo = change_of_variable_point(cfg, &rm, li)?;
        cols.push(
            hi.iter()
                .zip(&lo)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<f64>>(),
        );
    }
    let rows: Vec<Vec<f64>> = (0..n_in)
        .map(|r| (0..n_in).map(|c| cols[c][r]).collect())
        .collect();
    let fd = gauss_det(rows);
    if fd >= 0.0 || analytic.sign >= 0.0 {
        return Err(Error::Numerical(format!(
            "jacobian determinant should be negative (fd {fd}, sign {})",
            analytic.sign
        )));
    }
    Ok((fd - analytic.value).abs() / analytic.value.abs())
}

fn run_localize(spec: &ExperimentSpec, em: &mut Emitter) -> Result<()> {
    let cfg = spec.model.to_config()?;
    if cfg.alpha() != 1 {
        return Err(Error::InvalidRequest(
            "the end-to-end chain comparison is implemented for single-site blocks".into(),
        ));
    }
    let profile = correlator_profile(
        &cfg,
        spec.length,
        spec.samples,
        EnergyWindow::All,
        spec.seed,
    )?;
    let fit = fit_exponential_decay(&profile, spec.length / 4)?;
    let energies = sigma0_grid(&cfg, spec.grid);
    let scan = contraction_scan(&cfg, &energies, spec.quad_n)?;
    let (lo, hi) = cfg.sigma0();
    let he = (hi - lo) / spec.grid as f64;
    let k0_max = (spec.length - 2).min(6);
    let mut integrated = vec![0.0f64; k0_max + 1];
    for &e in &energies {
        let bounds = chain_bound_profile(&cfg, spec.length, k0_max, e, spec.quad_n)?;
        for (acc, b) in integrated.iter_mut().zip(&bounds) {
            *acc += he * b;
        }
    }
    let mc_dominated = (1..=k0_max).all(|d| profile.rho[d] <= integrated[d] + 3.0 * profile.stderr[d]);
    em.report(
        "localize.json",
        &serde_json::json!({
            "fit_gamma": fit.gamma,
            "fit_ci": [fit.ci.0, fit.ci.1],
            "q_hat": scan.q_hat,
            "integrated_bounds": integrated,
            "mc_rho": &profile.rho[..=k0_max],
            "mc_dominated": mc_dominated,
        }),
    )
}
