//! The five subcommands and the scenario plumbing they share.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use supertomo_core::geometry::{build_projection_matrix, generate_phantom, head_phantom, parse_phantom_spec, simulate_data};
use supertomo_core::solvers::{
    art, cg, pcg, sup_art, sup_cg, sup_pcg, sup_tpcg, uniform_prior, ArtParams, Monitor, ProjectionSystem,
};
use supertomo_core::{
    Error as CoreError, FourierPreconditioner, Image, PreconditionerSpec, RunOptions, RunResult, RunStatus,
    ScanGeometry, SparseMatrix, SuperiorizationParams,
};

use crate::config::{Algorithm, Config, Init, RawConfig};
use crate::io::{self, CurvePoint, VecKind};
use crate::CliError;

/// Records considered when locating the smallest selective error.
pub const SELECTION_WINDOW: usize = 15;

pub const SUMMARY_VERSION: &str = "# supertomo-summary v1";
pub const SWEEP_VERSION: &str = "# supertomo-sweep v1";
pub const COMPARE_VERSION: &str = "# supertomo-compare v1";
const SUMMARY_COLUMNS: &str = "algorithm,argmin_k,min_se";

pub fn load_phantom(cfg: &Config) -> Result<Image, CliError> {
    let ellipses = match &cfg.phantom {
        None => head_phantom(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io_at(path))?;
            parse_phantom_spec(&text)
                .map_err(|e| CliError::Config(format!("phantom {}: {e}", path.display())))?
        }
    };
    Ok(generate_phantom(&ellipses, &cfg.geometry))
}

/// Everything a reconstruction needs besides the algorithm choice.
pub struct Scenario {
    pub geometry: ScanGeometry,
    pub phantom: Image,
    pub matrix: SparseMatrix,
    pub data: Vec<f64>,
    /// Absent when the phantom vanishes on the SE mask.
    pub monitor: Option<Monitor>,
}

impl Scenario {
    pub fn build(cfg: &Config) -> Result<Self, CliError> {
        let phantom = load_phantom(cfg)?;
        let matrix = build_projection_matrix(&cfg.geometry)?;
        Self::with_matrix(cfg, phantom, matrix)
    }

    fn with_matrix(cfg: &Config, phantom: Image, matrix: SparseMatrix) -> Result<Self, CliError> {
        let data = match &cfg.sinogram {
            Some(path) => {
                let (geom, values) = io::load_vec(path, VecKind::Sinogram)?;
                if geom != cfg.geometry {
                    return Err(CliError::Config(format!(
                        "sinogram {} was recorded with a different geometry",
                        path.display()
                    )));
                }
                values
            }
            None => simulate_data(&matrix, &phantom, cfg.photons, cfg.seed)?,
        };
        let monitor = match Monitor::new(phantom.clone(), &cfg.geometry) {
            Ok(m) => Some(m),
            Err(CoreError::ZeroPhantomOnMask) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Scenario {
            geometry: cfg.geometry.clone(),
            phantom,
            matrix,
            data,
            monitor,
        })
    }
}

/// A finished run with its output expressed as an image.
pub struct Reconstruction {
    pub result: RunResult,
    pub image: Image,
}

impl Reconstruction {
    pub fn best_se(&self) -> Option<(usize, f64)> {
        self.result.best_se(SELECTION_WINDOW)
    }
}

pub fn reconstruct(cfg: &Config, sc: &Scenario) -> Result<Reconstruction, CliError> {
    let alg = cfg.require_algorithm()?;
    let p = &cfg.params;
    let system = ProjectionSystem::new(&sc.matrix, &sc.data)?;
    let g = &sc.geometry;
    let prior = uniform_prior(&sc.data, g);
    let x0 = match cfg.init {
        Init::Prior => prior.clone(),
        Init::Zero => Image::zeros(g.grid_rows, g.grid_cols),
    };
    // the superiorized CG driver tests ½f, so it gets half the tolerance
    let eps = cfg.eps.map(|e| if alg == Algorithm::SupCg { e / 2.0 } else { e });
    let mut opts = match eps {
        Some(e) => RunOptions::new(e, cfg.max_iter),
        None => RunOptions::fixed_iterations(cfg.max_iter),
    };
    if let Some(m) = &sc.monitor {
        opts = opts.with_monitor(m);
    }
    let sup = || SuperiorizationParams::new(p.k, p.a, p.gamma);
    let precond = || FourierPreconditioner::new(&PreconditionerSpec::new(p.mu, p.rho, g.grid_rows, g.grid_cols)?);
    let art_params = || ArtParams::new(p.r, p.lambda, prior.clone());

    let result = match alg {
        Algorithm::Cg => cg(&system, &x0, &opts)?,
        Algorithm::Pcg => pcg(&system, &x0, &precond()?, &opts)?,
        Algorithm::SupCg => sup_cg(&system, &x0, &sup()?, &opts)?,
        Algorithm::SupPcg => sup_pcg(&system, &x0, &sup()?, &precond()?, &opts)?,
        Algorithm::SupTpcg => {
            let n = precond()?;
            let xhat0 = x0.with_data(n.apply_n_inv_t(x0.data()));
            let result = sup_tpcg(&system, &xhat0, &sup()?, &n, &opts)?;
            let image = result.x_out.with_data(n.apply_n(result.x_out.data()));
            return Ok(Reconstruction { result, image });
        }
        Algorithm::Art => art(&system, &art_params()?, &opts)?,
        Algorithm::SupArt => sup_art(&system, &art_params()?, &sup()?, &opts)?,
    };
    let image = result.x_out.clone();
    Ok(Reconstruction { result, image })
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(CliError::io_at(out))
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, text).map_err(CliError::io_at(&path))?;
    Ok(path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `phantom.{vec,hdr,pgm}`.
pub fn cmd_phantom(cfg: &Config, out: &Path) -> Result<Image, CliError> {
    let phantom = load_phantom(cfg)?;
    ensure_dir(out)?;
    io::save_vec(out, "phantom", VecKind::Image, &cfg.geometry, phantom.data())?;
    io::save_pgm(out, "phantom", &phantom)?;
    Ok(phantom)
}

/// Writes `sinogram.{vec,hdr}` and, on request, the projection matrix as
/// `matrix.csr`.
pub fn cmd_simulate(cfg: &Config, out: &Path, save_matrix: bool) -> Result<Vec<f64>, CliError> {
    if cfg.sinogram.is_some() {
        return Err(CliError::Config("`sinogram` is an input for reconstruct, not simulate".into()));
    }
    let sc = Scenario::build(cfg)?;
    ensure_dir(out)?;
    io::save_vec(out, "sinogram", VecKind::Sinogram, &sc.geometry, &sc.data)?;
    if save_matrix {
        let path = out.join("matrix.csr");
        let file = fs::File::create(&path).map_err(CliError::io_at(&path))?;
        sc.matrix.write_to(std::io::BufWriter::new(file))?;
    }
    Ok(sc.data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub argmin_k: Option<usize>,
    pub min_se: Option<f64>,
}

impl Summary {
    fn of(label: &str, rec: &Reconstruction) -> Self {
        let best = rec.best_se();
        Summary {
            label: label.to_string(),
            argmin_k: best.map(|b| b.0),
            min_se: best.map(|b| b.1),
        }
    }

    fn row(&self) -> String {
        format!(
            "{},{},{}",
            self.label,
            self.argmin_k.map(|k| k.to_string()).unwrap_or_default(),
            opt(self.min_se)
        )
    }

    fn parse(line: &str) -> Result<Self, CliError> {
        let bad = || CliError::Format(format!("bad summary row `{line}`"));
        let mut it = line.rsplitn(3, ',');
        let (se, k, label) = (it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?);
        Ok(Summary {
            label: label.to_string(),
            argmin_k: if k.is_empty() { None } else { Some(k.parse().map_err(|_| bad())?) },
            min_se: if se.is_empty() { None } else { Some(se.parse().map_err(|_| bad())?) },
        })
    }
}

pub struct ReconstructOutcome {
    pub status: RunStatus,
    pub k: usize,
    pub summary: Summary,
}

/// Writes `recon.{vec,hdr,pgm}`, `curve.csv` and `summary.csv`.
pub fn cmd_reconstruct(cfg: &Config, out: &Path) -> Result<ReconstructOutcome, CliError> {
    cfg.require_algorithm()?;
    let sc = Scenario::build(cfg)?;
    let rec = reconstruct(cfg, &sc)?;
    ensure_dir(out)?;
    io::save_vec(out, "recon", VecKind::Image, &sc.geometry, rec.image.data())?;
    io::save_pgm(out, "recon", &rec.image)?;
    write_text(out.join("curve.csv"), &io::format_curve(&rec.result.trace))?;
    let summary = Summary::of(&cfg.label, &rec);
    write_text(
        out.join("summary.csv"),
        &format!("{SUMMARY_VERSION}\n{SUMMARY_COLUMNS}\n{}\n", summary.row()),
    )?;
    Ok(ReconstructOutcome {
        status: rec.result.status,
        k: rec.result.k,
        summary,
    })
}

pub fn parse_summary(text: &str) -> Result<Vec<Summary>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_VERSION) || lines.next() != Some(SUMMARY_COLUMNS) {
        return Err(CliError::Format("not a supertomo summary".into()));
    }
    lines.map(Summary::parse).collect()
}

/// Parameter grids from the tuning protocol.
pub mod grids {
    pub const K: [usize; 3] = [10, 20, 40];
    pub const A: [f64; 5] = [1.0 - 1e-5, 1.0 - 1e-4, 1.0 - 1e-3, 1.0 - 1e-2, 1.0 - 1e-1];
    pub const GAMMA: [f64; 2] = [1e-2, 5e-2];
    pub const MU: [f64; 3] = [1e-5, 1e-4, 1e-3];
    pub const RHO: [f64; 3] = [0.4, 0.6, 0.8];
    pub const R: [f64; 2] = [5.0, 10.0];
    pub const LAMBDA: [f64; 5] = [1e-2, 5e-2, 1e-1, 5e-1, 1.0];
}

/// Grid lines covering every parameter combination for `alg`.
pub fn preset_grid(alg: Algorithm) -> Vec<String> {
    use grids::*;
    let mut lines = vec![format!("algorithm={alg}")];
    let mut expand = |parts: Vec<String>| {
        lines = lines
            .iter()
            .flat_map(|l| parts.iter().map(move |p| format!("{l} {p}")))
            .collect();
    };
    if alg.superiorized() {
        expand(K.iter().map(|v| format!("K={v}")).collect());
        expand(A.iter().map(|v| format!("a={v}")).collect());
        expand(GAMMA.iter().map(|v| format!("gamma={v}")).collect());
    }
    if alg.preconditioned() {
        expand(MU.iter().map(|v| format!("mu={v}")).collect());
        expand(RHO.iter().map(|v| format!("rho={v}")).collect());
    }
    if alg.row_action() {
        expand(R.iter().map(|v| format!("r={v}")).collect());
        expand(LAMBDA.iter().map(|v| format!("lambda={v}")).collect());
    }
    lines
}

/// Grid file lines: whitespace-separated `key=value` overrides, `#` comments.
pub fn parse_grid(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub rank: usize,
    /// 1-based position in the grid.
    pub entry: usize,
    pub min_se: f64,
    pub argmin_k: usize,
    pub parameters: String,
}

/// Runs every grid entry on the base scenario and ranks them by the smallest
/// selective error within the selection window. Equal errors keep grid order.
/// Writes `sweep.csv`.
pub fn cmd_sweep(base: &RawConfig, grid: &[String], out: &Path) -> Result<Vec<SweepRow>, CliError> {
    if grid.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let base_cfg = base.resolve()?;
    let mut entries = Vec::with_capacity(grid.len());
    for (i, line) in grid.iter().enumerate() {
        let mut raw = base.clone();
        for pair in line.split_whitespace() {
            let key = pair.split('=').next().unwrap_or("").trim();
            if !crate::config::is_run_key(key) {
                return Err(CliError::Config(format!(
                    "grid entry {}: `{key}` cannot vary within a sweep",
                    i + 1
                )));
            }
            raw.set(pair)
                .map_err(|e| CliError::Config(format!("grid entry {}: {e}", i + 1)))?;
        }
        let cfg = raw
            .resolve()
            .map_err(|e| CliError::Config(format!("grid entry {}: {e}", i + 1)))?;
        cfg.require_algorithm()
            .map_err(|e| CliError::Config(format!("grid entry {}: {e}", i + 1)))?;
        entries.push((cfg, line.split_whitespace().collect::<Vec<_>>().join(" ")));
    }
    let sc = Scenario::build(&base_cfg)?;
    if sc.monitor.is_none() {
        return Err(CliError::Config("phantom is zero on the SE mask, so a sweep cannot rank".into()));
    }
    let results: Vec<(usize, f64)> = entries
        .par_iter()
        .map(|(cfg, _)| {
            let rec = reconstruct(cfg, &sc)?;
            Ok(rec.best_se().expect("monitored run has SE"))
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows: Vec<SweepRow> = entries
        .into_iter()
        .zip(results)
        .enumerate()
        .map(|(i, ((_, parameters), (argmin_k, min_se)))| SweepRow {
            rank: 0,
            entry: i + 1,
            min_se,
            argmin_k,
            parameters,
        })
        .collect();
    rows.sort_by(|a, b| a.min_se.total_cmp(&b.min_se));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    ensure_dir(out)?;
    let mut text = format!("{SWEEP_VERSION}\nrank,entry,min_se,argmin_k,parameters\n");
    for r in &rows {
        let _ = writeln!(text, "{},{},{},{},{}", r.rank, r.entry, r.min_se, r.argmin_k, r.parameters);
    }
    write_text(out.join("sweep.csv"), &text)?;
    Ok(rows)
}

pub fn parse_sweep(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_VERSION) || lines.next() != Some("rank,entry,min_se,argmin_k,parameters") {
        return Err(CliError::Format("not a supertomo sweep table".into()));
    }
    lines
        .map(|l| {
            let bad = || CliError::Format(format!("bad sweep row `{l}`"));
            let f: Vec<&str> = l.splitn(5, ',').collect();
            let [rank, entry, se, k, params] = f[..] else { return Err(bad()) };
            Ok(SweepRow {
                rank: rank.parse().map_err(|_| bad())?,
                entry: entry.parse().map_err(|_| bad())?,
                min_se: se.parse().map_err(|_| bad())?,
                argmin_k: k.parse().map_err(|_| bad())?,
                parameters: params.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Long-format curves in config order.
    pub curves: Vec<(String, CurvePoint)>,
    pub summaries: Vec<Summary>,
}

impl Comparison {
    pub fn format(&self) -> String {
        let mut s = format!("{COMPARE_VERSION}\nalgorithm,{}\n", io::CURVE_COLUMNS);
        for (label, p) in &self.curves {
            let _ = writeln!(s, "{label},{},{},{},{},{}", p.k, p.seconds, p.f, p.tv, opt(p.se));
        }
        let _ = writeln!(s, "# summary\n{SUMMARY_COLUMNS}");
        for sm in &self.summaries {
            let _ = writeln!(s, "{}", sm.row());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        if lines.next() != Some(COMPARE_VERSION)
            || lines.next() != Some(format!("algorithm,{}", io::CURVE_COLUMNS).as_str())
        {
            return Err(CliError::Format("not a supertomo comparison".into()));
        }
        let mut curves = Vec::new();
        for line in lines.by_ref() {
            if line == "# summary" {
                break;
            }
            let fields: Vec<&str> = line.rsplitn(6, ',').collect();
            let [se, tv, f, seconds, k, label] = fields[..] else {
                return Err(CliError::Format(format!("bad comparison row `{line}`")));
            };
            curves.push((label.to_string(), io::parse_curve_fields(&[k, seconds, f, tv, se])?));
        }
        if lines.next() != Some(SUMMARY_COLUMNS) {
            return Err(CliError::Format("comparison lacks its summary block".into()));
        }
        let summaries = lines.map(Summary::parse).collect::<Result<_, _>>()?;
        Ok(Comparison { curves, summaries })
    }
}

/// Runs each config on a shared phantom and writes `compare.csv`.
///
/// Duplicate labels get a `-2`, `-3`, … suffix so the long format stays
/// unambiguous.
pub fn cmd_compare(configs: &[Config], out: &Path) -> Result<Comparison, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    let first = &configs[0];
    let phantom = load_phantom(first)?;
    for (i, cfg) in configs.iter().enumerate().skip(1) {
        if cfg.geometry != first.geometry {
            return Err(CliError::Config(format!("config {} uses a different geometry", i + 1)));
        }
        if load_phantom(cfg)? != phantom {
            return Err(CliError::Config(format!("config {} uses a different phantom", i + 1)));
        }
    }
    for cfg in configs {
        cfg.require_algorithm()?;
    }
    let matrix = build_projection_matrix(&first.geometry)?;
    let mut comparison = Comparison {
        curves: Vec::new(),
        summaries: Vec::new(),
    };
    let mut seen: Vec<String> = Vec::new();
    for cfg in configs {
        let sc = Scenario::with_matrix(cfg, phantom.clone(), matrix.clone())?;
        let rec = reconstruct(cfg, &sc)?;
        let copies = seen.iter().filter(|l| **l == cfg.label).count();
        seen.push(cfg.label.clone());
        let label = if copies == 0 {
            cfg.label.clone()
        } else {
            format!("{}-{}", cfg.label, copies + 1)
        };
        comparison
            .curves
            .extend(rec.result.trace.iter().map(|t| (label.clone(), CurvePoint::from(t))));
        comparison.summaries.push(Summary::of(&label, &rec));
    }
    ensure_dir(out)?;
    write_text(out.join("compare.csv"), &comparison.format())?;
    Ok(comparison)
}
