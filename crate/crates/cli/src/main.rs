use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kg2d::diagnostics::{
    csv_header, csv_row, decay_profile, diagnostics_row, growth_report, profile_norm,
    GrowthReport, ProfileTracker,
};
use kg2d::model::{builtin_systems, fmt_rat, parse_system, serialize_system};
use kg2d::normalform::{classify_resonance, decompose, degenerate_images, residual_doc, NormalFormError};
use kg2d::nullcheck::check_null;
use kg2d::spectral::{Grid, InitialData, RunRecord, SimConfig};
use kg2d::QuadraticSystem;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 2;
const EXIT_NEGATIVE: u8 = 10;
const EXIT_BLOWUP: u8 = 11;

#[derive(Parser)]
#[command(name = "kg2d", version, about = "Null-condition analysis and simulation of 2D quadratic Klein-Gordon systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide the null condition for a system file (JSON); prints the verdict.
    Check { file: PathBuf },
    /// Normal-form decomposition of a system file; prints Λ and N or a non-null certificate.
    Decompose { file: PathBuf },
    /// Print the resonance classification (all six A_jkl) for a system's masses.
    Resonance { file: PathBuf },
    /// Run one simulation from a JSON config; writes CSVs + manifest to the output root.
    Simulate {
        config: PathBuf,
        /// Output root (overrides $KG2D_OUT; default ./kg2d-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a matrix of simulations (ε and/or dt lists) concurrently; prints the aggregate table.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent cells (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Write the builtin system files into a directory.
    Builtin { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Check { file } => cmd_check(&file),
        Cmd::Decompose { file } => cmd_decompose(&file),
        Cmd::Resonance { file } => cmd_resonance(&file),
        Cmd::Simulate { config, out } => cmd_simulate(&config, out),
        Cmd::Sweep { config, out, jobs } => cmd_sweep(&config, out, jobs),
        Cmd::Builtin { dir } => cmd_builtin(&dir),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn read_system(path: &Path) -> Result<QuadraticSystem, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_system(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn cmd_check(file: &Path) -> Result<u8, String> {
    let sys = read_system(file)?;
    let verdict = check_null(&sys).map_err(|e| e.to_string())?;
    print_json(&verdict.to_doc());
    Ok(if verdict.is_null { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_decompose(file: &Path) -> Result<u8, String> {
    let sys = read_system(file)?;
    match decompose(&sys) {
        Ok(d) => {
            print_json(&d.to_doc());
            Ok(EXIT_OK)
        }
        Err(NormalFormError::NotNull { residual }) => {
            #[derive(Serialize)]
            struct NotNullDoc {
                not_null: bool,
                residual: Vec<kg2d::normalform::LambdaTermDoc>,
            }
            print_json(&NotNullDoc { not_null: true, residual: residual_doc(&residual) });
            Ok(EXIT_NEGATIVE)
        }
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Serialize)]
struct MatrixDoc {
    j: u8,
    k: u8,
    l: u8,
    entries: [[String; 2]; 2],
    det: String,
    invertible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<[String; 2]>,
}

fn cmd_resonance(file: &Path) -> Result<u8, String> {
    let sys = read_system(file)?;
    let masses = sys.masses();
    let matrices: Vec<MatrixDoc> = classify_resonance(masses)
        .into_iter()
        .map(|m| MatrixDoc {
            j: m.j,
            k: m.k,
            l: m.l,
            entries: [
                [fmt_rat(&m.entries[0][0]), fmt_rat(&m.entries[0][1])],
                [fmt_rat(&m.entries[1][0]), fmt_rat(&m.entries[1][1])],
            ],
            det: fmt_rat(&m.det),
            invertible: m.invertible,
            p: m.p.map(|(a, b)| [fmt_rat(&a), fmt_rat(&b)]),
        })
        .collect();
    #[derive(Serialize)]
    struct ResonanceDoc {
        masses: [String; 2],
        resonant: bool,
        matrices: Vec<MatrixDoc>,
        #[serde(skip_serializing_if = "Option::is_none")]
        degenerate_images: Option<[[String; 2]; 2]>,
    }
    let images = if masses.is_resonant() {
        let (a, b) = degenerate_images(masses).map_err(|e| e.to_string())?;
        Some([
            [fmt_rat(&a[0]), fmt_rat(&a[1])],
            [fmt_rat(&b[0]), fmt_rat(&b[1])],
        ])
    } else {
        None
    };
    print_json(&ResonanceDoc {
        masses: [fmt_rat(masses.m1()), fmt_rat(masses.m2())],
        resonant: masses.is_resonant(),
        matrices,
        degenerate_images: images,
    });
    Ok(EXIT_OK)
}

fn cmd_builtin(dir: &Path) -> Result<u8, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    for (name, sys) in builtin_systems() {
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serialize_system(&sys)).map_err(|e| e.to_string())?;
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

// ----- simulation configs -----

fn default_true() -> bool {
    true
}
fn default_cadence() -> usize {
    10
}
fn default_blowup() -> f64 {
    1e3
}
fn default_sweeps() -> usize {
    1
}
fn default_sobolev() -> Vec<u32> {
    vec![2]
}

#[derive(Clone, Serialize, Deserialize)]
struct GridDoc {
    n: usize,
    length: f64,
}

/// JSON simulation config. The system comes from exactly one of
/// `builtin` (by name), `system_file` (path relative to the config), or
/// `system` (inline system document).
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfigDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system: Option<serde_json::Value>,
    grid: GridDoc,
    dt: f64,
    t_end: f64,
    data: InitialData,
    #[serde(default = "default_true")]
    dealias: bool,
    #[serde(default = "default_cadence")]
    cadence: usize,
    #[serde(default = "default_blowup")]
    blowup_factor: f64,
    #[serde(default = "default_sweeps")]
    sweeps: usize,
    /// Sobolev orders recorded in the diagnostics CSV.
    #[serde(default = "default_sobolev")]
    sobolev: Vec<u32>,
}

impl SimConfigDoc {
    fn resolve_system(&self, config_dir: &Path) -> Result<QuadraticSystem, String> {
        let sources =
            self.builtin.is_some() as u8 + self.system_file.is_some() as u8 + self.system.is_some() as u8;
        if sources != 1 {
            return Err("config must set exactly one of builtin, system_file, system".into());
        }
        if let Some(name) = &self.builtin {
            return builtin_systems()
                .remove(name)
                .ok_or_else(|| format!("unknown builtin system {name:?}"));
        }
        if let Some(rel) = &self.system_file {
            return read_system(&config_dir.join(rel));
        }
        let inline = self.system.as_ref().unwrap();
        parse_system(&inline.to_string()).map_err(|e| e.to_string())
    }

    fn to_sim_config(&self, config_dir: &Path) -> Result<SimConfig, String> {
        let system = self.resolve_system(config_dir)?;
        let grid = Grid::new(self.grid.n, self.grid.length).map_err(|e| e.to_string())?;
        let config = SimConfig {
            system,
            grid,
            dt: self.dt,
            t_end: self.t_end,
            data: self.data.clone(),
            dealias: self.dealias,
            cadence: self.cadence,
            blowup_factor: self.blowup_factor,
            sweeps: self.sweeps,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    config_sha256: String,
    system_sha256: String,
    created_unix: u64,
    outputs: Vec<String>,
}

fn sha_hex(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    format!("{:x}", h.finalize())
}

#[derive(Serialize)]
struct RunSummary {
    record: RunRecord,
    growth: GrowthReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_exponent: Option<f64>,
    initial_energy: f64,
    final_energy: f64,
}

/// Executes one resolved config, writing diagnostics.csv, profiles.csv
/// and run.json into `outdir`. Returns the summary.
fn execute_run(config: &SimConfig, doc: &SimConfigDoc, outdir: &Path) -> Result<RunSummary, String> {
    std::fs::create_dir_all(outdir).map_err(|e| e.to_string())?;
    let grid = config.grid.clone();
    let masses = config.masses_f64();
    let center = config.data.center(&grid);
    let orders = doc.sobolev.clone();

    let mut rows = Vec::new();
    let mut diag_csv = String::from(&csv_header(&orders));
    diag_csv.push('\n');
    let mut prof_csv = String::from("time,profile_norm,cauchy_gap\n");
    let mut tracker = ProfileTracker::new(masses);

    let record = kg2d::spectral::run(config, |state| {
        let profile = tracker.update(&grid, state);
        let mut row = diagnostics_row(&grid, state, masses, center, &orders);
        row.cauchy_gap = profile.cauchy_gap;
        diag_csv.push_str(&csv_row(&row));
        diag_csv.push('\n');
        let gap = if profile.cauchy_gap.is_nan() {
            String::new()
        } else {
            format!("{:.12e}", profile.cauchy_gap)
        };
        prof_csv.push_str(&format!(
            "{},{:.12e},{}\n",
            state.time,
            profile_norm(&grid, &profile, masses),
            gap
        ));
        rows.push(row);
    })
    .map_err(|e| e.to_string())?;

    let growth = growth_report(&rows, 2.0);
    let fit_window: Vec<_> = rows
        .iter()
        .filter(|r| r.time >= config.t_end / 8.0 && r.time > 0.0)
        .cloned()
        .collect();
    let summary = RunSummary {
        record,
        growth,
        decay_exponent: decay_profile(&fit_window).ok(),
        initial_energy: rows.first().map(|r| r.energy).unwrap_or(0.0),
        final_energy: rows.last().map(|r| r.energy).unwrap_or(0.0),
    };

    std::fs::write(outdir.join("diagnostics.csv"), diag_csv).map_err(|e| e.to_string())?;
    std::fs::write(outdir.join("profiles.csv"), prof_csv).map_err(|e| e.to_string())?;
    std::fs::write(
        outdir.join("run.json"),
        serde_json::to_string_pretty(&summary).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;
    Ok(summary)
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("KG2D_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("kg2d-out"))
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_simulate(config_path: &Path, out: Option<PathBuf>) -> Result<u8, String> {
    let text = std::fs::read_to_string(config_path).map_err(|e| format!("{}: {e}", config_path.display()))?;
    let doc: SimConfigDoc =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", config_path.display()))?;
    let dir = config_dir(config_path);
    let config = doc.to_sim_config(&dir)?;

    let run_name = doc
        .name
        .clone()
        .or_else(|| config_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    let outdir = out_root(out).join(&run_name);
    let summary = execute_run(&config, &doc, &outdir)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha_hex(text.as_bytes()),
        system_sha256: sha_hex(serialize_system(&config.system).as_bytes()),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        outputs: ["diagnostics.csv", "profiles.csv", "run.json", "manifest.json"]
            .iter()
            .map(|f| outdir.join(f).display().to_string())
            .collect(),
    };
    std::fs::write(
        outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;

    let blew_up = summary.record.blew_up;
    print_json(&summary);
    eprintln!("outputs in {}", outdir.display());
    Ok(if blew_up { EXIT_BLOWUP } else { EXIT_OK })
}

// ----- sweeps -----

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    base: SimConfigDoc,
    #[serde(default)]
    epsilon: Option<Vec<f64>>,
    #[serde(default)]
    dt: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SweepCell {
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_sweep(config_path: &Path, out: Option<PathBuf>, jobs: usize) -> Result<u8, String> {
    let text = std::fs::read_to_string(config_path).map_err(|e| format!("{}: {e}", config_path.display()))?;
    let doc: SweepDoc =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", config_path.display()))?;
    let dir = config_dir(config_path);
    let sweep_name = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    let root = out_root(out).join(&sweep_name);
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;

    let eps_axis: Vec<Option<f64>> = match &doc.epsilon {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let dt_axis: Vec<Option<f64>> = match &doc.dt {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut cells: Vec<(Option<f64>, Option<f64>, SimConfigDoc, PathBuf)> = Vec::new();
    for &e in &eps_axis {
        for &h in &dt_axis {
            let mut cell_doc = doc.base.clone();
            if let Some(eps) = e {
                match &mut cell_doc.data {
                    InitialData::Gaussian { epsilon, .. } => *epsilon = eps,
                    InitialData::Zero => return Err("epsilon sweep needs gaussian data".into()),
                }
            }
            if let Some(dt) = h {
                cell_doc.dt = dt;
            }
            let label = format!(
                "cell{}{}",
                e.map(|v| format!("-eps{v}")).unwrap_or_default(),
                h.map(|v| format!("-dt{v}")).unwrap_or_default()
            );
            cells.push((e, h, cell_doc, root.join(label)));
        }
    }
    if doc.epsilon.as_deref() == Some(&[]) || doc.dt.as_deref() == Some(&[]) {
        cells.clear();
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| e.to_string())?;
    let results: Vec<SweepCell> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|(e, h, cell_doc, cell_dir)| {
                let outcome = cell_doc
                    .to_sim_config(&dir)
                    .and_then(|config| execute_run(&config, cell_doc, cell_dir));
                match outcome {
                    Ok(summary) => SweepCell {
                        epsilon: *e,
                        dt: *h,
                        dir: cell_dir.display().to_string(),
                        summary: Some(summary),
                        error: None,
                    },
                    Err(err) => SweepCell {
                        epsilon: *e,
                        dt: *h,
                        dir: cell_dir.display().to_string(),
                        summary: None,
                        error: Some(err),
                    },
                }
            })
            .collect()
    });

    #[derive(Serialize)]
    struct SweepOut {
        cells: Vec<SweepCell>,
    }
    let table = SweepOut { cells: results };
    std::fs::write(
        root.join("sweep.json"),
        serde_json::to_string_pretty(&table).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;
    print_json(&table);
    Ok(EXIT_OK)
}
