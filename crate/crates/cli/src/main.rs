use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use specmm::distances::{
    gh_family_estimate, hausdorff_l2, kk_distance, kk_grid, mgh_approx_eps, spec_distances, Budget,
    MapSource,
};
use specmm::embed::{default_tail_tol, embed_i, embed_phi};
use specmm::mmspace::{make_cycle, make_point, make_product, FiniteMMS, GeneratorSpec};
use specmm::reconstruct::{isomorphism_verdict, Thresholds};
use specmm::spectral::{cluster_multiplicities, spectral_data, spectrum_csv, EXACT_CLUSTER_TOL};
use specmm::{Error, Result};
use specmm_cli::report::{emit_report, Format, Node};
use specmm_cli::scenarios::run_scenario;
use specmm_cli::{ScenarioConfig, ScenarioName};

/// Spectral geometry of finite metric measure spaces.
#[derive(Parser, Debug)]
#[command(name = "specmm", version)]
struct Cli {
    /// JSON configuration (scenario config, or generator spec for `generate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output formats, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<String>,
    #[arg(long, global = true)]
    budget_inner: Option<usize>,
    #[arg(long, global = true)]
    budget_outer: Option<usize>,
    #[arg(long, global = true)]
    t: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated space as JSON.
    Generate {
        /// `radius,count`
        #[arg(long, value_delimiter = ',')]
        cycle: Option<Vec<f64>>,
        /// `r1,n1,r2,n2`
        #[arg(long, value_delimiter = ',')]
        torus: Option<Vec<f64>>,
        #[arg(long)]
        point: Option<f64>,
        /// File stem for `--out`.
        #[arg(long, default_value = "space")]
        name: String,
    },
    /// Eigenvalues with cluster ids.
    Spectrum {
        space: PathBuf,
        #[arg(long, default_value_t = EXACT_CLUSTER_TOL)]
        cluster_tol: f64,
    },
    /// Embedded point cloud with its sidecar.
    Embed {
        space: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::I)]
        variant: VariantArg,
        /// Absolute tail tolerance; defaults to 1e-9 times the cloud diameter.
        #[arg(long)]
        tail_tol: Option<f64>,
    },
    /// Distances between two spaces.
    Dist {
        x: PathBuf,
        y: PathBuf,
        #[arg(long, value_enum, default_value_t = DistKind::Spec)]
        kind: DistKind,
    },
    /// Heat-kernel distance between two spaces.
    Kk {
        x: PathBuf,
        y: PathBuf,
        #[arg(long, value_enum, default_value_t = MapsArg::Chart)]
        maps: MapsArg,
    },
    /// Recover a map and decide isomorphism up to measure scale.
    Reconstruct { x: PathBuf, y: PathBuf },
    /// Run a scenario and write its reports.
    Scenario {
        /// Scenario name when no `--config` is given.
        name: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    I,
    Phi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DistKind {
    Spec,
    Hausdorff,
    Gh,
    Mgh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapsArg {
    Chart,
    Embedding,
}

enum Outcome {
    Ok,
    Failed(Vec<String>),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = std::env::var("SPECMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global();
    }
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(lines)) => {
            for l in lines {
                eprintln!("FAILED {l}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Accepts a saved space or a generator spec.
fn load_space(path: &Path) -> Result<FiniteMMS> {
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str::<GeneratorSpec>(&text) {
        Ok(spec) => spec.build(),
        Err(_) => FiniteMMS::from_json(&text),
    }
}

fn budget(cli: &Cli, base: Budget) -> Budget {
    Budget {
        inner: cli.budget_inner.unwrap_or(base.inner),
        outer: cli.budget_outer.unwrap_or(base.outer),
    }
}

fn formats(cli: &Cli, default: &[Format]) -> Result<Vec<Format>> {
    if cli.format.is_empty() {
        return Ok(default.to_vec());
    }
    let mut f = cli
        .format
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<Format>>>()?;
    f.sort();
    f.dedup();
    Ok(f)
}

/// Writes `(name, text)` pairs into `--out`, or prints them.
fn deliver(cli: &Cli, files: Vec<(String, String)>) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for (name, text) in files {
                let path = dir.join(&name);
                std::fs::write(&path, text)?;
                println!("{}", path.display());
            }
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            for (_, text) in files {
                match out.write_all(text.as_bytes()) {
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    r => r?,
                }
            }
        }
    }
    Ok(())
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    Ok(Node::from_serialize(value)?.render())
}

fn run(cli: &Cli) -> Result<Outcome> {
    let t = cli.t.unwrap_or(1.0);
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Generate {
            cycle,
            torus,
            point,
            name,
        } => {
            let space =
                match (cycle, torus, point, &cli.config) {
                    (Some(c), None, None, None) if c.len() == 2 => make_cycle(c[0], c[1] as usize)?,
                    (None, Some(v), None, None) if v.len() == 4 => make_product(
                        &make_cycle(v[0], v[1] as usize)?,
                        &make_cycle(v[2], v[3] as usize)?,
                    )?,
                    (None, None, Some(m), None) => make_point(*m)?,
                    (None, None, None, Some(path)) => {
                        serde_json::from_str::<GeneratorSpec>(&std::fs::read_to_string(path)?)?
                            .build()?
                    }
                    _ => return Err(Error::Contract(
                        "give exactly one of --cycle r,n, --torus r1,n1,r2,n2, --point c, --config"
                            .into(),
                    )),
                };
            deliver(cli, vec![(format!("{name}.json"), space.to_json()? + "\n")])?;
        }
        Command::Spectrum { space, cluster_tol } => {
            let sd = spectral_data(&load_space(space)?)?;
            let table = cluster_multiplicities(&sd, *cluster_tol);
            let mut files = Vec::new();
            for f in formats(cli, &[Format::Csv])? {
                match f {
                    Format::Csv => files.push(("spectrum.csv".into(), spectrum_csv(&sd, &table))),
                    Format::Json => {
                        let doc = serde_json::json!({
                            "lambdas": sd.lambdas().as_slice(),
                            "mus": table.mus,
                            "nus": table.nus,
                            "cluster_tol": table.cluster_tol,
                        });
                        files.push(("spectrum.json".into(), Node::from_value(&doc).render()));
                    }
                    Format::Svg => {
                        return Err(Error::Contract("spectrum has no svg output".into()))
                    }
                }
            }
            deliver(cli, files)?;
        }
        Command::Embed {
            space,
            variant,
            tail_tol,
        } => {
            let sd = spectral_data(&load_space(space)?)?;
            let cloud = match variant {
                VariantArg::I => {
                    embed_i(&sd, t, tail_tol.unwrap_or_else(|| default_tail_tol(&sd, t)))?
                }
                VariantArg::Phi => embed_phi(&sd, t)?,
            };
            deliver(
                cli,
                vec![
                    ("cloud.csv".into(), cloud.to_csv()),
                    ("cloud.json".into(), cloud.sidecar_json() + "\n"),
                ],
            )?;
        }
        Command::Dist { x, y, kind } => {
            let (x, y) = (load_space(x)?, load_space(y)?);
            let text = match kind {
                DistKind::Spec => {
                    let d = spec_distances(&x, &y, t, budget(cli, Budget::default()), seed)?;
                    json(&[&d.spec, &d.lower, &d.forward, &d.backward])?
                }
                DistKind::Hausdorff => {
                    let (sx, sy) = (spectral_data(&x)?, spectral_data(&y)?);
                    let a = embed_i(&sx, t, default_tail_tol(&sx, t))?;
                    let b = embed_i(&sy, t, default_tail_tol(&sy, t))?;
                    let value = hausdorff_l2(&a, &b)?;
                    json(
                        &serde_json::json!({ "value": value, "kind": "hausdorff", "t": t, "tail_radius": a.tail_sup + b.tail_sup }),
                    )?
                }
                DistKind::Gh => json(&gh_family_estimate(&x, &y)?)?,
                DistKind::Mgh => {
                    let f = specmm::distances::chart_map(&x, &y).ok_or_else(|| {
                        Error::Contract("both spaces need charts for a family map".into())
                    })?;
                    json(&mgh_approx_eps(&f, &x, &y)?)?
                }
            };
            deliver(cli, vec![("distance.json".into(), text)])?;
        }
        Command::Kk { x, y, maps } => {
            let (x, y) = (load_space(x)?, load_space(y)?);
            let source = match maps {
                MapsArg::Chart => MapSource::Chart,
                MapsArg::Embedding => MapSource::FromEmbedding {
                    t,
                    inner: budget(cli, Budget::default()).inner,
                    seed,
                },
            };
            deliver(
                cli,
                vec![(
                    "kk.json".into(),
                    json(&kk_distance(&x, &y, &kk_grid(), source)?)?,
                )],
            )?;
        }
        Command::Reconstruct { x, y } => {
            let (x, y) = (load_space(x)?, load_space(y)?);
            let v = isomorphism_verdict(
                &x,
                &y,
                t,
                Thresholds::default(),
                budget(cli, Budget::default()),
                seed,
            )?;
            deliver(
                cli,
                vec![
                    ("verdict.json".into(), json(&v)?),
                    ("map.csv".into(), v.map.to_csv()),
                ],
            )?;
        }
        Command::Scenario { name } => {
            let mut cfg = match (&cli.config, name) {
                (Some(path), _) => ScenarioConfig::load(path)?,
                (None, Some(name)) => {
                    let scenario = ScenarioName::ALL
                        .into_iter()
                        .find(|s| s.as_str() == name)
                        .ok_or_else(|| Error::Contract(format!("unknown scenario `{name}`")))?;
                    ScenarioConfig::preset(scenario, seed)
                }
                (None, None) => {
                    return Err(Error::Contract("give a scenario name or --config".into()))
                }
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.t.is_some() {
                cfg.t = cli.t;
            }
            cfg.budget = budget(cli, cfg.budget);
            let dir = cli
                .out
                .clone()
                .or(cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.scenario.as_str()));
            let outcome = run_scenario(&cfg)?;
            for f in formats(cli, &[Format::Csv, Format::Json, Format::Svg])? {
                for path in emit_report(&outcome, f, &dir)? {
                    println!("{}", path.display());
                }
            }
            for c in &outcome.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "ok    " } else { "FAILED" },
                    c.name,
                    c.detail
                );
            }
            if !outcome.passed() {
                return Ok(Outcome::Failed(
                    outcome
                        .failures()
                        .map(|c| format!("{}: {}: {}", outcome.name, c.name, c.detail))
                        .collect(),
                ));
            }
        }
    }
    Ok(Outcome::Ok)
}
