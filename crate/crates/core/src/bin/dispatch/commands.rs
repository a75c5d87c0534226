use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dispatch_core::batch::{control_columns, format_timestamp, input_columns, read_control, BatchTable};
use dispatch_core::datagen::{
    dataset_stats, ingest_files, label_dataset, read_dataset, realistic_profiles, sample_synthetic,
    split, write_dataset, write_stats, LabeledDataset, TimeSeriesTable,
};
use dispatch_core::eval::{emit_comparison_plots, report_table, Metrics, ModelPredictor, OracleReplay, ReportEntry};
use dispatch_core::grid::{validate, Grid, GridError};
use dispatch_core::nn::{Checkpoint, Family, TrainedModel};
use dispatch_core::orpd::solve_orpd;
use dispatch_core::pipeline::{
    display_name, evaluate_to, family_name, read_json, require_path, run_chain, search_family, train_family, write_json,
    ManifestBuilder, PipelineError, RunConfig,
};
use dispatch_core::powerflow::{solve_pf, ControlVector, InputVector, PfError, PfOptions};

use super::{Command, DataCmd, GridArg, GridCmd, OrpdCmd, PfCmd};

type Result<T> = std::result::Result<T, PipelineError>;

fn grid_path(arg: &GridArg, cfg: &RunConfig) -> Result<PathBuf> {
    require_path(arg.grid.as_ref().or(cfg.paths.grid.as_ref()), "grid file")
}

fn load_grid(arg: &GridArg, cfg: &RunConfig, m: &mut ManifestBuilder) -> Result<Grid> {
    let path = grid_path(arg, cfg)?;
    m.input("grid", &path);
    Ok(dispatch_core::grid::parse_grid_file(&path)?)
}

fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    require_path(flag.as_ref().or(cfg.as_ref()), what)
}

fn read_inputs(path: &Path, grid: &Grid) -> Result<Vec<InputVector>> {
    Ok(BatchTable::read(path)?.to_inputs(grid)?)
}

fn read_nominal(path: &Path, grid: &Grid) -> Result<InputVector> {
    read_inputs(path, grid)?
        .into_iter()
        .next()
        .ok_or_else(|| PipelineError::Data(dispatch_core::datagen::DataError::Invalid(format!("{} has no rows", path.display()))))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(PipelineError::io(path))
}

pub fn run(command: Command, mut cfg: RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(PipelineError::io(&out))?;
    match command {
        Command::Grid(GridCmd::Validate { grid, print }) => {
            let mut m = ManifestBuilder::new("grid validate");
            let path = grid_path(&grid, &cfg)?;
            m.input("grid", &path);
            let text = std::fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let parsed: Grid = serde_path_to_error::deserialize(de).map_err(|e| GridError::Schema {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?;
            let report = validate(&parsed);
            let target = out.join("validation.json");
            write_json(&target, &report)?;
            m.artifact(&target).finish(&out)?;
            if print {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            if !report.is_empty() {
                return Err(GridError::Semantic(report).into());
            }
            log::info!("grid {} is valid", path.display());
        }

        Command::Pf(PfCmd::Run { grid, inputs, controls }) => {
            let mut m = ManifestBuilder::new("pf run");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let xs = match inputs.as_ref().or(cfg.paths.inputs.as_ref()) {
                Some(p) => {
                    let p = require_path(Some(p), "input table")?;
                    m.input("inputs", &p);
                    read_inputs(&p, &g)?
                }
                None => vec![InputVector::zeros(g.n_buses())],
            };
            let ys = match controls.as_ref().or(cfg.paths.controls.as_ref()) {
                Some(p) => {
                    let p = require_path(Some(p), "control table")?;
                    m.input("controls", &p);
                    let ys = BatchTable::read(&p)?.to_controls(&g)?;
                    if ys.len() != xs.len() {
                        return Err(PipelineError::Config(format!("{} control rows for {} input rows", ys.len(), xs.len())));
                    }
                    ys
                }
                None => vec![ControlVector::nominal(&g); xs.len()],
            };
            let stamps = dispatch_core::batch::synthetic_timestamps(&xs);
            let mut text = String::from("timestamp,converged,iterations,residual,p_loss");
            for b in 0..g.n_buses() {
                write!(text, ",vm_{b},va_{b}").unwrap();
            }
            text.push('\n');
            let mut failures = 0;
            for ((x, y), ts) in xs.iter().zip(&ys).zip(&stamps) {
                let sol = solve_pf(&g, x, y, &PfOptions::default())?;
                if !sol.converged {
                    failures += 1;
                }
                write!(text, "{},{},{},{:e},{}", format_timestamp(ts), sol.converged, sol.iterations, sol.residual_norm, sol.p_loss).unwrap();
                for v in &sol.voltages {
                    write!(text, ",{},{}", v.norm(), v.arg()).unwrap();
                }
                text.push('\n');
            }
            let target = out.join("pf_solution.csv");
            write_text(&target, &text)?;
            m.artifact(&target).finish(&out)?;
            if failures > 0 {
                log::error!("{failures} of {} power flows did not converge", xs.len());
                return Err(PfError::NotConverged.into());
            }
        }

        Command::Orpd(OrpdCmd::Solve { grid, inputs, seed }) => {
            let mut m = ManifestBuilder::new("orpd solve");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&inputs, &cfg.paths.inputs, "input table")?;
            m.input("inputs", &p);
            if let Some(s) = seed {
                cfg.orpd.seed = s;
            }
            m.seed("orpd", cfg.orpd.seed);
            let xs = read_inputs(&p, &g)?;
            let stamps = dispatch_core::batch::synthetic_timestamps(&xs);
            let keys = control_columns(&g);
            let mut text = String::from("timestamp");
            for k in &keys {
                write!(text, ",{k}").unwrap();
            }
            text.push_str(",p_loss,converged,feasible_at,iterations,kkt_stationarity\n");
            let mut unconverged = 0;
            for (x, ts) in xs.iter().zip(&stamps) {
                let sol = solve_orpd(&g, x, &cfg.orpd)?;
                unconverged += usize::from(!sol.converged);
                write!(text, "{}", format_timestamp(ts)).unwrap();
                for &k in &keys {
                    write!(text, ",{}", read_control(&sol.y_star, k)).unwrap();
                }
                let feas = sol.feasible_at.map(|r| r.to_string()).unwrap_or_default();
                writeln!(text, ",{},{},{feas},{},{:e}", sol.p_loss, sol.converged, sol.iterations, sol.kkt_stationarity).unwrap();
            }
            let target = out.join("orpd_solution.csv");
            write_text(&target, &text)?;
            m.artifact(&target).finish(&out)?;
            if unconverged > 0 {
                log::warn!("{unconverged} of {} instances flagged as not converged", xs.len());
            }
        }

        Command::Data(DataCmd::Synth { grid, nominal, count, spread, seed }) => {
            let mut m = ManifestBuilder::new("data synth");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&nominal, &cfg.paths.nominal, "nominal profile")?;
            m.input("nominal", &p);
            let count = count.unwrap_or(cfg.synth.count);
            let spread = spread.unwrap_or(cfg.synth.spread);
            let seed = seed.unwrap_or(cfg.synth.seed);
            if !(0.0..1.0).contains(&spread) {
                return Err(PipelineError::Config(format!("spread {spread} outside [0, 1)")));
            }
            m.seed("synth", seed);
            let xs = sample_synthetic(&g, &read_nominal(&p, &g)?, count, spread, seed);
            let target = out.join("inputs.csv");
            BatchTable::from_inputs(&g, &xs).write(&target)?;
            m.artifact(&target).finish(&out)?;
            log::info!("wrote {count} instances to {}", target.display());
        }

        Command::Data(DataCmd::Ingest { grid, generation, load, stride }) => {
            let mut m = ManifestBuilder::new("data ingest");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let gen = pick(&generation, &cfg.paths.generation, "generation table")?;
            let ld = pick(&load, &cfg.paths.load, "load table")?;
            m.input("generation", &gen).input("load", &ld);
            let (table, report) = ingest_files(&gen, &ld, &g)?;
            let table = table.every(stride.unwrap_or(cfg.ingest.stride).max(1));
            let target = out.join("inputs.csv");
            table.to_batch(g.base_mva).write(&target)?;
            let rep = out.join("ingest_report.json");
            write_json(&rep, &report)?;
            m.artifact(&target).artifact(&rep).finish(&out)?;
            log::info!("ingested {} aligned hours", table.len());
        }

        Command::Data(DataCmd::Realistic { grid, nominal, hours, seed }) => {
            let mut m = ManifestBuilder::new("data realistic");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&nominal, &cfg.paths.nominal, "nominal profile")?;
            m.input("nominal", &p);
            let mut opts = cfg.realistic.clone();
            if let Some(h) = hours {
                opts.hours = h;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            m.seed("realistic", opts.seed);
            let (gen, load) = realistic_profiles(&g, &read_nominal(&p, &g)?, &opts);
            let (gp, lp) = (out.join("generation.csv"), out.join("load.csv"));
            gen.write(&gp)?;
            load.write(&lp)?;
            m.artifact(&gp).artifact(&lp).finish(&out)?;
        }

        Command::Data(DataCmd::Label { grid, inputs }) => {
            let mut m = ManifestBuilder::new("data label");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&inputs, &cfg.paths.inputs, "input table")?;
            m.input("inputs", &p).seed("orpd", cfg.orpd.seed);
            let xs = read_inputs(&p, &g)?;
            let t = Instant::now();
            let ds = label_dataset(&g, &xs, &cfg.orpd);
            m.timing("label", t.elapsed().as_secs_f64());
            let target = out.join("labeled.csv");
            write_dataset(&target, &g, &ds)?;
            m.artifact(&target).finish(&out)?;
        }

        Command::Data(DataCmd::Split { grid, dataset, scheme, fractions, seed }) => {
            let mut m = ManifestBuilder::new("data split");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&dataset, &cfg.paths.dataset, "dataset")?;
            m.input("dataset", &p);
            if let Some(s) = scheme {
                cfg.split.scheme = s.into();
            }
            if let Some(f) = fractions {
                cfg.split.fractions = [f[0], f[1], f[2]];
            }
            if let Some(s) = seed {
                cfg.split.seed = s;
            }
            m.seed("split", cfg.split.seed);
            let ds = split(&g, &read_dataset(&p, &g)?, cfg.split.scheme(), cfg.split.seed)?;
            let target = out.join("dataset.csv");
            write_dataset(&target, &g, &ds)?;
            m.artifact(&target).finish(&out)?;
        }

        Command::Data(DataCmd::Stats { grid, inputs, bins }) => {
            let mut m = ManifestBuilder::new("data stats");
            let g = load_grid(&grid, &cfg, &mut m)?;
            let p = pick(&inputs, &cfg.paths.inputs, "input table")?;
            m.input("inputs", &p);
            let xs = read_inputs(&p, &g)?;
            let columns = input_columns(&g);
            let table = TimeSeriesTable {
                timestamps: dispatch_core::batch::synthetic_timestamps(&xs),
                values: xs.iter().map(|x| columns.iter().map(|&k| dispatch_core::batch::read_input(x, k)).collect()).collect(),
                columns,
            };
            let dir = out.join("stats");
            write_stats(&dir, &dataset_stats(&table, bins.unwrap_or(cfg.ingest.histogram_bins)))?;
            m.artifact(&dir).finish(&out)?;
        }

        Command::Train(args) => {
            let family: Family = args.family.into();
            let mut m = ManifestBuilder::new(&format!("train {}", family_name(family)));
            let g = load_grid(&args.grid, &cfg, &mut m)?;
            let p = pick(&args.dataset, &cfg.paths.dataset, "dataset")?;
            m.input("dataset", &p);
            if let Some(s) = args.seed {
                cfg.train.seed = s;
            }
            if let Some(e) = args.max_epochs {
                cfg.train.max_epochs = e;
            }
            m.seed("train", cfg.train.seed).seed("init", cfg.init_seed);
            let ds = read_dataset(&p, &g)?;
            let (_, report, path) = train_family(&g, &ds, &cfg, family, &out)?;
            let rep = out.join(format!("train_report_{}.json", family_name(family)));
            write_json(&rep, &report)?;
            m.artifact(&path).artifact(&rep).finish(&out)?;
        }

        Command::Hyper(args) => {
            let family: Family = args.family.into();
            let mut m = ManifestBuilder::new(&format!("hyper {}", family_name(family)));
            let g = load_grid(&args.grid, &cfg, &mut m)?;
            let p = pick(&args.dataset, &cfg.paths.dataset, "dataset")?;
            m.input("dataset", &p);
            if let Some(b) = args.budget {
                cfg.hyper.budget = b;
            }
            if let Some(s) = args.seed {
                cfg.hyper.seed = s;
            }
            m.seed("hyper", cfg.hyper.seed);
            let ds = read_dataset(&p, &g)?;
            let path = search_family(&g, &ds, &cfg, family, &out)?;
            m.artifact(&path).finish(&out)?;
        }

        Command::Eval(args) => {
            let mut m = ManifestBuilder::new("eval");
            let g = load_grid(&args.grid, &cfg, &mut m)?;
            let p = pick(&args.dataset, &cfg.paths.dataset, "dataset")?;
            m.input("dataset", &p);
            let ds = read_dataset(&p, &g)?;
            let (_, path) = match &args.model {
                Some(model) => {
                    let model = require_path(Some(model), "model checkpoint")?;
                    m.input("model", &model);
                    let ck = Checkpoint::load(&model)?;
                    let name = args.name.clone().unwrap_or_else(|| display_name(ck.config.family).into());
                    let predictor = ModelPredictor { name, model: TrainedModel::from_checkpoint(&ck, &g)? };
                    evaluate_to(&predictor, &g, &ds, &cfg.eval, &out)?
                }
                None => evaluate_to(&OracleReplay, &g, &ds, &cfg.eval, &out)?,
            };
            m.artifact(&path).finish(&out)?;
        }

        Command::Report(args) => {
            let mut m = ManifestBuilder::new("report");
            let mut loaded: Vec<(String, Metrics)> = Vec::new();
            for spec in &args.metrics {
                let (path, regime) = match spec.split_once('=') {
                    Some((p, r)) => (PathBuf::from(p), r.to_string()),
                    None => (PathBuf::from(spec), cfg.regime.clone()),
                };
                let path = require_path(Some(&path), "metrics file")?;
                m.input(&format!("metrics{}", loaded.len()), &path);
                loaded.push((regime, read_json(&path)?));
            }
            let entries: Vec<ReportEntry> = loaded.iter().map(|(r, mm)| ReportEntry { regime: r, metrics: mm }).collect();
            let table = report_table(&entries);
            table.write(&out)?;
            if args.print {
                print!("{}", table.text);
            }
            m.artifact(&out.join("report.txt")).artifact(&out.join("report.json")).finish(&out)?;
        }

        Command::Plot(args) => {
            let mut m = ManifestBuilder::new("plot");
            let path = require_path(Some(&args.metrics), "metrics file")?;
            m.input("metrics", &path);
            let metrics: Metrics = read_json(&path)?;
            for s in emit_comparison_plots(&metrics, &args.outputs, out.join("plots"))? {
                m.artifact(&s.csv).artifact(&s.svg);
            }
            m.finish(&out)?;
        }

        Command::Pipeline(args) => {
            let mut m = ManifestBuilder::new("pipeline inputs");
            let g = load_grid(&args.grid, &cfg, &mut m)?;
            if let Some(r) = args.regime {
                cfg.regime = r;
            }
            let generation = args.generation.or(cfg.paths.generation.clone());
            let load = args.load.or(cfg.paths.load.clone());
            let xs = match (generation, load) {
                (Some(gen), Some(ld)) => {
                    let (gen, ld) = (require_path(Some(&gen), "generation table")?, require_path(Some(&ld), "load table")?);
                    m.input("generation", &gen).input("load", &ld);
                    let (table, _) = ingest_files(&gen, &ld, &g)?;
                    table.every(cfg.ingest.stride.max(1)).to_inputs(&g)
                }
                _ => {
                    let p = pick(&args.nominal, &cfg.paths.nominal, "nominal profile")?;
                    m.input("nominal", &p).seed("synth", cfg.synth.seed);
                    let count = args.count.unwrap_or(cfg.synth.count);
                    sample_synthetic(&g, &read_nominal(&p, &g)?, count, cfg.synth.spread, cfg.synth.seed)
                }
            };
            let target = out.join("inputs.csv");
            BatchTable::from_inputs(&g, &xs).write(&target)?;
            m.artifact(&target).finish(&out)?;
            let outcome = run_chain(&g, &xs, &cfg, &out)?;
            log_summary(&outcome.dataset, &outcome.metrics);
            eprint!("{}", outcome.report.text);
        }
    }
    Ok(())
}

fn log_summary(ds: &LabeledDataset, metrics: &[Metrics]) {
    let mf = ds.manifest();
    log::info!("{} rows, {} labeled, split {}/{}/{}", mf.rows, mf.converged, mf.train, mf.val, mf.test);
    for mm in metrics {
        log::info!("{}: mae_v {:.2e}, feasible {:.1}%", mm.model, mm.mae_v, mm.feas_pct);
    }
}
