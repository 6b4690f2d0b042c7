//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use ridgefuse::classify::{cer, qda_predict_batch, ModelParams};
use ridgefuse::estimator::{class_stats, fit, PenaltyPair, Standardization};
use ridgefuse::semisup::{fit_em, semisup_grid_search, EmReport, SemiData};
use ridgefuse::sim::{
    run_qda_experiment, run_semisup_experiment, Design, Method, SimConfig, SimResult,
};
use ridgefuse::tuning::{grid_search_with, GridSpec, HeldOutCentering, ScoreTable};
use ridgefuse::Error;

use crate::data::read_dataset;
use crate::model::ModelFile;
use crate::{
    resolve_seed, with_jobs, ClassifyArgs, CliError, ClusterArgs, FitArgs, SimulateArgs, TuneArgs,
};

fn parse_penalty(
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda2_inf: bool,
) -> Result<PenaltyPair, CliError> {
    let l1 = lambda1.ok_or_else(|| CliError::input("--lambda1 is required"))?;
    if lambda2_inf {
        return Ok(PenaltyPair::infinite_fusion(l1)?);
    }
    let l2 = lambda2.ok_or_else(|| CliError::input("--lambda2 (or --lambda2-inf) is required"))?;
    Ok(PenaltyPair::new(l1, l2)?)
}

fn parse_grid(
    grid1: Option<Vec<f64>>,
    grid2: Option<Vec<String>>,
    full_grid: bool,
) -> Result<GridSpec, CliError> {
    let default = if full_grid {
        GridSpec::half_decades(-10, 10)?
    } else {
        GridSpec::decades(-5, 5)?
    };
    let lambda1 = grid1.unwrap_or_else(|| default.lambda1_values().to_vec());
    let lambda2 = match grid2 {
        None => default.lambda2_values().to_vec(),
        Some(raw) => raw
            .iter()
            .map(|s| {
                if s.eq_ignore_ascii_case("inf") {
                    Ok(f64::INFINITY)
                } else {
                    s.parse::<f64>()
                        .map_err(|_| CliError::input(format!("grid value `{s}` is not numeric")))
                }
            })
            .collect::<Result<Vec<f64>, CliError>>()?,
    };
    Ok(GridSpec::new(lambda1, lambda2)?)
}

fn format_lambda2(l2: f64) -> String {
    if l2.is_infinite() {
        "inf".to_string()
    } else {
        format!("{l2}")
    }
}

pub fn fit_cmd_core(args: &FitArgs) -> Result<(ModelFile, usize, f64), CliError> {
    let dataset = read_dataset(&args.data)?;
    let y = dataset.complete_labels()?;
    let pen = parse_penalty(Some(args.lambda1), args.lambda2, args.lambda2_inf)?;

    let (features, standardization) = if args.standardize {
        let s = Standardization::fit(&dataset.features)?;
        (s.apply(&dataset.features), Some(s))
    } else {
        (dataset.features.clone(), None)
    };
    let stats = class_stats(&features, &y)?;
    let report = fit(&stats, &pen, None, args.eps)?;
    let params = ModelParams::from_stats(&stats, &report.precisions)?;
    let file = ModelFile::build(&params, &pen, None, standardization.as_ref(), true);
    Ok((file, report.iterations, report.final_objective))
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let (file, iterations, objective) = fit_cmd_core(&args)?;
    file.write(&args.out)?;
    println!("fit: converged in {iterations} sweeps, objective {objective}");
    println!("model written to {}", args.out.display());
    Ok(())
}

fn write_score_table(path: &Path, table: &ScoreTable) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["lambda1", "lambda2", "score"])
        .map_err(|e| CliError::input(e.to_string()))?;
    for entry in &table.entries {
        let score = entry.score.map(|s| format!("{s}")).unwrap_or_default();
        writer
            .write_record([
                format!("{}", entry.lambda1),
                format_lambda2(entry.lambda2),
                score,
            ])
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

pub fn tune(args: TuneArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.data)?;
    let y = dataset.complete_labels()?;
    let grid = parse_grid(args.grid1.clone(), args.grid2.clone(), false)?;
    let seed = resolve_seed(args.seed)?;
    let centering = if args.train_centering {
        HeldOutCentering::TrainingMean
    } else {
        HeldOutCentering::HeldOutMean
    };
    let (best, table) = with_jobs(args.jobs, || {
        Ok(grid_search_with(
            &dataset.features,
            &y,
            &grid,
            args.folds,
            seed,
            args.eps,
            centering,
        )?)
    })?;
    write_score_table(&args.out, &table)?;
    println!(
        "selected lambda1={} lambda2={}",
        best.lambda1(),
        format_lambda2(best.lambda2())
    );
    println!("score table written to {}", args.out.display());
    Ok(())
}

pub fn classify(args: ClassifyArgs) -> Result<(), CliError> {
    let file = ModelFile::read(&args.model)?;
    let params = file.params()?;
    let dataset = read_dataset(&args.data)?;
    if dataset.dim() != file.dim {
        return Err(CliError::input(format!(
            "model expects {} features but the data has {}",
            file.dim,
            dataset.dim()
        )));
    }
    let features = match file.standardization()? {
        Some(s) => s.apply(&dataset.features),
        None => dataset.features.clone(),
    };
    let preds = qda_predict_batch(&features, &params);

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path)
                .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "prediction")?;
    for &p in &preds {
        writeln!(out, "{}", p + 1)?;
    }
    out.flush()?;

    if args.truth {
        let truth = dataset.complete_labels()?;
        let rate = cer(&preds, &truth)?;
        println!("CER: {rate}");
    }
    Ok(())
}

fn default_alpha_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    name.push_str(".alpha.csv");
    out.with_file_name(name)
}

fn write_responsibilities(
    path: &Path,
    report: &EmReport,
    unlabeled_ids: &[usize],
) -> Result<(), CliError> {
    let alpha = report.responsibilities.alpha();
    let assigned = report.responsibilities.assignments();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["row".to_string()];
    for c in 0..alpha.ncols() {
        header.push(format!("alpha_{}", c + 1));
    }
    header.push("assigned".to_string());
    writer
        .write_record(&header)
        .map_err(|e| CliError::input(e.to_string()))?;
    for i in 0..alpha.nrows() {
        let mut record = vec![format!("{}", unlabeled_ids[i])];
        for c in 0..alpha.ncols() {
            record.push(format!("{}", alpha[(i, c)]));
        }
        record.push(format!("{}", assigned[i] + 1));
        writer
            .write_record(&record)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

pub fn cluster(args: ClusterArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.data)?;
    let (lx, ly, ux, unlabeled_ids) = dataset.split_semi()?;
    let data = SemiData::new(lx, ly, ux)?;
    let seed = resolve_seed(args.seed)?;

    let pen = if args.tune {
        let grid = parse_grid(args.grid1.clone(), args.grid2.clone(), false)?;
        let (best, _) = with_jobs(args.jobs, || {
            Ok(semisup_grid_search(
                &data, &grid, args.folds, seed, args.eps_em, args.eps,
            )?)
        })?;
        println!(
            "selected lambda1={} lambda2={}",
            best.lambda1(),
            format_lambda2(best.lambda2())
        );
        best
    } else {
        parse_penalty(args.lambda1, args.lambda2, args.lambda2_inf)?
    };

    let alpha_path = args
        .alpha_out
        .clone()
        .unwrap_or_else(|| default_alpha_path(&args.out));
    match fit_em(&data, &pen, args.eps_em, args.eps) {
        Ok(report) => {
            let file = ModelFile::build(&report.params, &pen, Some(seed), None, true);
            file.write(&args.out)?;
            write_responsibilities(&alpha_path, &report, &unlabeled_ids)?;
            println!(
                "cluster: converged in {} EM iterations; model written to {}",
                report.iterations,
                args.out.display()
            );
            Ok(())
        }
        Err(Error::EmNotConverged { report }) => {
            // Keep the partial state on disk, flagged, and fail loudly.
            let file = ModelFile::build(&report.params, &pen, Some(seed), None, false);
            file.write(&args.out)?;
            write_responsibilities(&alpha_path, &report, &unlabeled_ids)?;
            Err(CliError {
                code: 3,
                message: format!(
                    "EM did not converge within {} iterations; partial model written to {}",
                    report.iterations,
                    args.out.display()
                ),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_design(name: &str) -> Result<Design, CliError> {
    match name {
        "eigstruct" => Ok(Design::Eigstruct),
        "eig-vs-tridiag" => Ok(Design::EigVsTridiag),
        "identity" => Ok(Design::Identity),
        "blockdiag" => Ok(Design::Blockdiag),
        "tridiag" => Ok(Design::Tridiag),
        "semisup" => Ok(Design::Semisup),
        other => Err(CliError::input(format!(
            "unknown design `{other}` (expected eigstruct, eig-vs-tridiag, identity, blockdiag, tridiag, or semisup)"
        ))),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for name in names {
        match name.as_str() {
            "ridge" => methods.push(Method::Ridge),
            "rda" => methods.push(Method::Rda),
            other => {
                return Err(CliError::input(format!(
                    "unknown method `{other}` (expected ridge or rda)"
                )))
            }
        }
    }
    Ok(methods)
}

fn write_sim_csv(path: &Path, result: &SimResult) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["method", "replication", "cer"])
        .map_err(|e| CliError::input(e.to_string()))?;
    for m in &result.methods {
        for (rep, c) in m.cers.iter().enumerate() {
            writer
                .write_record([m.method.clone(), format!("{rep}"), format!("{c}")])
                .map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let design = parse_design(&args.design)?;
    let seed = resolve_seed(args.seed)?;
    let mut cfg = SimConfig::new(design, args.p, args.reps, seed)?;
    cfg.n_train_per_class = args.train_per_class;
    cfg.n_test_per_class = args.test_per_class;
    cfg.n_unlabeled_per_class = args.unlabeled_per_class;
    cfg.folds = args.folds;
    cfg.rho = args.rho;
    cfg.ridge_grid = parse_grid(args.grid1.clone(), args.grid2.clone(), args.full_grid)?;

    let result = with_jobs(args.jobs, || {
        Ok(if design == Design::Semisup {
            run_semisup_experiment(&cfg)?
        } else {
            run_qda_experiment(&cfg, &parse_methods(&args.methods)?)?
        })
    })?;

    println!(
        "design={} p={} reps={} seed={}",
        design.name(),
        args.p,
        args.reps,
        seed
    );
    println!("{:<16} {:>10} {:>10} {:>10}", "method", "mean_cer", "sd", "se");
    for m in &result.methods {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4}",
            m.method, m.mean_cer, m.sd_cer, m.se_cer
        );
    }
    if let Some(path) = &args.out {
        write_sim_csv(path, &result)?;
        println!("per-replication results written to {}", path.display());
    }
    Ok(())
}
