//! The five subcommands. Each reads only its inputs, writes only below the
//! output directory and finishes by writing the run manifest.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use mfamd::data::{merge_rare_levels, standardize, write_merge_log, LoadOptions};
use mfamd::diagnostics::{
    adjusted_rand_index, continuous_residuals, flag_shifted_residuals, ks_test_standard_normal, latent_residuals,
    membership_summary, rand_index, write_membership, write_metrics, write_residuals,
};
use mfamd::identify::{write_relabeling, write_rotations};
use mfamd::model::{fit_with_observer, Progress};
use mfamd::select::{cell_seed, grid_search_with_observer, write_scores};
use mfamd::simulate::{generate, recovery_scenario, write_truth, TrueModel};
use mfamd::store::{read_store, write_store, StoreManifest};
use mfamd::varsel::write_trace;
use mfamd::{load_csv, FitResult, MixedDataset, Schema};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Resolved;
use crate::manifest::{OutputDir, RunManifest};
use crate::CliError;

/// Prints one `key=value` progress line to stderr every `every` sweeps.
fn heartbeat(command: &str, every: u64, g: usize, q: usize, p: &Progress) {
    if every > 0 && p.iteration.is_multiple_of(every) {
        eprintln!(
            "heartbeat command={command} G={g} Q={q} phase={} iteration={} retained={}",
            p.phase, p.iteration, p.retained
        );
    }
}

fn csv_table<const K: usize>(header: &[&str; K], rows: &[[String; K]]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn load_input(run: &Resolved) -> Result<(MixedDataset, Schema), CliError> {
    let schema = Schema::from_path(run.schema_path()?)?;
    let loaded = load_csv(run.data_path()?, &schema, &run.config.input.load)?;
    if loaded.dropped_rows > 0 {
        log::info!("dropped {} incomplete row(s)", loaded.dropped_rows);
    }
    for d in &loaded.dropped_variables {
        log::info!("dropped variable {}: {}", d.name, d.reason);
    }
    Ok((loaded.dataset, schema))
}

pub fn preprocess(run: &Resolved) -> Result<RunManifest, CliError> {
    let data = run.data_path()?;
    let schema_path = run.schema_path()?;
    let mut out = OutputDir::create(&run.output_dir, &[data, schema_path])?;
    let schema = Schema::from_path(schema_path)?;
    let loaded = out.time_step("load", || load_csv(data, &schema, &run.config.input.load))?;
    let mut ds = loaded.dataset;

    let mut merge_log = Vec::new();
    if let Some(threshold) = run.config.preprocess.merge_threshold {
        let (merged, log) = merge_rare_levels(&ds, threshold)?;
        ds = merged;
        merge_log = log;
    }
    out.write_with("merge_log.csv", |w| write_merge_log(&merge_log, w))?;

    let dropped: Vec<[String; 2]> = loaded
        .dropped_variables
        .iter()
        .map(|d| [d.name.clone(), d.reason.clone()])
        .collect();
    out.write("dropped_variables.csv", &csv_table(&["variable", "reason"], &dropped))?;

    if run.config.preprocess.standardize && ds.n_continuous() > 0 {
        let (scaled, transform) = standardize(&ds)?;
        ds = scaled;
        let rows: Vec<[String; 3]> = (0..transform.names.len())
            .map(|c| {
                [
                    transform.names[c].clone(),
                    transform.means[c].to_string(),
                    transform.sds[c].to_string(),
                ]
            })
            .collect();
        out.write("standardization.csv", &csv_table(&["variable", "mean", "sd"], &rows))?;
    }

    out.write_with("data.csv", |w| ds.write_csv(w))?;
    out.write("schema.toml", ds.written_schema().to_toml_string().as_bytes())?;

    let mut summary = BTreeMap::new();
    summary.insert("n_obs".into(), ds.n_obs().to_string());
    summary.insert("n_variables".into(), ds.n_variables().to_string());
    summary.insert("dropped_rows".into(), loaded.dropped_rows.to_string());
    summary.insert("merged_variables".into(), merge_log.len().to_string());
    out.finish("preprocess", run.seed, &run.canonical_toml(), summary)
}

pub fn simulate(run: &Resolved) -> Result<RunManifest, CliError> {
    let sim_cfg = &run.config.simulate;
    let inputs: Vec<&Path> = sim_cfg.truth_model.as_deref().into_iter().collect();
    let mut out = OutputDir::create(&run.output_dir, &inputs)?;
    let tm = match &sim_cfg.truth_model {
        Some(p) => TrueModel::from_path(p)?,
        None => recovery_scenario(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let sim = out.time_step("generate", || generate(&tm, sim_cfg.n_obs, &mut rng))?;

    out.write_with("data.csv", |w| sim.dataset.write_csv(w))?;
    out.write("schema.toml", sim.dataset.written_schema().to_toml_string().as_bytes())?;
    out.write_with("truth.csv", |w| write_truth(&sim, w))?;
    out.write("truth_model.toml", tm.to_toml_string().as_bytes())?;

    let mut summary = BTreeMap::new();
    summary.insert("n_obs".into(), sim.dataset.n_obs().to_string());
    summary.insert("groups".into(), tm.groups().to_string());
    summary.insert("factors".into(), tm.factors.to_string());
    summary.insert("noise_variables".into(), sim.noise_variables.join(" "));
    out.finish("simulate", run.seed, &run.canonical_toml(), summary)
}

/// Writes the dataset as fitted, the sample store and the per-fit tables
/// under `prefix`.
fn write_fit_artifacts(
    out: &mut OutputDir,
    prefix: &str,
    ds: &MixedDataset,
    result: &FitResult,
    seed: u64,
    run: &Resolved,
) -> Result<(), CliError> {
    out.write_with(&format!("{prefix}dataset.csv"), |w| ds.write_csv(w))?;
    out.write(
        &format!("{prefix}schema.toml"),
        ds.written_schema().to_toml_string().as_bytes(),
    )?;

    let retained = result.retained.iter().map(|&j| ds.variable(j).name.clone()).collect();
    let manifest = StoreManifest::new(&result.samples, seed, &run.config.model.schedule, retained);
    let rel = format!("{prefix}samples");
    let dir = out.subdir(&rel)?;
    write_store(&dir, &result.samples, &manifest)?;
    out.record_dir(&rel)?;

    out.write_with(&format!("{prefix}membership.csv"), |w| {
        write_membership(&result.membership, ds.row_ids(), w)
    })?;
    out.write_with(&format!("{prefix}varsel_trace.csv"), |w| {
        write_trace(&result.varsel_trace, w)
    })?;
    out.write_with(&format!("{prefix}relabeling.csv"), |w| {
        write_relabeling(&result.relabeling, w)
    })?;
    out.write_with(&format!("{prefix}rotations.csv"), |w| {
        write_rotations(&result.rotation, w)
    })?;
    out.write_with(&format!("{prefix}score.csv"), |w| {
        write_scores(std::slice::from_ref(&result.score), w)
    })?;
    Ok(())
}

fn fit_summary(ds: &MixedDataset, result: &FitResult) -> BTreeMap<String, String> {
    let s = &result.score;
    let mut m = BTreeMap::new();
    m.insert("G".into(), s.groups.to_string());
    m.insert("Q".into(), s.factors.to_string());
    m.insert("max_loglik".into(), s.max_loglik.to_string());
    m.insert("nu".into(), s.nu.to_string());
    m.insert("bic_mcmc".into(), s.bic_mcmc.to_string());
    m.insert("n_draws".into(), result.samples.n_draws().to_string());
    let names: Vec<&str> = result.retained.iter().map(|&j| ds.variable(j).name.as_str()).collect();
    m.insert("retained".into(), names.join(" "));
    m
}

pub fn fit(run: &Resolved) -> Result<RunManifest, CliError> {
    let (g, q) = run.single_cell()?;
    let mut out = OutputDir::create(&run.output_dir, &[run.data_path()?, run.schema_path()?])?;
    let (ds, _) = out.time_step("load", || load_input(run))?;
    let config = run.config.fit_config(g, q);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let every = run.heartbeat_every;
    let result = out.time_step("fit", || {
        fit_with_observer(&ds, &config, &mut rng, &mut |p| heartbeat("fit", every, g, q, p))
    })?;
    write_fit_artifacts(&mut out, "", &ds, &result, run.seed, run)?;
    let summary = fit_summary(&ds, &result);
    out.finish("fit", run.seed, &run.canonical_toml(), summary)
}

pub fn select(run: &Resolved) -> Result<RunManifest, CliError> {
    let mut out = OutputDir::create(&run.output_dir, &[run.data_path()?, run.schema_path()?])?;
    let (ds, _) = out.time_step("load", || load_input(run))?;
    let model = &run.config.model;
    let base = run.config.fit_config(model.groups[0], model.factors[0]);
    let every = run.heartbeat_every;
    let grid = out.time_step("grid", || {
        grid_search_with_observer(
            &ds,
            &model.groups,
            &model.factors,
            &base,
            run.seed,
            run.workers,
            &|g, q, p| heartbeat("select", every, g, q, p),
        )
    })?;
    out.write_with("scores.csv", |w| write_scores(&grid.scores, w))?;
    let failures: Vec<[String; 3]> = grid
        .failures
        .iter()
        .map(|f| [f.groups.to_string(), f.factors.to_string(), f.reason.clone()])
        .collect();
    out.write("failures.csv", &csv_table(&["G", "Q", "reason"], &failures))?;
    let best = grid
        .best
        .as_ref()
        .ok_or_else(|| CliError::Failed("every grid cell failed; see failures.csv".into()))?;
    let seed = cell_seed(run.seed, best.groups, best.factors);
    write_fit_artifacts(&mut out, "best/", &ds, best, seed, run)?;
    let mut summary = fit_summary(&ds, best);
    summary.insert("best_seed".into(), seed.to_string());
    summary.insert("failed_cells".into(), grid.failures.len().to_string());
    out.finish("select", run.seed, &run.canonical_toml(), summary)
}

/// `id -> 0-based cluster` from a truth sidecar.
fn read_truth(path: &Path) -> Result<HashMap<String, usize>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: no `{name}` column", path.display())))
    };
    let (id_col, cluster_col) = (col("id")?, col("cluster")?);
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cluster: usize = rec[cluster_col]
            .trim()
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| CliError::Config(format!("{}: bad cluster `{}`", path.display(), &rec[cluster_col])))?;
        map.insert(rec[id_col].to_string(), cluster - 1);
    }
    Ok(map)
}

pub fn diagnose(run: &Resolved) -> Result<RunManifest, CliError> {
    let fit_dir = run
        .config
        .diagnose
        .fit_dir
        .clone()
        .ok_or_else(|| CliError::Config("diagnose.fit_dir: required (or pass --fit-dir)".into()))?;
    let schema_path = fit_dir.join("schema.toml");
    let data_path = fit_dir.join("dataset.csv");
    let store_manifest = fit_dir.join("samples").join(mfamd::store::MANIFEST);
    let mut inputs: Vec<&Path> = vec![&schema_path, &data_path, &store_manifest];
    if let Some(t) = run.config.input.truth.as_deref() {
        inputs.push(t);
    }
    let mut out = OutputDir::create(&run.output_dir, &inputs)?;

    let schema = Schema::from_path(&schema_path)?;
    let exact = LoadOptions {
        max_missing_per_categorical: None,
        drop_unobserved_levels: false,
    };
    let ds = load_csv(&data_path, &schema, &exact)?.dataset;
    let (samples, _) = out.time_step("read", || read_store(&fit_dir.join("samples")))?;
    if samples.n_obs != ds.n_obs() {
        return Err(CliError::Failed(format!(
            "sample store has {} observations, dataset has {}",
            samples.n_obs,
            ds.n_obs()
        )));
    }

    let membership = membership_summary(&samples)?;
    out.write_with("membership.csv", |w| write_membership(&membership, ds.row_ids(), w))?;

    let strict = run.config.flags.divide_residuals_by_psi;
    let cont = continuous_residuals(&samples, &ds, strict);
    let lat = latent_residuals(&samples);
    let n_rows = run
        .config
        .diagnose
        .max_residual_rows
        .unwrap_or(ds.n_obs())
        .min(ds.n_obs());
    let subset: Vec<usize> = (0..n_rows).collect();
    out.write_with("residuals_continuous.csv", |w| write_residuals(&cont, &ds, &subset, w))?;
    out.write_with("residuals_latent.csv", |w| write_residuals(&lat, &ds, &subset, w))?;

    let flags = flag_shifted_residuals(&lat, run.config.diagnose.flag_threshold);
    let owners = ds.layout().owners();
    let rows: Vec<[String; 5]> = flags
        .iter()
        .map(|f| {
            let j = owners[f.dim];
            [
                ds.row_ids()[f.obs].clone(),
                ds.variable(j).name.clone(),
                (f.dim - ds.layout().slot(j).offset + 1).to_string(),
                f.mean.to_string(),
                f.sd.to_string(),
            ]
        })
        .collect();
    out.write(
        "residual_flags.csv",
        &csv_table(&["id", "variable", "component", "mean", "sd"], &rows),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut metrics: Vec<(&str, f64)> = Vec::new();
    metrics.push(("n_draws", samples.n_draws() as f64));
    metrics.push((
        "mean_uncertainty",
        membership.uncertainty.iter().sum::<f64>() / ds.n_obs() as f64,
    ));
    metrics.push((
        "max_uncertainty",
        membership.uncertainty.iter().cloned().fold(0.0, f64::max),
    ));
    for (name, cube) in [("continuous", &cont), ("latent", &lat)] {
        if cube.dims.is_empty() || cube.n_draws == 0 {
            continue;
        }
        let ks = ks_test_standard_normal(&cube.pooled_sample(&mut rng));
        let (d, p) = if name == "continuous" {
            ("ks_continuous_statistic", "ks_continuous_p_value")
        } else {
            ("ks_latent_statistic", "ks_latent_p_value")
        };
        metrics.push((d, ks.statistic));
        metrics.push((p, ks.p_value));
    }
    metrics.push(("flagged_latent_cells", flags.len() as f64));

    if let Some(truth_path) = run.config.input.truth.as_deref() {
        let truth = read_truth(truth_path)?;
        let reference = ds
            .row_ids()
            .iter()
            .map(|id| {
                truth
                    .get(id)
                    .copied()
                    .ok_or_else(|| CliError::Config(format!("{}: no row for id `{id}`", truth_path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        metrics.push(("rand_index", rand_index(&membership.hard, &reference)?));
        metrics.push((
            "adjusted_rand_index",
            adjusted_rand_index(&membership.hard, &reference)?,
        ));
    }
    out.write_with("metrics.csv", |w| write_metrics(&metrics, w))?;

    let mut summary = BTreeMap::new();
    for (k, v) in &metrics {
        summary.insert(k.to_string(), v.to_string());
    }
    summary.insert("fit_dir".into(), fit_dir.display().to_string());
    out.finish("diagnose", run.seed, &run.canonical_toml(), summary)
}
