use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use grpiv::estimators::{first_stage_seed, second_stage_seed};
use grpiv::first_stage::{combine_dynamic_instruments, InstrumentWeights};
use grpiv::sim::{gen_dgp, render_text, run_monte_carlo, write_csv, DgpConfig, McCell, McReport, McSpec, McTask, Metric, TableId};
use grpiv::{
    estimate as run_estimate, first_difference, load_panel, save_panel, select_groups as run_select, EstimatorConfig,
    GfeOptions, ICResult, Method, PanelData, PanelSchema, Penalty, SelectionOptions, Transform,
};

use crate::args::{DataArgs, EstimateArgs, ReplicateArgs, SelectArgs, SimulateArgs};
use crate::config::merge;
use crate::CliError;

type Res<T> = Result<T, CliError>;

fn parse<T: std::str::FromStr<Err = grpiv::Error>>(v: Option<&str>, default: &str) -> Res<T> {
    Ok(v.unwrap_or(default).parse::<T>()?)
}

fn out_dir(out: &Option<PathBuf>) -> Res<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("cannot create `{}`: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> Res<()> {
    fs::write(path, contents).map_err(|e| CliError::usage(format!("cannot write `{}`: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Res<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::usage(format!("cannot write `{}`: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::usage(format!("cannot write `{}`: {e}", path.display()))
}

fn write_manifest(dir: &Path, command: &str, config: &impl Serialize, extra: serde_json::Value) -> Res<()> {
    let mut m = json!({
        "tool": "grpiv",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (m.as_object_mut(), extra) {
        obj.extend(more);
    }
    let text = serde_json::to_string_pretty(&m).expect("serializable");
    write_file(&dir.join("manifest.json"), text.as_bytes())
}

fn schema(d: &DataArgs, path: &Path) -> Res<Option<PanelSchema>> {
    let custom = d.unit_col.is_some() || d.period_col.is_some() || d.y_col.is_some();
    if !custom && d.x_cols.is_none() && d.z_cols.is_none() {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read `{}`: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::usage(format!("cannot read `{}`: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let inferred = PanelSchema::infer(&header);
    Ok(Some(PanelSchema {
        unit: d.unit_col.clone().unwrap_or(inferred.unit),
        period: d.period_col.clone().unwrap_or(inferred.period),
        y: d.y_col.clone().unwrap_or(inferred.y),
        x: d.x_cols.clone().unwrap_or(inferred.x),
        z: d.z_cols.clone().unwrap_or(inferred.z),
    }))
}

/// Difference the panel and instrument period `t` of the differences with
/// the regressor levels of periods `0..=t-1` of the original panel.
fn dynamic_instruments(levels: &PanelData) -> Res<PanelData> {
    let fd = first_difference(levels)?;
    let (n, t, d) = fd.x().dim();
    let x = levels.x();
    let z_by_period: Vec<Array2<f64>> = (0..t)
        .map(|s| Array2::from_shape_fn((n, (s + 1) * d), |(i, c)| x[[i, c / d, c % d]]))
        .collect();
    let (z, _) = combine_dynamic_instruments(&z_by_period, fd.x(), &InstrumentWeights::CrossSectional)?;
    let names = fd.x_names().iter().map(|n| format!("iv_{n}")).collect();
    Ok(fd.with_instruments(z, names)?)
}

struct Prepared {
    panel: PanelData,
    transform: Transform,
    gfe: GfeOptions,
    time_effects: bool,
}

fn prepare(d: &DataArgs) -> Res<Prepared> {
    let path = d.data.as_ref().ok_or_else(|| CliError::usage("--data is required"))?;
    if !path.is_file() {
        return Err(CliError::usage(format!("data file `{}` does not exist", path.display())));
    }
    let raw = load_panel(path, schema(d, path)?.as_ref())?;
    let transform: Transform = parse(d.transform.as_deref(), "none")?;
    let panel = if d.dynamic_iv.unwrap_or(false) {
        if transform == Transform::Within {
            return Err(CliError::usage("--dynamic-iv works on first differences; drop --transform within"));
        }
        dynamic_instruments(&raw)?
    } else {
        transform.apply(&raw)?
    };
    let defaults = GfeOptions::default();
    let gfe = GfeOptions {
        n_starts: d.starts.unwrap_or(defaults.n_starts),
        max_iter: d.max_iter.unwrap_or(defaults.max_iter),
        seed: d.seed.unwrap_or(0),
        ..defaults
    };
    if gfe.n_starts == 0 {
        return Err(CliError::usage("--starts must be at least 1"));
    }
    Ok(Prepared {
        panel,
        transform,
        gfe,
        time_effects: d.time_effects.unwrap_or(false),
    })
}

fn panel_info(p: &Prepared) -> serde_json::Value {
    let (n, t, d, m) = p.panel.dims();
    json!({
        "panel": {"n": n, "t": t, "d": d, "m": m, "x": p.panel.x_names(), "z": p.panel.z_names()},
        "seeds": {
            "seed": p.gfe.seed,
            "first_stage": first_stage_seed(p.gfe.seed),
            "second_stage": second_stage_seed(p.gfe.seed),
        },
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn estimate(flags: &EstimateArgs, verbose: u8) -> Res<()> {
    let a = merge(flags, flags.config.as_deref())?;
    let method: Method = a
        .method
        .as_deref()
        .ok_or_else(|| CliError::usage("--method is required (2sls, tgfe, ugfe, ig or rf)"))?
        .parse()?;
    let prep = prepare(&a.data)?;
    let dir = out_dir(&a.out)?;
    let cfg = EstimatorConfig {
        method,
        n_groups: a.groups.unwrap_or(2),
        fs_groups: a.fs_groups,
        time_effects: prep.time_effects,
        transform: Transform::None,
        cr1: a.cr1.unwrap_or(false),
        gfe: prep.gfe.clone(),
    };
    let res = run_estimate(&prep.panel, &cfg)?;
    let p = &prep.panel;

    let est_path = dir.join("estimates.csv");
    let mut w = csv_writer(&est_path)?;
    let e = csv_err(&est_path);
    w.write_record(["group", "coefficient", "pre_estimate", "pre_se", "post_estimate", "post_se", "group_size"])
        .map_err(&e)?;
    for g in 0..res.n_groups() {
        for (k, name) in p.x_names().iter().enumerate() {
            let pick = |c: &Option<grpiv::GroupCoefficients>, se: bool| {
                c.as_ref().map(|c| if se { c.se[g][k] } else { c.estimate[g][k] })
            };
            w.write_record([
                (g + 1).to_string(),
                name.clone(),
                cell(pick(&res.pre, false)),
                cell(pick(&res.pre, true)),
                cell(pick(&res.post, false)),
                cell(pick(&res.post, true)),
                res.group_sizes[g].to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|x| CliError::usage(format!("cannot write `{}`: {x}", est_path.display())))?;

    let mem_path = dir.join("membership.csv");
    let mut w = csv_writer(&mem_path)?;
    let e = csv_err(&mem_path);
    w.write_record(["unit", "group"]).map_err(&e)?;
    for (i, unit) in p.unit_ids().iter().enumerate() {
        w.write_record([unit.clone(), (res.grouping().label(i) + 1).to_string()]).map_err(&e)?;
    }
    w.flush().map_err(|x| CliError::usage(format!("cannot write `{}`: {x}", mem_path.display())))?;

    let mut extra = panel_info(&prep);
    extra["transform"] = json!(prep.transform);
    extra["result"] = json!({
        "objective": res.second_stage.objective,
        "converged": res.second_stage.converged,
        "group_sizes": res.group_sizes,
        "min_first_stage_f": res.min_first_stage_f(),
        "post_error": res.post_error,
    });
    write_manifest(&dir, "estimate", &a, extra)?;

    println!("{method}: {} groups, sizes {:?}, objective {:.6}", res.n_groups(), res.group_sizes, res.second_stage.objective);
    if let Some(msg) = &res.post_error {
        eprintln!("warning: post-estimates unavailable: {msg}");
    }
    if verbose > 0 {
        if let Some(f) = res.min_first_stage_f() {
            eprintln!("smallest first-stage F: {f:.3}");
        }
        eprintln!("winning start {} after {} iterations", res.second_stage.start_index, res.second_stage.n_iterations);
    }
    Ok(())
}

fn ic_rows(w: &mut csv::Writer<fs::File>, stage: &str, ic: &ICResult, e: &dyn Fn(csv::Error) -> CliError) -> Res<()> {
    for (j, &c) in ic.candidates.iter().enumerate() {
        w.write_record([
            stage.to_string(),
            c.to_string(),
            ic.fit[j].to_string(),
            (ic.criterion[j] - ic.fit[j]).to_string(),
            ic.criterion[j].to_string(),
            (c == ic.chosen).to_string(),
        ])
        .map_err(e)?;
    }
    Ok(())
}

pub fn select(flags: &SelectArgs, verbose: u8) -> Res<()> {
    let a = merge(flags, flags.config.as_deref())?;
    let method: Method = a
        .method
        .as_deref()
        .ok_or_else(|| CliError::usage("--method is required (2sls, tgfe, ugfe, ig or rf)"))?
        .parse()?;
    let penalty: Penalty = parse(a.penalty.as_deref(), "pcp3")?;
    let prep = prepare(&a.data)?;
    let dir = out_dir(&a.out)?;
    let defaults = SelectionOptions::default();
    let opts = SelectionOptions {
        penalty,
        g_max: a.g_max.unwrap_or(defaults.g_max),
        k_max: a.k_max.unwrap_or(defaults.k_max),
        time_effects: prep.time_effects,
        gfe: prep.gfe.clone(),
    };
    let sel = run_select(&prep.panel, method, &opts)?;

    let path = dir.join("ic.csv");
    let mut w = csv_writer(&path)?;
    let e = csv_err(&path);
    w.write_record(["stage", "candidate", "fit", "penalty", "criterion", "chosen"]).map_err(&e)?;
    if let Some(fs) = &sel.first_stage {
        ic_rows(&mut w, "first", fs, &e)?;
    }
    ic_rows(&mut w, "second", &sel.second_stage, &e)?;
    w.flush().map_err(|x| CliError::usage(format!("cannot write `{}`: {x}", path.display())))?;

    let mut extra = panel_info(&prep);
    extra["transform"] = json!(prep.transform);
    extra["penalty"] = json!(penalty);
    extra["result"] = json!({
        "g": sel.g(),
        "k": sel.k(),
        "sigma2_hat": sel.second_stage.sigma2_hat,
        "first_stage_sigma2_hat": sel.first_stage.as_ref().map(|f| f.sigma2_hat),
    });
    write_manifest(&dir, "select", &a, extra)?;

    match sel.k() {
        Some(k) => println!("{method}: G = {}, K = {k} ({penalty})", sel.g()),
        None => println!("{method}: G = {} ({penalty})", sel.g()),
    }
    if verbose > 0 {
        eprintln!("criterion: {:?}", sel.second_stage.criterion);
    }
    Ok(())
}

fn metrics_for(cells: &[McCell]) -> Vec<Metric> {
    let mut out = Vec::new();
    for c in cells {
        let add: &[Metric] = match c.task {
            McTask::Classify => &[Metric::RandIndex, Metric::PreHausdorff, Metric::PostHausdorff],
            McTask::Select => &[Metric::Selection],
            McTask::Moments => &[Metric::Moments],
        };
        for m in add {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    out
}

pub fn replicate(flags: &ReplicateArgs, verbose: u8) -> Res<()> {
    let a = merge(flags, flags.config.as_deref())?;
    let (name, cells, metrics) = match (&a.table, &a.grid) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --table or --grid, not both")),
        (Some(t), None) => {
            let table: TableId = t.parse()?;
            (format!("table_{table}"), table.cells(), vec![table.metric()])
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read grid `{}`: {e}", path.display())))?;
            let cells: Vec<McCell> = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("grid `{}`: {e}", path.display())))?;
            let metrics = metrics_for(&cells);
            ("grid".to_string(), cells, metrics)
        }
        (None, None) => return Err(CliError::usage("one of --table or --grid is required")),
    };
    let dir = out_dir(&a.out)?;
    let defaults = McSpec::default();
    let spec = McSpec {
        cells,
        n_reps: a.reps.unwrap_or(defaults.n_reps),
        n_starts: a.starts.unwrap_or(defaults.n_starts),
        master_seed: a.seed.unwrap_or(0),
        g_max: a.g_max.unwrap_or(defaults.g_max),
        k_max: a.k_max.unwrap_or(defaults.k_max),
        penalty: parse(a.penalty.as_deref(), "pcp3")?,
        ..defaults
    };
    if verbose > 0 {
        eprintln!("{} cells x {} replications", spec.cells.len(), spec.n_reps);
    }
    let report: McReport = run_monte_carlo(&spec)?;

    let mut buf = Vec::new();
    write_csv(&report, &mut buf)?;
    write_file(&dir.join(format!("{name}.csv")), &buf)?;
    let text: String = metrics
        .iter()
        .map(|&m| render_text(&report, m))
        .collect::<Vec<_>>()
        .join("\n");
    write_file(&dir.join(format!("{name}.txt")), text.as_bytes())?;
    let failed: usize = report.rows.iter().map(|r| r.reps_failed).sum();
    write_manifest(
        &dir,
        "replicate",
        &a,
        json!({"spec": spec, "failed_replications": failed}),
    )?;
    print!("{text}");
    if failed > 0 {
        eprintln!("warning: {failed} method-replications failed numerically");
    }
    Ok(())
}

pub fn simulate(flags: &SimulateArgs, _verbose: u8) -> Res<()> {
    let a = merge(flags, flags.config.as_deref())?;
    let base = DgpConfig::default();
    let cfg = DgpConfig {
        dgp: parse(a.dgp.as_deref(), "1")?,
        n: a.n.unwrap_or(base.n),
        t: a.t.unwrap_or(base.t),
        sigma: a.sigma.unwrap_or(base.sigma),
        rho: a.rho.unwrap_or(base.rho),
        mu_pi: a.mu_pi.unwrap_or(base.mu_pi),
        sigma_pi: a.sigma_pi.unwrap_or(base.sigma_pi),
        seed: a.seed.unwrap_or(base.seed),
    };
    let (panel, truth) = gen_dgp(&cfg)?;
    let dir = out_dir(&a.out)?;
    save_panel(&panel, dir.join("panel.csv"))?;

    let path = dir.join("truth.csv");
    let mut w = csv_writer(&path)?;
    let e = csv_err(&path);
    w.write_record(["unit", "group", "pi", "rho"]).map_err(&e)?;
    for (i, unit) in panel.unit_ids().iter().enumerate() {
        w.write_record([
            unit.clone(),
            (truth.grouping.label(i) + 1).to_string(),
            truth.first_stage_pi[i][(0, 0)].to_string(),
            truth.rho[i].to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|x| CliError::usage(format!("cannot write `{}`: {x}", path.display())))?;
    write_manifest(&dir, "simulate", &a, json!({ "dgp": cfg }))?;
    println!("design {}: N = {}, T = {} written to {}", cfg.dgp, cfg.n, cfg.t, dir.display());
    Ok(())
}
