use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::report::Report;
use crate::error::HarnessError;

fn csv_err(e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => HarnessError::Io(e),
        k => HarnessError::Io(std::io::Error::other(format!("{k:?}"))),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SpectraCsv<'a> {
    run_id: &'a str,
    epsilon: f64,
    region_label: &'a str,
    p: usize,
    lambda: f64,
    solver: &'a str,
    residual: f64,
}

#[derive(Serialize)]
struct VarifoldCsv<'a> {
    run_id: &'a str,
    epsilon: f64,
    mass_total: f64,
    equipartition_defect: f64,
    first_variation_residual: f64,
    curvature_l2: f64,
    ball_ratio_max: Option<f64>,
}

#[derive(Serialize)]
struct RunCsv<'a> {
    run_id: &'a str,
    epsilon: f64,
    resolution: String,
    energy: f64,
    sup_norm: f64,
    residual: f64,
    index: usize,
    near_zero: usize,
}

pub const SPECTRA_HEADER: [&str; 7] = ["run_id", "epsilon", "region_label", "p", "lambda", "solver", "residual"];
pub const VARIFOLD_HEADER: [&str; 7] =
    ["run_id", "epsilon", "mass_total", "equipartition_defect", "first_variation_residual", "curvature_l2", "ball_ratio_max"];
pub const RUNS_HEADER: [&str; 8] = ["run_id", "epsilon", "resolution", "energy", "sup_norm", "residual", "index", "near_zero"];

/// `runs.csv`, `spectra.csv` and `varifold_metrics.csv`, each only once its stage has data.
pub fn write_tables(report: &Report, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let id = report.config.name.as_str();
    let mut written = Vec::new();
    if !report.rows.is_empty() {
        let rows: Vec<RunCsv> = report
            .rows
            .iter()
            .map(|r| RunCsv {
                run_id: id,
                epsilon: r.epsilon,
                resolution: r.resolution.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x"),
                energy: r.energy,
                sup_norm: r.sup_norm,
                residual: r.residual,
                index: r.index,
                near_zero: r.near_zero,
            })
            .collect();
        let p = out.join("runs.csv");
        write_csv(&p, &rows, &RUNS_HEADER)?;
        written.push(p);
    }
    if !report.spectra.is_empty() {
        let rows: Vec<SpectraCsv> = report
            .spectra
            .iter()
            .map(|s| SpectraCsv {
                run_id: id,
                epsilon: s.epsilon,
                region_label: &s.region,
                p: s.p,
                lambda: s.lambda,
                solver: &s.solver,
                residual: s.residual,
            })
            .collect();
        let p = out.join("spectra.csv");
        write_csv(&p, &rows, &SPECTRA_HEADER)?;
        written.push(p);
    }
    let vrows: Vec<VarifoldCsv> = report
        .rows
        .iter()
        .filter_map(|r| {
            r.varifold.as_ref().map(|v| VarifoldCsv {
                run_id: id,
                epsilon: r.epsilon,
                mass_total: v.mass,
                equipartition_defect: v.equipartition_defect,
                first_variation_residual: v.first_variation_residual,
                curvature_l2: v.curvature_l2,
                ball_ratio_max: v.ball_ratio_max,
            })
        })
        .collect();
    if !vrows.is_empty() {
        let p = out.join("varifold_metrics.csv");
        write_csv(&p, &vrows, &VARIFOLD_HEADER)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Serialize)]
struct SeriesPoint<'a> {
    eps: f64,
    value: f64,
    series: &'a str,
}

#[derive(Serialize)]
struct SpectrumPoint<'a> {
    eps: f64,
    value: f64,
    region: &'a str,
    p: usize,
}

fn series_script(csv_name: &str, title: &str, ylabel: &str, series: &[&str], logy: bool) -> String {
    let mut s = format!(
        "set datafile separator ','\nset terminal pngcairo size 900,600\nset output '{}.png'\nset title '{title}'\n\
         set xlabel 'epsilon'\nset ylabel '{ylabel}'\nset logscale x\nset key outside right\n",
        csv_name.trim_end_matches(".csv")
    );
    if logy {
        s.push_str("set logscale y\n");
    }
    let plots: Vec<String> = series
        .iter()
        .map(|name| format!("'{csv_name}' skip 1 using 1:(strcol(3) eq '{name}' ? $2 : NaN) with linespoints title '{name}'"))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Spectra, energy, mass and defects against `eps`: one CSV and one gnuplot script each.
pub fn emit_plot_data(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::Validation("empty schedule: nothing to plot".into()));
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let spectra: Vec<SpectrumPoint> =
        report.spectra.iter().map(|s| SpectrumPoint { eps: s.epsilon, value: s.lambda, region: &s.region, p: s.p }).collect();
    let path = dir.join("spectra_vs_eps.csv");
    write_csv(&path, &spectra, &["eps", "value", "region", "p"])?;
    files.push(path);
    let mut plots = Vec::new();
    for r in &report.config.regions {
        for p in 1..=report.config.spectra.p {
            plots.push(format!(
                "'spectra_vs_eps.csv' skip 1 using 1:(strcol(3) eq '{0}' && $4 == {p} ? $2 : NaN) with linespoints title '{0} p={p}'",
                r.name
            ));
        }
    }
    let script = format!(
        "set datafile separator ','\nset terminal pngcairo size 900,600\nset output 'spectra_vs_eps.png'\n\
         set title 'low eigenvalues of the linearized operator'\nset xlabel 'epsilon'\nset ylabel 'lambda'\n\
         set logscale x\nset key outside right\nplot {}\n",
        plots.join(", \\\n     ")
    );
    let path = dir.join("spectra_vs_eps.gp");
    fs::write(&path, script)?;
    files.push(path);

    let two_sigma = 2.0 * report.config.potential.sigma();
    let mut energy = Vec::new();
    let mut mass = Vec::new();
    let mut defects = Vec::new();
    for r in &report.rows {
        energy.push(SeriesPoint { eps: r.epsilon, value: r.energy, series: "energy" });
        energy.push(SeriesPoint { eps: r.epsilon, value: r.dirichlet_energy, series: "dirichlet" });
        energy.push(SeriesPoint { eps: r.epsilon, value: r.potential_energy, series: "potential" });
        mass.push(SeriesPoint { eps: r.epsilon, value: r.energy / two_sigma, series: "energy_over_2sigma" });
        defects.push(SeriesPoint { eps: r.epsilon, value: r.residual, series: "residual" });
        if let Some(v) = &r.varifold {
            mass.push(SeriesPoint { eps: r.epsilon, value: v.mass, series: "mass" });
            defects.push(SeriesPoint { eps: r.epsilon, value: v.equipartition_defect, series: "equipartition" });
            defects.push(SeriesPoint { eps: r.epsilon, value: v.first_variation_residual, series: "first_variation" });
        }
    }
    let tables: [(&str, &[SeriesPoint], &str, &str, &[&str], bool); 3] = [
        ("energy_vs_eps.csv", &energy, "energy", "E", &["energy", "dirichlet", "potential"], false),
        ("mass_vs_eps.csv", &mass, "mass of the diffuse varifold", "mass", &["mass", "energy_over_2sigma"], false),
        ("defects_vs_eps.csv", &defects, "defects", "value", &["residual", "equipartition", "first_variation"], true),
    ];
    for (name, rows, title, ylabel, series, logy) in tables {
        let path = dir.join(name);
        write_csv(&path, rows, &["eps", "value", "series"])?;
        files.push(path);
        let path = dir.join(name.replace(".csv", ".gp"));
        fs::write(&path, series_script(name, title, ylabel, series, logy))?;
        files.push(path);
    }
    Ok(files)
}
