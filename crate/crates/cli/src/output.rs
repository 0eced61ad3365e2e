//! CSV, JSON and gnuplot writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use cne_core::dykstra::TraceRow;
use cne_core::kl::Coupling;
use cne_core::model::DiscreteSpace;
use serde::Serialize;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    ryu::Buffer::new().format(x).to_string()
}

fn coord_header(prefix: &str, dim: usize) -> String {
    if dim == 1 {
        prefix.to_string()
    } else {
        (1..=dim).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",")
    }
}

fn coords(space: &DiscreteSpace, k: usize) -> String {
    space.point(k).iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// `index,x,weight` (or `index,x1,x2,weight` in 2D).
pub fn measure_csv(space: &DiscreteSpace, weights: &[f64]) -> String {
    let mut s = format!("index,{},weight\n", coord_header("x", space.dim()));
    for (k, w) in weights.iter().enumerate() {
        let _ = writeln!(s, "{k},{},{}", coords(space, k), fmt_f64(*w));
    }
    s
}

/// Coupling entries at least `threshold` times the largest entry.
pub fn support_entries(gamma: &Coupling, threshold: f64) -> Vec<(usize, usize, f64)> {
    let log = gamma.log_values();
    let max = log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Vec::new();
    }
    let cut = max + threshold.ln();
    log.indexed_iter()
        .filter(|(_, &v)| v >= cut)
        .map(|((i, j), &v)| (i, j, v.exp()))
        .collect()
}

/// `i,j,x,y,mass` (or `i,j,x1,x2,y1,y2,mass` in 2D).
pub fn support_csv(x: &DiscreteSpace, y: &DiscreteSpace, gamma: &Coupling, threshold: f64) -> String {
    let mut s = format!(
        "i,j,{},{},mass\n",
        coord_header("x", x.dim()),
        coord_header("y", y.dim())
    );
    for (i, j, m) in support_entries(gamma, threshold) {
        let _ = writeln!(s, "{i},{j},{},{},{}", coords(x, i), coords(y, j), fmt_f64(m));
    }
    s
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("cycle,nu_change,marginal_residual,seconds\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.cycle,
            fmt_f64(r.nu_change),
            fmt_f64(r.marginal_residual),
            fmt_f64(r.seconds)
        );
    }
    s
}

#[derive(Serialize)]
pub struct ReportFile<'a, C: Serialize, R: Serialize> {
    pub version: &'static str,
    pub kind: &'static str,
    pub wall_seconds: f64,
    pub config: &'a C,
    pub report: &'a R,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write(path, text)
}

/// Named data series for the plot script.
pub struct PlotSeries<'a> {
    pub name: &'a str,
    pub weights: &'a [f64],
    pub color: &'a str,
    pub dashed: bool,
}

fn datablock(out: &mut String, name: &str, space: &DiscreteSpace, w: &[f64]) {
    let _ = writeln!(out, "${name} << EOD");
    for (k, v) in w.iter().enumerate() {
        let p: Vec<String> = space.point(k).iter().map(|&c| fmt_f64(c)).collect();
        let _ = writeln!(out, "{} {}", p.join(" "), fmt_f64(*v));
        if space.dim() == 2 && space.point(k)[1] == space.points()[[space.len() - 1, 1]] {
            out.push('\n');
        }
    }
    out.push_str("EOD\n");
}

/// Gnuplot script with inline data: measures overlaid (1D) or as heat maps
/// (2D), and the coupling supports as scatter plots (1D).
pub fn plot_script(
    x: &DiscreteSpace,
    series: &[PlotSeries<'_>],
    supports: &[(&str, Vec<(usize, usize, f64)>)],
) -> String {
    let mut s = String::from("# gnuplot script; run with: gnuplot -p plot.gp\n");
    for p in series {
        datablock(&mut s, p.name, x, p.weights);
    }
    if x.dim() == 1 {
        for (name, entries) in supports {
            let _ = writeln!(s, "${name} << EOD");
            for &(i, j, m) in entries {
                let _ = writeln!(
                    s,
                    "{} {} {}",
                    fmt_f64(x.point(i)[0]),
                    fmt_f64(x.point(j)[0]),
                    fmt_f64(m)
                );
            }
            s.push_str("EOD\n");
        }
        let panels = 1 + usize::from(!supports.is_empty());
        let _ = writeln!(s, "set multiplot layout 1,{panels}");
        s.push_str("set xlabel 'x'\nplot ");
        let curves: Vec<String> = series
            .iter()
            .map(|p| {
                format!(
                    "${} using 1:2 with lines lw 2 dt {} lc rgb '{}' title '{}'",
                    p.name,
                    if p.dashed { 2 } else { 1 },
                    p.color,
                    p.name
                )
            })
            .collect();
        s.push_str(&curves.join(", \\\n     "));
        s.push('\n');
        if !supports.is_empty() {
            s.push_str("set xlabel 'type x'\nset ylabel 'strategy y'\nplot ");
            let pts: Vec<String> = supports
                .iter()
                .map(|(name, _)| format!("${name} using 1:2 with points pt 7 ps 0.3 title '{name}'"))
                .collect();
            s.push_str(&pts.join(", \\\n     "));
            s.push('\n');
        }
        s.push_str("unset multiplot\n");
    } else {
        let _ = writeln!(s, "set multiplot layout 1,{}", series.len());
        s.push_str("set view map\nset size square\n");
        for p in series {
            let _ = writeln!(s, "set title '{}'\nsplot ${} using 1:2:3 with pm3d notitle", p.name, p.name);
        }
        s.push_str("unset multiplot\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, 5e-324] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn support_threshold_is_relative() {
        let g = Coupling::from_linear(&array![[1.0, 1e-7], [1e-5, 0.0]]).unwrap();
        let e = support_entries(&g, 1e-6);
        assert_eq!(e.iter().map(|t| (t.0, t.1)).collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn csv_headers() {
        let s1 = DiscreteSpace::from_1d(&[0.0, 1.0]).unwrap();
        assert!(measure_csv(&s1, &[0.5, 0.5]).starts_with("index,x,weight\n0,0.0,0.5\n"));
        let g = cne_core::model::build_grid(&[(0.0, 1.0), (0.0, 1.0)], 2, 2).unwrap();
        assert!(measure_csv(&g, &[0.25; 4]).starts_with("index,x1,x2,weight\n"));
        let gamma = Coupling::from_linear(&ndarray::Array2::from_elem((4, 4), 1.0 / 16.0)).unwrap();
        assert!(support_csv(&g, &g, &gamma, 1e-6).starts_with("i,j,x1,x2,y1,y2,mass\n"));
    }
}
