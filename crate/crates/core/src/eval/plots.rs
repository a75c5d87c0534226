use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, Metrics};

/// Ground truth and prediction of one output, instances sorted by ground
/// truth ascending. Voltages in p.u., compensators in MVar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub output: String,
    pub unit: String,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<model>_<output>.csv` (index, truth, prediction) and a matching
/// SVG chart per selected output; an empty selection means every output.
pub fn emit_comparison_plots(metrics: &Metrics, selection: &[String], dir: impl AsRef<Path>) -> Result<Vec<PlotSeries>, EvalError> {
    let dir = dir.as_ref();
    let chosen: Vec<usize> = if selection.is_empty() {
        (0..metrics.outputs.len()).collect()
    } else {
        selection
            .iter()
            .map(|s| metrics.outputs.iter().position(|o| o == s).ok_or_else(|| EvalError::UnknownOutput(s.clone())))
            .collect::<Result<_, _>>()?
    };
    std::fs::create_dir_all(dir).map_err(EvalError::io(dir))?;
    let stem: String = metrics.model.to_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    let mut out = Vec::new();
    for k in chosen {
        let name = &metrics.outputs[k];
        let (scale, unit) = if metrics.output_is_voltage[k] { (1.0, "p.u.") } else { (metrics.base_mva, "MVar") };
        let mut pairs: Vec<(f64, f64)> = metrics.detail.iter().map(|d| (d.truth[k] * scale, d.prediction[k] * scale)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let prediction: Vec<f64> = pairs.iter().map(|p| p.1).collect();

        let csv = dir.join(format!("{stem}_{name}.csv"));
        let mut text = String::from("index,truth,prediction\n");
        for (i, (t, p)) in pairs.iter().enumerate() {
            writeln!(text, "{i},{t},{p}").expect("string write");
        }
        std::fs::write(&csv, text).map_err(EvalError::io(&csv))?;
        let svg = dir.join(format!("{stem}_{name}.svg"));
        let title = format!("{} {name}", metrics.model);
        std::fs::write(&svg, render_svg(&title, unit, &truth, &prediction)).map_err(EvalError::io(&svg))?;
        out.push(PlotSeries { output: name.clone(), unit: unit.into(), truth, prediction, csv, svg });
    }
    Ok(out)
}

/// Minimal two-line chart: ground truth in black, prediction in red.
pub fn render_svg(title: &str, y_label: &str, truth: &[f64], prediction: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 40.0;
    let finite = truth.iter().chain(prediction).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let n = truth.len().max(2);
    let x = |i: usize| LEFT + (W - LEFT - RIGHT) * i as f64 / (n - 1) as f64;
    let y = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v.clamp(lo, hi)) / (hi - lo);
    let polyline = |values: &[f64], color: &str| {
        let pts: Vec<String> =
            values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v))).collect();
        format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n", pts.join(" "))
    };
    let escape = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut s = String::new();
    writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">").unwrap();
    writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>").unwrap();
    writeln!(s, "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>", W / 2.0, escape(title)).unwrap();
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    writeln!(s, "<path d=\"M{x0},{y0} L{x0},{y1} L{x1},{y1}\" stroke=\"#444\" fill=\"none\"/>").unwrap();
    for v in [lo, hi] {
        writeln!(s, "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.4}</text>", LEFT - 6.0, y(v) + 4.0).unwrap();
    }
    writeln!(s, "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>", H / 2.0, H / 2.0, escape(y_label)).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">instance (sorted by ground truth)</text>", W / 2.0, H - 10.0).unwrap();
    s.push_str(&polyline(prediction, "#c0392b"));
    s.push_str(&polyline(truth, "#000"));
    writeln!(s, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">ground truth (black), prediction (red)</text>", LEFT + 8.0, TOP + 12.0).unwrap();
    s.push_str("</svg>\n");
    s
}
