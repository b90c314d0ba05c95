use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{MetricKind, MetricSeries};
use crate::burgers::{DatasetRole, GridSpec, SolutionField};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One curve of a line plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    /// Shade `x < shade_until` (the warm-up window).
    pub shade_until: Option<f64>,
    pub lines: Vec<Line>,
}

/// A space-time field to export; rows are times, columns grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExport {
    pub name: String,
    pub title: String,
    pub field: SolutionField,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1e6).round() / 1e6)
    }
}

/// Self-contained SVG for a line plot. Non-positive values are dropped on a log axis.
pub fn line_svg(plot: &LinePlot) -> Result<String> {
    let keep = |y: f64| y.is_finite() && (!plot.log_y || y > 0.0);
    let points: Vec<(f64, f64)> = plot
        .lines
        .iter()
        .flat_map(|l| l.x.iter().copied().zip(l.y.iter().copied()))
        .filter(|(x, y)| x.is_finite() && keep(*y))
        .collect();
    if points.is_empty() {
        return Err(Error::usage(format!("line plot '{}' has no drawable points", plot.title)));
    }
    let tf = |y: f64| if plot.log_y { y.log10() } else { y };
    let (mut x0, mut x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (mut y0, mut y1) =
        points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(tf(p.1)), a.1.max(tf(p.1))));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if plot.log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    } else {
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + ph - (tf(y) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        esc(&plot.title)
    );
    if let Some(w) = plot.shade_until {
        if w > x0 {
            let _ = writeln!(
                s,
                r##"<rect x="{MARGIN_L:.2}" y="{MARGIN_T:.2}" width="{:.2}" height="{ph:.2}" fill="#eeeeee"/>"##,
                sx(w.min(x1)) - MARGIN_L
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L:.2}" y="{MARGIN_T:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            MARGIN_T + ph,
            MARGIN_T + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph + 19.0,
            fmt_tick(t)
        );
    }
    let yticks: Vec<f64> = if plot.log_y {
        (y0 as i64..=y1 as i64).map(|e| 10f64.powi(e as i32)).collect()
    } else {
        nice_ticks(y0, y1, 5)
    };
    for t in yticks {
        let y = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_L:.2}" y2="{y:.2}" stroke="black"/>"#,
            MARGIN_L - 5.0
        );
        let label = if plot.log_y { format!("1e{}", t.log10().round()) } else { fmt_tick(t) };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, MARGIN_L - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        esc(&plot.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        esc(&plot.y_label)
    );
    for (i, line) in plot.lines.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = line
            .x
            .iter()
            .zip(&line.y)
            .filter(|(x, y)| x.is_finite() && keep(**y))
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.6" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 28.0, ly + 4.0, esc(&line.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn viridis(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Self-contained SVG heatmap with one `<rect>` per grid cell; time runs upward.
pub fn heatmap_svg(title: &str, field: &SolutionField) -> String {
    let g = field.grid;
    let (t_n, k_n) = (g.time_points, g.space_points);
    let v = field.values();
    let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let cw = pw / k_n as f64;
    let ch = ph / t_n as f64;
    let mut s = String::with_capacity(t_n * k_n * 80);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        esc(title)
    );
    s.push_str("<g class=\"cells\">\n");
    for j in 0..t_n {
        let y = MARGIN_T + ph - (j + 1) as f64 * ch;
        for k in 0..k_n {
            let (r, gg, b) = viridis((v[j * k_n + k] - lo) / span);
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="rgb({r},{gg},{b})"/>"#,
                MARGIN_L + k as f64 * cw,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L:.2}" y="{MARGIN_T:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let x_ticks = nice_ticks(0.0, g.x(k_n - 1), 5);
    for t in x_ticks {
        let x = MARGIN_L + t / g.x(k_n - 1).max(f64::MIN_POSITIVE) * (pw - cw) + cw / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph + 19.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(g.t(0), g.t(t_n - 1), 5) {
        let frac = (t - g.t(0)) / (g.t(t_n - 1) - g.t(0)).max(f64::MIN_POSITIVE);
        let y = MARGIN_T + ph - ch / 2.0 - frac * (ph - ch);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_L - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ =
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 12.0);
    let _ = writeln!(s, r#"<text x="24" y="{:.2}" text-anchor="middle">t</text>"#, MARGIN_T + ph / 2.0);
    let bar_x = WIDTH - MARGIN_R + 20.0;
    for i in 0..64 {
        let (r, gg, b) = viridis(i as f64 / 63.0);
        let y = MARGIN_T + ph - (i + 1) as f64 * ph / 64.0;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x:.2}" y="{y:.3}" width="16" height="{:.3}" fill="rgb({r},{gg},{b})"/>"#,
            ph / 64.0 + 0.05
        );
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, bar_x + 22.0, MARGIN_T + 10.0, fmt_sig(hi));
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, bar_x + 22.0, MARGIN_T + ph, fmt_sig(lo));
    s.push_str("</svg>\n");
    s
}

fn fmt_sig(v: f64) -> String {
    format!("{v:.3e}")
}

/// Field CSV: a header `t,x0,...` of grid positions, then one row per time.
pub fn field_csv(field: &SolutionField) -> String {
    let g = field.grid;
    let mut s = String::from("t");
    for x in g.xs() {
        let _ = write!(s, ",{x}");
    }
    s.push('\n');
    for (j, row) in field.snapshots().enumerate() {
        let _ = write!(s, "{}", g.t(j));
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::format(format!("bad number '{s}' in {what}")))
}

/// Inverse of [`field_csv`]; the grid is rebuilt from the header and time column.
pub fn field_from_csv(text: &str, reynolds: f64) -> Result<SolutionField> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format("empty field CSV"))?;
    let xs: Vec<f64> = header.split(',').skip(1).map(|v| parse_f64(v, "field header")).collect::<Result<_>>()?;
    let mut ts = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let mut cols = line.split(',');
        ts.push(parse_f64(cols.next().unwrap_or(""), "field time")?);
        let row: Vec<f64> = cols.map(|v| parse_f64(v, "field row")).collect::<Result<_>>()?;
        if row.len() != xs.len() {
            return Err(Error::format("field CSV row length differs from header"));
        }
        values.extend(row);
    }
    if xs.len() < 2 || ts.is_empty() {
        return Err(Error::format("field CSV needs at least two columns and one row"));
    }
    let dx = xs[1] - xs[0];
    let dt = if ts.len() > 1 { ts[1] - ts[0] } else { ts[0] };
    let grid = GridSpec::new(dx * xs.len() as f64, xs.len(), dt * ts.len() as f64, ts.len())?;
    SolutionField::new(reynolds, grid, values)
}

impl MetricKind {
    /// File-name stem.
    pub fn slug(&self) -> String {
        match self {
            MetricKind::Cae => "l2_cae".into(),
            MetricKind::CaeRcNf => "l2_caercnf".into(),
            MetricKind::RcNf(i) => format!("l2_rcnf_y{i}"),
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "L2_CAE" => Some(MetricKind::Cae),
            "L2_CAE-RC-NF" => Some(MetricKind::CaeRcNf),
            _ => label.strip_prefix("L2_RC-NF_y").and_then(|i| i.parse().ok()).map(MetricKind::RcNf),
        }
    }
}

pub(super) fn role_slug(role: DatasetRole) -> &'static str {
    match role {
        DatasetRole::Train => "train",
        DatasetRole::Test => "test",
        DatasetRole::Unspecified => "data",
    }
}

impl MetricSeries {
    /// Inverse of [`MetricSeries::to_csv`].
    pub fn from_csv(text: &str, role: DatasetRole) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty metric CSV"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != 3 || cols[0] != "t" || cols[2] != "warmup" {
            return Err(Error::format(format!("unexpected metric CSV header '{header}'")));
        }
        let kind =
            MetricKind::from_label(cols[1]).ok_or_else(|| Error::format(format!("unknown metric '{}'", cols[1])))?;
        let (mut times, mut values, mut warmup) = (Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 3 {
                return Err(Error::format(format!("bad metric CSV row '{line}'")));
            }
            times.push(parse_f64(c[0], "metric time")?);
            values.push(parse_f64(c[1], "metric value")?);
            warmup.push(c[2].trim() == "1");
        }
        Ok(MetricSeries { kind, role, times, values, warmup })
    }

    /// File-name stem, e.g. `l2_caercnf_test`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.kind.slug(), role_slug(self.role))
    }
}

fn metric_figures(series: &[MetricSeries]) -> Vec<(String, LinePlot)> {
    let mut figures = Vec::new();
    for role in [DatasetRole::Train, DatasetRole::Test, DatasetRole::Unspecified] {
        let of_role: Vec<&MetricSeries> = series.iter().filter(|s| s.role == role).collect();
        if of_role.is_empty() {
            continue;
        }
        let shade = of_role.iter().find_map(|s| {
            let last = s.warmup.iter().rposition(|w| *w)?;
            s.times.get(last + 1).copied()
        });
        let to_line = |s: &MetricSeries| Line { label: s.kind.label(), x: s.times.clone(), y: s.values.clone() };
        let field: Vec<Line> = of_role
            .iter()
            .filter(|s| matches!(s.kind, MetricKind::Cae | MetricKind::CaeRcNf))
            .map(|s| to_line(s))
            .collect();
        let latent: Vec<Line> =
            of_role.iter().filter(|s| matches!(s.kind, MetricKind::RcNf(_))).map(|s| to_line(s)).collect();
        let tag = role_slug(role);
        if !field.is_empty() {
            figures.push((
                format!("field_error_{tag}"),
                LinePlot {
                    title: format!("Field reconstruction and prediction error ({tag})"),
                    x_label: "t".into(),
                    y_label: "mean square error".into(),
                    log_y: true,
                    shade_until: shade,
                    lines: field,
                },
            ));
        }
        if !latent.is_empty() {
            figures.push((
                format!("latent_error_{tag}"),
                LinePlot {
                    title: format!("Latent prediction error ({tag})"),
                    x_label: "t".into(),
                    y_label: "mean square error".into(),
                    log_y: true,
                    shade_until: shade,
                    lines: latent,
                },
            ));
        }
    }
    figures
}

/// Write one CSV per series and field, then SVG figures: error curves grouped by
/// dataset role, and one heatmap per field. Returns every written path.
pub fn emit_plots(series: &[MetricSeries], fields: &[FieldExport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if series.is_empty() && fields.is_empty() {
        return Err(Error::usage("nothing to plot"));
    }
    if let Some(s) = series.iter().find(|s| s.times.is_empty() || s.times.len() != s.values.len()) {
        return Err(Error::usage(format!("series {} is empty or misaligned", s.file_stem())));
    }
    let mut written = Vec::new();
    let mut put = |name: String, body: &str| -> Result<()> {
        let p = out_dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    for s in series {
        put(format!("{}.csv", s.file_stem()), &s.to_csv())?;
    }
    for f in fields {
        put(format!("{}.csv", f.name), &field_csv(&f.field))?;
    }
    for (name, fig) in metric_figures(series) {
        put(format!("{name}.svg"), &line_svg(&fig)?)?;
    }
    for f in fields {
        put(format!("{}.svg", f.name), &heatmap_svg(&f.title, &f.field))?;
    }
    Ok(written)
}
