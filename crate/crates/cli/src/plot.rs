//! Static SVG charts for the training log, ROC curve and confusion matrix.
//! Output depends only on the input text, so identical CSVs give identical
//! bytes.

use std::fmt::Write;

use crate::CliError;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

const TRAIN_COLOR: &str = "#1f77b4";
const TEST_COLOR: &str = "#d62728";

pub const LOG_COLUMNS: &[&str] = &["epoch", "train_loss", "train_acc", "test_loss", "test_acc"];
pub const ROC_COLUMNS: &[&str] = &["threshold", "fpr", "tpr"];
pub const CM_COLUMNS: &[&str] = &["actual", "predicted", "count", "fraction"];

/// A parsed CSV whose header matched a fixed schema.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn num(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col].parse().expect("validated on read")
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows.len()).map(|r| self.num(r, col)).collect()
    }
}

fn schema(msg: String) -> CliError {
    CliError::Usage(msg)
}

/// Checks the header against `expected` and every value in a `numeric`
/// column. Errors name the offending column.
pub fn read_table(
    text: &str,
    expected: &[&str],
    numeric: &[bool],
    origin: &str,
) -> Result<Table, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| schema(format!("{origin}: empty file, expected header `{}`", expected.join(","))))?
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(found) if found == want => {}
            Some(found) => {
                return Err(schema(format!(
                    "{origin}: column {} is `{found}`, expected `{want}`",
                    i + 1
                )))
            }
            None => return Err(schema(format!("{origin}: missing column `{want}`"))),
        }
    }
    if let Some(extra) = header.get(expected.len()) {
        return Err(schema(format!("{origin}: unexpected column `{extra}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cells.len() != expected.len() {
            return Err(schema(format!(
                "{origin}: row {} has {} values, expected {}",
                n + 1,
                cells.len(),
                expected.len()
            )));
        }
        for (i, cell) in cells.iter().enumerate() {
            if numeric[i] && cell.parse::<f64>().map_or(true, |v| v.is_nan()) {
                return Err(schema(format!(
                    "{origin}: row {}: column `{}` has non-numeric value `{cell}`",
                    n + 1,
                    expected[i]
                )));
            }
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(schema(format!("{origin}: no data rows")));
    }
    Ok(Table {
        columns: header,
        rows,
    })
}

/// Maps data coordinates into a pixel rectangle, y pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Panel {
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        (
            self.left + (x - x0) / (x1 - x0) * self.width,
            self.top + self.height - (y - y0) / (y1 - y0) * self.height,
        )
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg(String);

impl Svg {
    fn new() -> Self {
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
        )
        .unwrap();
        writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        Svg(s)
    }

    fn text(&mut self, x: f64, y: f64, size: u32, anchor: &str, body: &str) {
        writeln!(
            self.0,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            esc(body)
        )
        .unwrap();
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, extra: &str) {
        writeln!(
            self.0,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}"{extra}/>"#,
            a.0, a.1, b.0, b.1
        )
        .unwrap();
    }

    fn polyline(&mut self, panel: &Panel, xs: &[f64], ys: &[f64], color: &str) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let (px, py) = panel.map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        writeln!(
            self.0,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }

    fn axes(&mut self, p: &Panel, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t, w, h) = (p.left, p.top, p.width, p.height);
        self.line((l, t + h), (l + w, t + h), "black", "");
        self.line((l, t), (l, t + h), "black", "");
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = p.x_range.0 + f * (p.x_range.1 - p.x_range.0);
            let yv = p.y_range.0 + f * (p.y_range.1 - p.y_range.0);
            let (px, _) = p.map(xv, p.y_range.0);
            let (_, py) = p.map(p.x_range.0, yv);
            self.line((px, t + h), (px, t + h + 5.0), "black", "");
            self.text(px, t + h + 20.0, 12, "middle", &format!("{xv:.2}"));
            self.line((l - 5.0, py), (l, py), "black", "");
            self.text(l - 8.0, py + 4.0, 12, "end", &format!("{yv:.2}"));
        }
        self.text(l + w / 2.0, t - 12.0, 16, "middle", title);
        self.text(l + w / 2.0, t + h + 42.0, 13, "middle", xlabel);
        let (yx, yy) = (l - 48.0, t + h / 2.0);
        writeln!(
            self.0,
            r#"<text x="{yx:.2}" y="{yy:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 {yx:.2} {yy:.2})">{}</text>"#,
            esc(ylabel)
        )
        .unwrap();
    }

    fn legend(&mut self, x: f64, y: f64, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let yy = y + 18.0 * i as f64;
            self.line((x, yy), (x + 24.0, yy), color, r#" stroke-width="2""#);
            self.text(x + 30.0, yy + 4.0, 12, "start", label);
        }
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn span(values: &[f64], floor_zero: bool) -> (f64, f64) {
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if floor_zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Loss and accuracy curves side by side, train and test in each.
pub fn log_svg(csv: &str, origin: &str) -> Result<String, CliError> {
    let t = read_table(csv, LOG_COLUMNS, &[true; 5], origin)?;
    let epochs = t.column(0);
    let x_range = span(&epochs, false);
    let (train_loss, train_acc, test_loss, test_acc) = (t.column(1), t.column(2), t.column(3), t.column(4));
    let all_loss: Vec<f64> = train_loss.iter().chain(&test_loss).copied().collect();
    let (_, loss_hi) = span(&all_loss, true);
    let loss = Panel {
        left: 80.0,
        top: 60.0,
        width: 280.0,
        height: 420.0,
        x_range,
        y_range: (0.0, loss_hi * 1.05),
    };
    let acc = Panel {
        left: 480.0,
        y_range: (0.0, 1.0),
        ..loss
    };
    let mut svg = Svg::new();
    for (panel, title, ylabel, train, test) in [
        (&loss, "Loss", "cross-entropy", &train_loss, &test_loss),
        (&acc, "Accuracy", "accuracy", &train_acc, &test_acc),
    ] {
        svg.axes(panel, title, "epoch", ylabel);
        svg.polyline(panel, &epochs, train, TRAIN_COLOR);
        svg.polyline(panel, &epochs, test, TEST_COLOR);
        svg.legend(panel.left + 10.0, panel.top + panel.height + 62.0, &[("train", TRAIN_COLOR), ("test", TEST_COLOR)]);
    }
    Ok(svg.finish())
}

pub fn roc_panel() -> Panel {
    Panel {
        left: 120.0,
        top: 60.0,
        width: 560.0,
        height: 440.0,
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
    }
}

/// ROC polyline in file order with a dashed chance diagonal.
pub fn roc_svg(csv: &str, origin: &str) -> Result<String, CliError> {
    let t = read_table(csv, ROC_COLUMNS, &[true; 3], origin)?;
    let (fpr, tpr) = (t.column(1), t.column(2));
    for (name, col) in [("fpr", &fpr), ("tpr", &tpr)] {
        if col.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(schema(format!("{origin}: column `{name}` has values outside [0, 1]")));
        }
    }
    let auc: f64 = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    let panel = roc_panel();
    let mut svg = Svg::new();
    svg.axes(&panel, &format!("ROC curve (AUC {auc:.4})"), "false positive rate", "true positive rate");
    svg.line(panel.map(0.0, 0.0), panel.map(1.0, 1.0), "#888888", r#" stroke-dasharray="6,4""#);
    svg.polyline(&panel, &fpr, &tpr, TRAIN_COLOR);
    svg.legend(panel.left + panel.width - 130.0, panel.top + panel.height - 40.0, &[("model", TRAIN_COLOR), ("chance", "#888888")]);
    Ok(svg.finish())
}

/// 2×2 grid, actual classes as rows and predictions as columns, shaded by
/// the row-normalised fraction.
pub fn cm_svg(csv: &str, origin: &str) -> Result<String, CliError> {
    let t = read_table(csv, CM_COLUMNS, &[false, false, true, true], origin)?;
    let classes = ["negative", "positive"];
    let mut cells = [[None::<(f64, f64)>; 2]; 2];
    for r in 0..t.rows.len() {
        let idx = |col: usize| {
            classes
                .iter()
                .position(|c| *c == t.rows[r][col])
                .ok_or_else(|| {
                    schema(format!(
                        "{origin}: row {}: column `{}` must be negative or positive",
                        r + 1,
                        CM_COLUMNS[col]
                    ))
                })
        };
        let (a, p) = (idx(0)?, idx(1)?);
        cells[a][p] = Some((t.num(r, 2), t.num(r, 3)));
    }
    let (left, top, size) = (220.0, 90.0, 200.0);
    let mut svg = Svg::new();
    svg.text(WIDTH / 2.0, 50.0, 18, "middle", "Confusion matrix");
    for (a, row) in cells.iter().enumerate() {
        for (p, cell) in row.iter().enumerate() {
            let (count, frac) = cell.ok_or_else(|| {
                schema(format!(
                    "{origin}: missing row for actual={} predicted={}",
                    classes[a], classes[p]
                ))
            })?;
            let (x, y) = (left + size * p as f64, top + size * a as f64);
            let shade = 255 - (frac.clamp(0.0, 1.0) * 200.0).round() as u8;
            writeln!(
                svg.0,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{size:.2}" height="{size:.2}" fill="rgb({shade},{shade},255)" stroke="black"/>"##
            )
            .unwrap();
            svg.text(x + size / 2.0, y + size / 2.0, 22, "middle", &format!("{count}"));
            svg.text(x + size / 2.0, y + size / 2.0 + 26.0, 14, "middle", &format!("{:.2}%", 100.0 * frac));
        }
        svg.text(left - 12.0, top + size * a as f64 + size / 2.0, 14, "end", classes[a]);
        svg.text(left + size * a as f64 + size / 2.0, top + 2.0 * size + 24.0, 14, "middle", classes[a]);
    }
    svg.text(left + size, top + 2.0 * size + 52.0, 14, "middle", "predicted");
    svg.text(left - 12.0, top - 14.0, 14, "end", "actual");
    Ok(svg.finish())
}
