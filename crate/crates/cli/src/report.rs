//! Deterministic report rendering. Floats are always written with 17
//! significant digits; JSON has no NaN, so non-finite values become `null`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use specmm::util::fmt17;
use specmm::{Error, Result};

use crate::scenarios::ScenarioOutcome;

#[derive(Clone, Debug)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    fn csv_text(&self) -> String {
        match self {
            Cell::Num(v) => fmt17(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn parse(s: &str) -> Cell {
        if let Ok(v) = s.parse::<i64>() {
            return Cell::Int(v);
        }
        match s.parse::<f64>() {
            Ok(v) => Cell::Num(v),
            Err(_) => Cell::Text(s.to_string()),
        }
    }
}

/// Bitwise equality, so NaN cells compare equal to themselves.
impl PartialEq for Cell {
    fn eq(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Num(a), Cell::Num(b)) => a.to_bits() == b.to_bits(),
            (Cell::Int(a), Cell::Int(b)) => a == b,
            (Cell::Text(a), Cell::Text(b)) => a == b,
            _ => false,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Columns to draw: `ys` against `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub x: String,
    pub ys: Vec<String>,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub plot: Option<Plot>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            plot: None,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    /// Numeric column; text cells read as NaN.
    pub fn values(&self, name: &str) -> Vec<f64> {
        self.column(name)
            .map(|c| {
                c.into_iter()
                    .map(|v| v.as_f64().unwrap_or(f64::NAN))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_text)).map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn to_node(&self) -> Node {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                Node::Obj(
                    self.columns
                        .iter()
                        .zip(r)
                        .map(|(c, v)| {
                            let node = match v {
                                Cell::Num(x) => Node::Num(*x),
                                Cell::Int(i) => Node::Int(*i),
                                Cell::Text(s) => Node::Str(s.clone()),
                            };
                            (c.clone(), node)
                        })
                        .collect(),
                )
            })
            .collect();
        Node::Obj(vec![
            ("name".into(), Node::Str(self.name.clone())),
            (
                "columns".into(),
                Node::Arr(self.columns.iter().map(|c| Node::Str(c.clone())).collect()),
            ),
            ("rows".into(), Node::Arr(rows)),
        ])
    }

    pub fn to_svg(&self) -> Option<String> {
        let plot = self.plot.as_ref()?;
        Some(svg(self, plot))
    }
}

/// Reads a CSV produced by [`Table::to_csv`].
pub fn load_csv(name: &str, bytes: &[u8]) -> Result<Table> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut r = csv::Reader::from_reader(bytes);
    let columns: Vec<String> = r
        .headers()
        .map_err(io)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(io)?.iter().map(Cell::parse).collect());
    }
    Ok(Table {
        name: name.into(),
        columns,
        rows,
        plot: None,
    })
}

/// JSON tree with insertion-ordered objects.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Node>),
    Obj(Vec<(String, Node)>),
}

impl Node {
    pub fn from_serialize(value: &impl Serialize) -> Result<Node> {
        Ok(Node::from_value(&serde_json::to_value(value)?))
    }

    pub fn from_value(v: &serde_json::Value) -> Node {
        use serde_json::Value;
        match v {
            Value::Null => Node::Null,
            Value::Bool(b) => Node::Bool(*b),
            Value::Number(n) => match (n.as_i64(), n.as_f64()) {
                (Some(i), _) if !n.is_f64() => Node::Int(i),
                (_, Some(f)) => Node::Num(f),
                _ => Node::Str(n.to_string()),
            },
            Value::String(s) => Node::Str(s.clone()),
            Value::Array(a) => Node::Arr(a.iter().map(Node::from_value).collect()),
            Value::Object(o) => Node::Obj(
                o.iter()
                    .map(|(k, v)| (k.clone(), Node::from_value(v)))
                    .collect(),
            ),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, depth: usize) {
        let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
        match self {
            Node::Null => out.push_str("null"),
            Node::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Node::Int(i) => out.push_str(&i.to_string()),
            Node::Num(x) if x.is_finite() => out.push_str(&fmt17(*x)),
            Node::Num(_) => out.push_str("null"),
            Node::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
            Node::Arr(items) if items.is_empty() => out.push_str("[]"),
            Node::Arr(items) => {
                out.push_str("[\n");
                for (k, item) in items.iter().enumerate() {
                    pad(out, depth + 1);
                    item.write(out, depth + 1);
                    out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
                }
                pad(out, depth);
                out.push(']');
            }
            Node::Obj(fields) if fields.is_empty() => out.push_str("{}"),
            Node::Obj(fields) => {
                out.push_str("{\n");
                for (k, (key, value)) in fields.iter().enumerate() {
                    pad(out, depth + 1);
                    out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                    out.push_str(": ");
                    value.write(out, depth + 1);
                    out.push_str(if k + 1 < fields.len() { ",\n" } else { "\n" });
                }
                pad(out, depth);
                out.push('}');
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Contract(format!(
                "unknown format `{other}` (csv, json, svg)"
            ))),
        }
    }
}

/// Renders every artifact of `outcome` in `format` as `(file name, bytes)`.
pub fn render_report(outcome: &ScenarioOutcome, format: Format) -> Result<Vec<(String, Vec<u8>)>> {
    if outcome.tables.iter().all(|t| t.rows.is_empty()) {
        return Err(Error::Contract(format!(
            "scenario `{}` produced no results",
            outcome.name
        )));
    }
    let mut files = Vec::new();
    match format {
        Format::Csv => {
            for t in &outcome.tables {
                files.push((format!("{}.csv", t.name), t.to_csv()?));
            }
        }
        Format::Json => files.push((
            format!("{}.json", outcome.name),
            outcome.to_node().render().into_bytes(),
        )),
        Format::Svg => {
            for t in &outcome.tables {
                if let Some(s) = t.to_svg() {
                    files.push((format!("{}.svg", t.name), s.into_bytes()));
                }
            }
        }
    }
    Ok(files)
}

/// Writes the rendered artifacts into `dir`, creating it if needed.
pub fn emit_report(outcome: &ScenarioOutcome, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = render_report(outcome, format)?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn svg(table: &Table, plot: &Plot) -> String {
    let xs = table.values(&plot.x);
    let series: Vec<(&String, Vec<f64>)> = plot.ys.iter().map(|y| (y, table.values(y))).collect();
    let finite = |v: &[f64]| {
        v.iter()
            .copied()
            .filter(|x| x.is_finite())
            .collect::<Vec<_>>()
    };
    let all_y: Vec<f64> = series.iter().flat_map(|(_, v)| finite(v)).collect();
    let log = !all_y.is_empty() && all_y.iter().all(|v| *v > 0.0) && {
        let (lo, hi) = bounds(&all_y);
        hi / lo > 1e3
    };
    let ty = |v: f64| if log { v.log10() } else { v };
    let (x0, x1) = pad_range(bounds(&finite(&xs)));
    let (y0, y1) = pad_range(bounds(&all_y.iter().map(|v| ty(*v)).collect::<Vec<_>>()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(&plot.title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top}V{bottom}H{right}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        escape(&plot.x)
    );
    let ylabel = if log { "value (log10)" } else { "value" };
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, (x, y)) in [(x0, y0), (x1, y1)].into_iter().enumerate() {
        let anchor = if k == 0 { "start" } else { "end" };
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="{anchor}">{}</text>"#,
            px(x),
            bottom + 16.0,
            short(x)
        );
        let yy = HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            left - 6.0,
            yy + 4.0,
            short(y)
        );
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || **y > 0.0))
            .map(|(x, y)| (px(*x), py(*y)))
            .collect();
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.3},{b:.3}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for (a, b) in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{a:.3}" cy="{b:.3}" r="3" fill="{color}"/>"#
            );
        }
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{ly:.3}" fill="{color}" text-anchor="end">{}</text>"#,
            right,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(*x), hi.max(*x))
        })
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi > lo {
        let p = 0.05 * (hi - lo);
        (lo - p, hi + p)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn short(x: f64) -> String {
    format!("{x:.3e}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new("sample", &["case", "eps", "value", "count"]);
        t.push(vec![
            "a".into(),
            0.2.into(),
            (1.0 / 3.0).into(),
            3usize.into(),
        ]);
        t.push(vec![
            "b, quoted".into(),
            0.1.into(),
            f64::NAN.into(),
            4usize.into(),
        ]);
        t.plot = Some(Plot {
            x: "eps".into(),
            ys: vec!["value".into()],
            title: "sample <plot>".into(),
        });
        t
    }

    #[test]
    fn csv_round_trips() {
        let t = sample();
        let bytes = t.to_csv().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "case,eps,value,count\na,2.0000000000000001e-1,3.3333333333333331e-1,3\n"
        ));
        let back = load_csv("sample", &bytes).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows, t.rows);
    }

    #[test]
    fn json_uses_fixed_digits_and_null_for_nan() {
        let text = sample().to_node().render();
        assert!(text.contains(r#""value": 3.3333333333333331e-1"#));
        assert!(text.contains(r#""value": null"#));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rows"][0]["count"], 3);
        assert_eq!(v["rows"][1]["case"], "b, quoted");
    }

    #[test]
    fn nodes_from_serde_values() {
        let v = serde_json::json!({"b": 1, "a": [0.5, null, "x"], "c": true});
        let n = Node::from_value(&v);
        assert_eq!(n.render(), "{\n  \"a\": [\n    5.0000000000000000e-1,\n    null,\n    \"x\"\n  ],\n  \"b\": 1,\n  \"c\": true\n}\n");
    }

    #[test]
    fn svg_is_deterministic_and_escaped() {
        let t = sample();
        let a = t.to_svg().unwrap();
        assert_eq!(a, t.to_svg().unwrap());
        assert!(a.contains("viewBox=\"0 0 640 400\""));
        assert!(a.contains("sample &lt;plot&gt;"));
        assert_eq!(a.matches("<circle").count(), 1);
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("png".parse::<Format>().is_err());
    }
}
