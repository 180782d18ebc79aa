//! CSV writers and readers for command outputs, and the SVG scatter plot.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use popident::appendix::Landscape;

use crate::error::CliError;

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(path))?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::config(format!("{}: {s:?}: {e}", path.display())))
}

/// Square matrix with fit labels as the first column and the header.
pub fn write_matrix(path: &Path, labels: &[usize], m: &[Vec<f64>]) -> Result<(), CliError> {
    let mut header = vec!["start_index".to_string()];
    header.extend(labels.iter().map(usize::to_string));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(m)
        .map(|(l, row)| std::iter::once(l.to_string()).chain(row.iter().map(f64::to_string)).collect())
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &h, &rows)
}

pub fn read_matrix(path: &Path) -> Result<(Vec<usize>, Vec<Vec<f64>>), CliError> {
    let (header, rows) = read_rows(path)?;
    let labels = header.iter().skip(1).map(|s| parse(path, s)).collect::<Result<Vec<usize>, _>>()?;
    let mut m = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        if r.len() != labels.len() + 1 || parse::<usize>(path, &r[0])? != labels[k] {
            return Err(CliError::config(format!("{}: malformed row {}", path.display(), k + 1)));
        }
        m.push(r[1..].iter().map(|v| parse(path, v)).collect::<Result<Vec<f64>, _>>()?);
    }
    Ok((labels, m))
}

pub const LANDSCAPE_HEADER: [&str; 5] = ["mu_a", "mu_b", "loglik", "mc_se", "rank"];

pub fn write_landscape(path: &Path, l: &Landscape) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = l
        .samples
        .iter()
        .zip(&l.ranks)
        .map(|(s, r)| vec![s.mu_a.to_string(), s.mu_b.to_string(), s.loglik.to_string(), s.mc_se.to_string(), r.to_string()])
        .collect();
    write_rows(path, &LANDSCAPE_HEADER, &rows)
}

/// `(mu_a, mu_b, loglik, mc_se, rank)` per row.
pub fn read_landscape(path: &Path) -> Result<Vec<(f64, f64, f64, f64, usize)>, CliError> {
    let (header, rows) = read_rows(path)?;
    if header != LANDSCAPE_HEADER {
        return Err(CliError::config(format!("{}: unexpected header {header:?}", path.display())));
    }
    rows.iter()
        .map(|r| Ok((parse(path, &r[0])?, parse(path, &r[1])?, parse(path, &r[2])?, parse(path, &r[3])?, parse(path, &r[4])?)))
        .collect()
}

/// Scatter of the landscape: flagged points filled, the rest hollow and
/// shaded by rank; diamonds at the true means and their swap; dashed
/// diagonal for the relabelling symmetry.
pub fn landscape_svg(l: &Landscape, truth: (f64, f64), title: &str) -> String {
    const W: f64 = 520.0;
    const M: f64 = 56.0;
    let xs = l.samples.iter().map(|s| s.mu_a).chain([truth.0, truth.1]);
    let ys = l.samples.iter().map(|s| s.mu_b).chain([truth.0, truth.1]);
    let lo = xs.clone().chain(ys.clone()).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = xs.chain(ys).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |v: f64| M + (v - lo) / span * (W - 2.0 * M);
    let py = |v: f64| W - M - (v - lo) / span * (W - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{W}" viewBox="0 0 {W} {W}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{title}</text>"#, W / 2.0);
    let (x0, x1, y0, y1) = (px(lo), px(lo + span), py(lo), py(lo + span));
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for k in 0..=4 {
        let v = lo + span * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{v:.2}</text>"#, px(v), y0 + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end" font-family="sans-serif">{v:.2}</text>"#, x0 - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif">mu_a</text>"#, W / 2.0, W - 14.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {})">mu_b</text>"#, W / 2.0, W / 2.0);
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#888" stroke-dasharray="6 4"/>"##);

    let n = l.samples.len().max(1) as f64;
    let mut order: Vec<usize> = (0..l.samples.len()).collect();
    order.sort_by(|&i, &j| l.ranks[j].cmp(&l.ranks[i]));
    for i in order {
        let p = &l.samples[i];
        let (cx, cy) = (px(p.mu_a), py(p.mu_b));
        if l.flagged[i] {
            let _ = writeln!(s, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="#c0392b"/>"##);
        } else {
            let shade = 60.0 + 160.0 * (l.ranks[i] as f64 / n);
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="none" stroke="rgb({0:.0},{0:.0},{0:.0})"/>"#, shade);
        }
    }
    for (a, b) in [truth, (truth.1, truth.0)] {
        let (cx, cy) = (px(a), py(b));
        let _ = writeln!(
            s,
            r##"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#f1c40f" stroke="black"/>"##,
            cx, cy - 7.0, cx + 7.0, cy, cx, cy + 7.0, cx - 7.0, cy
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = vec![vec![1.0, 0.1 + 0.2], vec![0.1 + 0.2, 1.0]];
        write_matrix(&p, &[7, 3], &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), (vec![7, 3], m));
    }
}
