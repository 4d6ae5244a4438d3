//! Gnuplot data and script export from run CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

/// Points of one plotted line.
pub type Series = Vec<(f64, f64)>;

/// Groups `y` against `x` by the value of `series` (one group if `None`).
/// Rows repeating an `x` within a series are averaged.
pub fn extract(csv_path: &Path, x: &str, y: &str, series: Option<&str>) -> Result<BTreeMap<String, Series>> {
    let mut r = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column {name:?}"));
    let (xi, yi) = (col(x)?, col(y)?);
    let si = series.map(col).transpose()?;
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let v = rec.get(i).unwrap_or("");
            v.parse().map_err(|_| anyhow!("non-numeric value {v:?} in column {}", &headers[i]))
        };
        let (xv, yv) = (num(xi)?, num(yi)?);
        let key = si.map_or_else(String::new, |i| rec.get(i).unwrap_or("").to_string());
        let e = acc.entry(key).or_default().entry(xv.to_bits()).or_insert((xv, 0.0, 0));
        e.1 += yv;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, pts)| {
            let mut v: Series = pts.into_values().map(|(x, sum, n)| (x, sum / n as f64)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v)
        })
        .collect())
}

/// Writes `<prefix>.dat` (one gnuplot index block per series) and
/// `<prefix>.gp`; returns both paths.
pub fn write_gnuplot(
    data: &BTreeMap<String, Series>,
    x: &str,
    y: &str,
    series: Option<&str>,
    prefix: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let dat = prefix.with_extension("dat");
    let gp = prefix.with_extension("gp");
    let mut d = String::new();
    for (name, pts) in data {
        writeln!(d, "# {}", if name.is_empty() { y } else { name })?;
        for (xv, yv) in pts {
            writeln!(d, "{xv} {yv}")?;
        }
        d.push_str("\n\n");
    }
    std::fs::write(&dat, d)?;

    let dat_name = dat.file_name().and_then(|s| s.to_str()).unwrap_or("plot.dat");
    let png = prefix.with_extension("png");
    let png_name = png.file_name().and_then(|s| s.to_str()).unwrap_or("plot.png");
    let mut s = String::new();
    writeln!(s, "set terminal pngcairo size 800,500")?;
    writeln!(s, "set output '{png_name}'")?;
    writeln!(s, "set xlabel '{x}'\nset ylabel '{y}'\nset key outside right\nset grid")?;
    let plots: Vec<String> = data
        .keys()
        .enumerate()
        .map(|(i, name)| {
            let title = match series {
                Some(col) => format!("{col}={name}"),
                None => y.to_string(),
            };
            format!("'{dat_name}' index {i} using 1:2 with linespoints title '{title}'")
        })
        .collect();
    writeln!(s, "plot {}", plots.join(", \\\n     "))?;
    std::fs::write(&gp, s)?;
    Ok((dat, gp))
}
