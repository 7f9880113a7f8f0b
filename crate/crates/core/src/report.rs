//! Plain-text evaluation report: writer, parser and summary table.
//!
//! One record per line, keyword first:
//!
//! ```text
//! fcna-report 1
//! num_classes 4
//! method pearson
//! epsilon 0.01
//! mca 64 0.75
//! per_class 64 1.0 0.5 0.5 1.0
//! confusion 64 4 0 0 0 / 0 2 2 0 / ...
//! correlation 64 256 0.31
//! trend 0 Increasing
//! trend_count Increasing 1
//! ```
//!
//! Floats are written with their shortest round-tripping form, so parsing a
//! written report gives back an identical value. Partial reports (for
//! example only `mca`, `correlation` and `trend_count` lines) are accepted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FcnaError, Result};
use crate::eval::{classify_trends, correlation_matrix_lenient, CorrelationMethod, ScaleResult, Trend};

const HEADER: &str = "fcna-report 1";

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleEntry {
    pub scale: u32,
    pub mca: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub num_classes: usize,
    pub method: CorrelationMethod,
    pub epsilon: f64,
    /// Ascending by scale.
    pub scales: Vec<ScaleEntry>,
    /// `S × S`, NaN where undefined or absent.
    pub correlation: Vec<Vec<f64>>,
    pub trends: Vec<Trend>,
    pub trend_counts: BTreeMap<Trend, usize>,
}

impl EvalReport {
    /// Assembles correlations and trends from per-scale results.
    pub fn build(mut results: Vec<ScaleResult>, method: CorrelationMethod, epsilon: f64) -> Result<Self> {
        results.sort_by_key(|r| r.scale);
        let num_classes = results.first().map_or(0, |r| r.per_class_accuracy.len());
        let scales: Vec<u32> = results.iter().map(|r| r.scale).collect();
        let acc: Vec<Vec<f64>> = results.iter().map(|r| r.per_class_accuracy.clone()).collect();
        let correlation = correlation_matrix_lenient(&scales, &acc, method)?;
        let (trends, trend_counts) = classify_trends(&scales, &acc, epsilon)?;
        let report = EvalReport {
            num_classes,
            method,
            epsilon,
            scales: results
                .into_iter()
                .map(|r| ScaleEntry {
                    scale: r.scale,
                    mca: r.mca,
                    per_class_accuracy: r.per_class_accuracy,
                    confusion: r.confusion,
                })
                .collect(),
            correlation,
            trends,
            trend_counts,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn scale_list(&self) -> Vec<u32> {
        self.scales.iter().map(|s| s.scale).collect()
    }

    /// Checks that the report is complete enough to be written.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcnaError::Eval(m));
        if self.scales.is_empty() {
            return bad("report has no scales".into());
        }
        if self.trends.is_empty() {
            return bad("report has no trend labels".into());
        }
        if self.trends.len() != self.num_classes {
            return bad(format!("{} trend labels for {} classes", self.trends.len(), self.num_classes));
        }
        let s = self.scales.len();
        if self.correlation.len() != s || self.correlation.iter().any(|r| r.len() != s) {
            return bad(format!("correlation matrix is not {s} x {s}"));
        }
        for e in &self.scales {
            if e.per_class_accuracy.len() != self.num_classes {
                return bad(format!("scale {} has {} class accuracies", e.scale, e.per_class_accuracy.len()));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "num_classes {}", self.num_classes);
        let _ = writeln!(out, "method {}", self.method.as_str());
        let _ = writeln!(out, "epsilon {:?}", self.epsilon);
        for e in &self.scales {
            let _ = writeln!(out, "mca {} {:?}", e.scale, e.mca);
            if !e.per_class_accuracy.is_empty() {
                let vals: Vec<String> = e.per_class_accuracy.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "per_class {} {}", e.scale, vals.join(" "));
            }
            if !e.confusion.is_empty() {
                let rows: Vec<String> =
                    e.confusion.iter().map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")).collect();
                let _ = writeln!(out, "confusion {} {}", e.scale, rows.join(" / "));
            }
        }
        for (i, a) in self.scales.iter().enumerate() {
            for (j, b) in self.scales.iter().enumerate().skip(i) {
                let _ = writeln!(out, "correlation {} {} {:?}", a.scale, b.scale, self.correlation[i][j]);
            }
        }
        for (c, t) in self.trends.iter().enumerate() {
            let _ = writeln!(out, "trend {c} {t}");
        }
        for (t, n) in &self.trend_counts {
            let _ = writeln!(out, "trend_count {t} {n}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_text()).map_err(|e| FcnaError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FcnaError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            Some((i, l)) => return Err(parse_err(i, format!("expected {HEADER:?}, found {l:?}"))),
            None => return Err(parse_err(0, "empty report".into())),
        }
        let mut num_classes = None;
        let mut method = CorrelationMethod::Pearson;
        let mut epsilon = f64::NAN;
        let mut entries: BTreeMap<u32, ScaleEntry> = BTreeMap::new();
        let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
        let mut trends: BTreeMap<usize, Trend> = BTreeMap::new();
        let mut trend_counts: BTreeMap<Trend, usize> = BTreeMap::new();

        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<f64> {
                field(&f, k, i)?.parse().map_err(|_| parse_err(i, format!("bad number in {line:?}")))
            };
            let int = |k: usize| -> Result<u64> {
                field(&f, k, i)?.parse().map_err(|_| parse_err(i, format!("bad integer in {line:?}")))
            };
            match f[0] {
                "num_classes" => num_classes = Some(int(1)? as usize),
                "method" => method = field(&f, 1, i)?.parse().map_err(|e: FcnaError| parse_err(i, e.to_string()))?,
                "epsilon" => epsilon = num(1)?,
                "mca" => {
                    let v = num(2)?;
                    entry(&mut entries, int(1)? as u32).mca = v;
                }
                "per_class" => {
                    let vals = (2..f.len()).map(num).collect::<Result<Vec<_>>>()?;
                    entry(&mut entries, int(1)? as u32).per_class_accuracy = vals;
                }
                "confusion" => {
                    let rows = f[2..]
                        .split(|t| *t == "/")
                        .map(|r| {
                            r.iter()
                                .map(|t| t.parse::<u64>().map_err(|_| parse_err(i, format!("bad count {t:?}"))))
                                .collect()
                        })
                        .collect::<Result<Vec<Vec<u64>>>>()?;
                    entry(&mut entries, int(1)? as u32).confusion = rows;
                }
                "correlation" => pairs.push((int(1)? as u32, int(2)? as u32, num(3)?)),
                "trend" => {
                    let t = field(&f, 2, i)?.parse().map_err(|e: FcnaError| parse_err(i, e.to_string()))?;
                    trends.insert(int(1)? as usize, t);
                }
                "trend_count" => {
                    let t = field(&f, 1, i)?.parse().map_err(|e: FcnaError| parse_err(i, e.to_string()))?;
                    trend_counts.insert(t, int(2)? as usize);
                }
                other => return Err(parse_err(i, format!("unknown record {other:?}"))),
            }
        }

        let scales: Vec<ScaleEntry> = entries.into_values().collect();
        let index: BTreeMap<u32, usize> = scales.iter().enumerate().map(|(i, e)| (e.scale, i)).collect();
        for &(a, b, _) in &pairs {
            for s in [a, b] {
                if !index.contains_key(&s) {
                    return Err(parse_err(0, format!("correlation names scale {s} without an mca line")));
                }
            }
        }
        let mut correlation = vec![vec![f64::NAN; scales.len()]; scales.len()];
        for (a, b, r) in pairs {
            let (i, j) = (index[&a], index[&b]);
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
        if trends.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(parse_err(0, "trend labels must cover classes 0..K".into()));
        }
        let trends: Vec<Trend> = trends.into_values().collect();
        let num_classes = num_classes.unwrap_or_else(|| trend_counts.values().sum());
        Ok(EvalReport { num_classes, method, epsilon, scales, correlation, trends, trend_counts })
    }

    /// Human-readable table of MCA per scale, the correlation matrix and trend counts.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8}  {:>8}", "scale", "MCA");
        for e in &self.scales {
            let _ = writeln!(out, "{:>8}  {:>8.3}", e.scale, e.mca);
        }
        let _ = writeln!(out, "\ncorrelation of per-class accuracy ({})", self.method.as_str());
        let _ = write!(out, "{:>8}", "");
        for e in &self.scales {
            let _ = write!(out, "  {:>6}", e.scale);
        }
        out.push('\n');
        for (i, e) in self.scales.iter().enumerate() {
            let _ = write!(out, "{:>8}", e.scale);
            for r in &self.correlation[i] {
                if r.is_nan() {
                    let _ = write!(out, "  {:>6}", "-");
                } else {
                    let _ = write!(out, "  {r:>6.2}");
                }
            }
            out.push('\n');
        }
        let counts: Vec<String> =
            Trend::ALL.iter().map(|t| format!("{t} {}", self.trend_counts.get(t).copied().unwrap_or(0))).collect();
        let _ = writeln!(out, "\ntrends (epsilon {}): {}", self.epsilon, counts.join(", "));
        out
    }
}

fn entry(entries: &mut BTreeMap<u32, ScaleEntry>, scale: u32) -> &mut ScaleEntry {
    entries.entry(scale).or_insert_with(|| ScaleEntry {
        scale,
        mca: f64::NAN,
        per_class_accuracy: Vec::new(),
        confusion: Vec::new(),
    })
}

fn parse_err(line: usize, message: String) -> FcnaError {
    FcnaError::ReportParse { line: line + 1, message }
}

fn field<'a>(f: &[&'a str], k: usize, line: usize) -> Result<&'a str> {
    f.get(k).copied().ok_or_else(|| parse_err(line, format!("missing field {k} in {:?}", f.join(" "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(scale: u32, acc: Vec<f64>) -> ScaleResult {
        let k = acc.len();
        let confusion = (0..k).map(|i| (0..k).map(|j| (i == j) as u64 * 3).collect()).collect();
        ScaleResult { scale, mca: acc.iter().sum::<f64>() / k as f64, per_class_accuracy: acc, confusion }
    }

    fn sample() -> EvalReport {
        EvalReport::build(
            vec![
                result(256, vec![0.9, 0.2, 0.55, 1.0 / 3.0]),
                result(64, vec![0.1, 0.7, 0.5, 0.3]),
                result(128, vec![0.4, 0.6, 0.45, 0.3]),
            ],
            CorrelationMethod::Pearson,
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let r = sample();
        assert_eq!(r.scale_list(), vec![64, 128, 256]);
        assert_eq!(EvalReport::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn empty_trends_cannot_be_written() {
        let mut r = sample();
        r.trends.clear();
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(r.write(f.path()).is_err());
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = "fcna-report 1\nnum_classes 2\nmca 64 abc\n";
        match EvalReport::parse(text) {
            Err(FcnaError::ReportParse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(EvalReport::parse("something else\n").is_err());
    }

    #[test]
    fn summary_lists_every_scale() {
        let s = sample().summary();
        for scale in ["64", "128", "256"] {
            assert!(s.contains(scale));
        }
        assert!(s.contains("1.00"));
    }
}
