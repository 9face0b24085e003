//! Duration distribution reporting: per-style histogram over [0,40+] plus
//! summary statistics, emitted as CSV.

use std::collections::BTreeMap;

use super::records::{Corpus, Style};
use crate::error::{Error, Result};

pub const HIST_MAX: u32 = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct StyleDurationStats {
    pub style: Style,
    pub count: usize,
    pub mean: f64,
    pub p50: u32,
    pub p95: u32,
    /// bins[d] counts durations == d for d in 0..=40; bins[41] counts > 40.
    pub bins: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationReport {
    pub styles: Vec<StyleDurationStats>,
}

fn nearest_rank(sorted: &[u32], percent: f64) -> u32 {
    let n = sorted.len();
    let rank = ((percent / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn duration_distribution_report(corpus: &Corpus) -> Result<DurationReport> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot report on an empty corpus".into()));
    }
    let mut by_style: BTreeMap<&'static str, (Style, Vec<u32>)> = BTreeMap::new();
    for r in &corpus.records {
        by_style
            .entry(r.style.name())
            .or_insert_with(|| (r.style, Vec::new()))
            .1
            .extend(r.durations.iter().copied());
    }
    let mut styles = Vec::new();
    for (_, (style, mut durations)) in by_style {
        durations.sort_unstable();
        let count = durations.len();
        let mean = durations.iter().map(|&d| d as f64).sum::<f64>() / count as f64;
        let mut bins = vec![0u64; HIST_MAX as usize + 2];
        for &d in &durations {
            let idx = (d.min(HIST_MAX + 1)) as usize;
            bins[idx] += 1;
        }
        styles.push(StyleDurationStats {
            style,
            count,
            mean,
            p50: nearest_rank(&durations, 50.0),
            p95: nearest_rank(&durations, 95.0),
            bins,
        });
    }
    Ok(DurationReport { styles })
}

impl DurationReport {
    /// CSV with a header row and LF line endings: style,metric,value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("style,metric,value\n");
        for s in &self.styles {
            let name = s.style.name();
            out.push_str(&format!("{name},count,{}\n", s.count));
            out.push_str(&format!("{name},mean,{:.4}\n", s.mean));
            out.push_str(&format!("{name},p50,{}\n", s.p50));
            out.push_str(&format!("{name},p95,{}\n", s.p95));
            for (d, &c) in s.bins.iter().enumerate() {
                if d <= HIST_MAX as usize {
                    out.push_str(&format!("{name},bin_{d},{c}\n"));
                } else {
                    out.push_str(&format!("{name},bin_over_{HIST_MAX},{c}\n"));
                }
            }
        }
        out
    }

    pub fn style(&self, style: Style) -> Option<&StyleDurationStats> {
        self.styles.iter().find(|s| s.style == style)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::records::UtteranceRecord;
    use crate::corpus::synthetic::{generate_synthetic_corpus, GeneratorConfig};

    #[test]
    fn single_utterance_histogram() {
        let corpus = Corpus {
            records: vec![UtteranceRecord {
                id: "u".into(),
                speaker: "s".into(),
                style: Style::Reading,
                phonemes: vec!["a".into(), "b".into()],
                durations: vec![2, 2],
                pitch: vec![0.0, 0.0],
                mel: None,
            }],
        };
        let report = duration_distribution_report(&corpus).unwrap();
        let stats = report.style(Style::Reading).unwrap();
        assert_eq!(stats.bins[2], 2);
        assert_eq!(stats.count, 2);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(duration_distribution_report(&Corpus::default()).is_err());
    }

    #[test]
    fn reading_p95_at_most_25_and_spontaneous_above() {
        let reading = generate_synthetic_corpus(&GeneratorConfig::reading(), 11).unwrap();
        let r = duration_distribution_report(&reading).unwrap();
        assert!(r.style(Style::Reading).unwrap().p95 <= 25);

        let mut cfg = GeneratorConfig::spontaneous();
        cfg.utterances = 100;
        let spont = generate_synthetic_corpus(&cfg, 11).unwrap();
        let s = duration_distribution_report(&spont).unwrap();
        assert!(s.style(Style::Spontaneous).unwrap().p95 > 25);
    }

    #[test]
    fn histogram_sums_to_total_count() {
        let cfg = GeneratorConfig::spontaneous();
        let corpus = generate_synthetic_corpus(&cfg, 2).unwrap();
        let report = duration_distribution_report(&corpus).unwrap();
        for s in &report.styles {
            let total: u64 = s.bins.iter().sum();
            assert_eq!(total as usize, s.count);
        }
    }

    #[test]
    fn csv_has_header_and_lf() {
        let cfg = GeneratorConfig::reading();
        let corpus = generate_synthetic_corpus(&cfg, 2).unwrap();
        let csv = duration_distribution_report(&corpus).unwrap().to_csv();
        assert!(csv.starts_with("style,metric,value\n"));
        assert!(!csv.contains('\r'));
    }
}
