//! Corpus BLEU-4 with exponential smoothing and 13a tokenization, matching
//! the sacrebleu defaults (mixed case, single reference).

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    pub score: f64,
    /// Smoothed per-order precisions in percent.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
}

static RULES: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        (Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(), " ${1} "),
        (Regex::new(r"([^0-9])([.,])").unwrap(), "${1} ${2} "),
        (Regex::new(r"([.,])([^0-9])").unwrap(), " ${1} ${2}"),
        (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
    ]
});

/// The mteval-v13a tokenizer.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line
        .trim_end()
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in RULES.iter() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(str::to_string).collect()
}

fn ngrams(tokens: &[String]) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for n in 1..=MAX_ORDER {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU of `hypotheses` against one reference each.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize_13a(h.as_ref());
        let r = tokenize_13a(r.as_ref());
        sys_len += h.len();
        ref_len += r.len();
        let rc = ngrams(&r);
        for (g, c) in ngrams(&h) {
            let n = g.len() - 1;
            total[n] += c;
            correct[n] += c.min(rc.get(g).copied().unwrap_or(0));
        }
    }
    Ok(score_from_counts(correct, total, sys_len, ref_len))
}

/// Score from sufficient statistics.
pub fn score_from_counts(
    correct: [usize; MAX_ORDER],
    total: [usize; MAX_ORDER],
    sys_len: usize,
    ref_len: usize,
) -> BleuReport {
    let brevity_penalty = if sys_len < ref_len {
        if sys_len > 0 {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_ORDER];
    let mut report = BleuReport {
        score: 0.0,
        precisions,
        brevity_penalty,
        sys_len,
        ref_len,
        correct,
        total,
    };
    if correct.iter().all(|&c| c == 0) {
        return report;
    }
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if total[n] == 0 {
            break;
        }
        precisions[n] = if correct[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * total[n] as f64)
        } else {
            100.0 * correct[n] as f64 / total[n] as f64
        };
    }
    // Averaging logs of fractions rather than percentages keeps a perfect
    // match at exactly 100. A missing order contributes log(0).
    let log_sum: f64 = precisions
        .iter()
        .map(|&p| {
            if p > 0.0 {
                (p / 100.0).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum();
    report.precisions = precisions;
    report.score = 100.0 * brevity_penalty * (log_sum / MAX_ORDER as f64).exp();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_100() {
        let c = ["the cat sat on the mat .", "a b c d e"];
        assert_eq!(bleu(&c, &c).unwrap().score, 100.0);
    }

    #[test]
    fn brevity_case() {
        let r = bleu(&["a b c d"], &["a b c d e"]).unwrap();
        assert_eq!(r.precisions, [100.0; 4]);
        assert!((r.brevity_penalty - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        assert!((r.score - 77.8800783).abs() < 1e-6);
    }

    #[test]
    fn no_matches_is_zero() {
        assert_eq!(bleu(&["x y"], &["a b"]).unwrap().score, 0.0);
        assert_eq!(bleu(&[""], &["a b"]).unwrap().score, 0.0);
    }

    #[test]
    fn count_mismatch() {
        assert!(matches!(
            bleu(&["a"], &["a", "b"]),
            Err(Error::Alignment { left: 1, right: 2 })
        ));
    }

    #[test]
    fn tokenizer_13a() {
        assert_eq!(
            tokenize_13a("Hello, world!"),
            vec!["Hello", ",", "world", "!"]
        );
        assert_eq!(tokenize_13a("3.14 and 1,000"), vec!["3.14", "and", "1,000"]);
        assert_eq!(
            tokenize_13a("a-b 2-3 &amp;"),
            vec!["a-b", "2", "-", "3", "&"]
        );
        assert_eq!(tokenize_13a("end."), vec!["end", "."]);
    }
}
