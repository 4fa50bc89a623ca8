//! Splitting documents into two contiguous halves at a whitespace boundary.

use crate::corpus_io::Document;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfPair {
    pub source_id: String,
    /// Id `source#a`, the text before the boundary.
    pub half_a: Document,
    /// Id `source#b`, the text after the boundary.
    pub half_b: Document,
    /// The whitespace run removed between the halves.
    pub boundary: String,
}

impl HalfPair {
    /// The source text, `half_a + boundary + half_b`.
    pub fn reconstruct(&self) -> String {
        format!("{}{}{}", self.half_a.text, self.boundary, self.half_b.text)
    }
}

/// Splits at the whitespace run nearest the character midpoint. Only runs with
/// non-whitespace text on both sides qualify; the distance of a run is that of
/// its closest character `p`, measured as `|2p + 1 − N|`, and ties go to the
/// earlier run. `None` when no run qualifies (fewer than two words).
pub fn split_halves(doc: &Document) -> Option<HalfPair> {
    let chars: Vec<(usize, char)> = doc.text.char_indices().collect();
    let n = chars.len();
    let first = chars.iter().position(|(_, c)| !c.is_whitespace())?;
    let last = chars.iter().rposition(|(_, c)| !c.is_whitespace())?;
    // (distance, run start, run end) in char positions.
    let mut best: Option<(usize, usize, usize)> = None;
    let mut p = first;
    while p < last {
        if !chars[p].1.is_whitespace() {
            p += 1;
            continue;
        }
        let start = p;
        while chars[p].1.is_whitespace() {
            p += 1;
        }
        let dist = (start..p).map(|q| (2 * q + 1).abs_diff(n)).min().expect("non-empty run");
        if best.is_none_or(|(d, _, _)| dist < d) {
            best = Some((dist, start, p));
        }
    }
    let (_, start, end) = best?;
    let (s, e) = (chars[start].0, chars[end].0);
    Some(HalfPair {
        source_id: doc.id.clone(),
        half_a: Document::new(format!("{}#a", doc.id), &doc.text[..s]),
        half_b: Document::new(format!("{}#b", doc.id), &doc.text[e..]),
        boundary: doc.text[s..e].to_string(),
    })
}

/// Splits every document; returns the pairs and the number of documents that
/// could not be split.
pub fn split_corpus(docs: &[Document]) -> (Vec<HalfPair>, usize) {
    let pairs: Vec<HalfPair> = docs.iter().filter_map(split_halves).collect();
    let skipped = docs.len() - pairs.len();
    (pairs, skipped)
}
