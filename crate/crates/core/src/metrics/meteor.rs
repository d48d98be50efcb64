//! METEOR with exact unigram matching only.

/// Version tag for scores produced by [`meteor`].
pub const METEOR_VERSION: &str = "meteor-exact-1.0";

const ALPHA_WEIGHT: f64 = 9.0;
const PENALTY_GAMMA: f64 = 0.5;
const PENALTY_BETA: i32 = 3;

/// Lowercased runs of alphanumerics and apostrophes; punctuation is dropped.
pub fn meteor_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl MeteorStats {
    pub fn score(&self) -> f64 {
        if self.matches == 0 {
            return 0.0;
        }
        let m = self.matches as f64;
        let p = m / self.candidate_len as f64;
        let r = m / self.reference_len as f64;
        let fmean = 10.0 * p * r / (r + ALPHA_WEIGHT * p);
        let penalty = PENALTY_GAMMA * (self.chunks as f64 / m).powi(PENALTY_BETA);
        fmean * (1.0 - penalty)
    }
}

/// Aligns candidate tokens left to right. Each token takes the unmatched
/// reference occurrence right after the previous match when there is one,
/// which keeps the chunk running, and the first unmatched one otherwise.
pub fn align(candidate: &[String], reference: &[String]) -> MeteorStats {
    let mut used = vec![false; reference.len()];
    let mut prev: Option<(usize, usize)> = None;
    let (mut matches, mut chunks) = (0, 0);
    for (i, tok) in candidate.iter().enumerate() {
        let follow = prev
            .filter(|&(pi, pj)| pi + 1 == i && pj + 1 < reference.len())
            .map(|(_, pj)| pj + 1)
            .filter(|&j| !used[j] && reference[j] == *tok);
        let j = follow.or_else(|| (0..reference.len()).find(|&j| !used[j] && reference[j] == *tok));
        if let Some(j) = j {
            used[j] = true;
            matches += 1;
            if !matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j) {
                chunks += 1;
            }
            prev = Some((i, j));
        }
    }
    MeteorStats {
        matches,
        chunks,
        candidate_len: candidate.len(),
        reference_len: reference.len(),
    }
}

/// Score in [0, 1]; 0 when nothing matches or either side is empty.
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    align(&meteor_tokens(candidate), &meteor_tokens(reference)).score()
}
