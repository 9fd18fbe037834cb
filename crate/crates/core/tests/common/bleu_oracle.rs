//! Deliberately naive BLEU-4: every n-gram is compared against every
//! window by direct slice equality, no hashing.

fn occurrences(gram: &[&str], tokens: &[&str]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| &tokens[i..i + gram.len()] == gram)
        .count()
}

/// `(clipped matches, total n-grams)` for order `n` of one sentence pair.
fn clipped(hyp: &[&str], rf: &[&str], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut matched = 0;
    let total = hyp.len() - n + 1;
    for i in 0..total {
        let g = &hyp[i..i + n];
        // Count each distinct n-gram once, at its first position.
        if (0..i).any(|j| &hyp[j..j + n] == g) {
            continue;
        }
        matched += occurrences(g, hyp).min(occurrences(g, rf));
    }
    (matched, total)
}

pub fn oracle_bleu(hyps: &[Vec<&str>], refs: &[Vec<&str>]) -> f64 {
    let mut m = [0usize; 4];
    let mut t = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let (a, b) = clipped(h, rf, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
    }
    if c == 0 || (0..4).any(|n| m[n] == 0) {
        return 0.0;
    }
    let mut log = 0.0;
    for n in 0..4 {
        log += (m[n] as f64 / t[n] as f64).ln() / 4.0;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * log.exp()
}
