//! Suffix array construction by induced sorting (SA-IS) over an integer
//! alphabet.

const EMPTY: u32 = u32::MAX;

/// Suffix array of `text`, whose symbols are all `< sigma`.
///
/// The last symbol must be a unique minimum (the sentinel, normally 0).
pub fn suffix_array(text: &[u32], sigma: usize) -> Vec<u32> {
    assert!(text.len() < EMPTY as usize, "text too long for 32-bit suffix array");
    if text.is_empty() {
        return Vec::new();
    }
    debug_assert!(text.iter().all(|&c| (c as usize) < sigma));
    debug_assert!(text[..text.len() - 1].iter().all(|&c| c > text[text.len() - 1]));
    let mut sa = vec![EMPTY; text.len()];
    sais(text, sigma, &mut sa);
    sa
}

fn classify(s: &[u32]) -> Vec<bool> {
    // true = S-type
    let n = s.len();
    let mut stype = vec![false; n];
    stype[n - 1] = true;
    for i in (0..n - 1).rev() {
        stype[i] = s[i] < s[i + 1] || (s[i] == s[i + 1] && stype[i + 1]);
    }
    stype
}

#[inline]
fn is_lms(stype: &[bool], i: usize) -> bool {
    i > 0 && stype[i] && !stype[i - 1]
}

fn bucket_sizes(s: &[u32], sigma: usize) -> Vec<u32> {
    let mut sizes = vec![0u32; sigma];
    for &c in s {
        sizes[c as usize] += 1;
    }
    sizes
}

fn bucket_heads(sizes: &[u32]) -> Vec<u32> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&c| {
            let h = acc;
            acc += c;
            h
        })
        .collect()
}

fn bucket_tails(sizes: &[u32]) -> Vec<u32> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&c| {
            acc += c;
            acc
        })
        .collect()
}

fn induce(s: &[u32], stype: &[bool], sizes: &[u32], sa: &mut [u32]) {
    let n = s.len();
    let mut heads = bucket_heads(sizes);
    for i in 0..n {
        let j = sa[i];
        if j == EMPTY || j == 0 {
            continue;
        }
        let p = j as usize - 1;
        if !stype[p] {
            let c = s[p] as usize;
            sa[heads[c] as usize] = p as u32;
            heads[c] += 1;
        }
    }
    let mut tails = bucket_tails(sizes);
    for i in (0..n).rev() {
        let j = sa[i];
        if j == EMPTY || j == 0 {
            continue;
        }
        let p = j as usize - 1;
        if stype[p] {
            let c = s[p] as usize;
            tails[c] -= 1;
            sa[tails[c] as usize] = p as u32;
        }
    }
}

fn lms_substrings_equal(s: &[u32], stype: &[bool], a: usize, b: usize) -> bool {
    let n = s.len();
    if a == n - 1 || b == n - 1 {
        return a == b;
    }
    let mut k = 0;
    loop {
        let (x, y) = (a + k, b + k);
        if s[x] != s[y] || stype[x] != stype[y] {
            return false;
        }
        if k > 0 && (is_lms(stype, x) || is_lms(stype, y)) {
            return is_lms(stype, x) && is_lms(stype, y);
        }
        k += 1;
    }
}

fn sais(s: &[u32], sigma: usize, sa: &mut [u32]) {
    let n = s.len();
    if n == 1 {
        sa[0] = 0;
        return;
    }
    let stype = classify(s);
    let sizes = bucket_sizes(s, sigma);

    // Stage 1: sort LMS substrings.
    sa.fill(EMPTY);
    let mut tails = bucket_tails(&sizes);
    for i in (1..n).rev() {
        if is_lms(&stype, i) {
            let c = s[i] as usize;
            tails[c] -= 1;
            sa[tails[c] as usize] = i as u32;
        }
    }
    induce(s, &stype, &sizes, sa);

    // Compact sorted LMS positions to the front.
    let mut m = 0;
    for i in 0..n {
        let p = sa[i];
        if p != EMPTY && is_lms(&stype, p as usize) {
            sa[m] = p;
            m += 1;
        }
    }

    // Name LMS substrings; names stored at sa[m + pos/2].
    sa[m..].fill(EMPTY);
    let mut name = 0u32;
    let mut prev: Option<usize> = None;
    for i in 0..m {
        let p = sa[i] as usize;
        if let Some(q) = prev {
            if !lms_substrings_equal(s, &stype, p, q) {
                name += 1;
            }
        }
        prev = Some(p);
        sa[m + p / 2] = name;
    }
    let distinct = name as usize + 1;

    // Reduced string in text order.
    let reduced: Vec<u32> = sa[m..n].iter().copied().filter(|&v| v != EMPTY).collect();
    debug_assert_eq!(reduced.len(), m);

    // Stage 2: sort LMS suffixes, recursing when names collide.
    let mut reduced_sa = vec![EMPTY; m];
    if distinct < m {
        sais(&reduced, distinct, &mut reduced_sa);
    } else {
        for (i, &c) in reduced.iter().enumerate() {
            reduced_sa[c as usize] = i as u32;
        }
    }
    let lms_positions: Vec<u32> = (1..n).filter(|&i| is_lms(&stype, i)).map(|i| i as u32).collect();
    let sorted_lms: Vec<u32> = reduced_sa.iter().map(|&r| lms_positions[r as usize]).collect();

    // Stage 3: place sorted LMS suffixes at bucket tails and induce.
    sa.fill(EMPTY);
    let mut tails = bucket_tails(&sizes);
    for &p in sorted_lms.iter().rev() {
        let c = s[p as usize] as usize;
        tails[c] -= 1;
        sa[tails[c] as usize] = p;
    }
    induce(s, &stype, &sizes, sa);
}
