//! Maximum spanning arborescence decoding (Chu-Liu/Edmonds).
//!
//! Scores are indexed `[head, dependent]` over `{root} ∪ tokens`, node 0
//! being the root. Arcs into the root and self loops are never selected.

use ndarray::Array2;

/// Unconstrained maximum arborescence rooted at node 0. Returns the parent
/// of every node; entry 0 is 0 and meaningless.
pub fn max_arborescence(scores: &Array2<f64>) -> Vec<usize> {
    let n = scores.nrows();
    assert_eq!(n, scores.ncols(), "score matrix must be square");
    if n <= 1 {
        return vec![0; n];
    }
    let mut s = scores.clone();
    for v in 0..n {
        s[(v, v)] = f64::NEG_INFINITY;
        s[(v, 0)] = f64::NEG_INFINITY;
    }
    let mut parents = contract(&s);
    parents[0] = 0;
    parents
}

/// Best arborescence in which exactly one token attaches to the root.
///
/// Solved exactly by trying every candidate root child when the
/// unconstrained optimum has more than one (ties: lowest candidate).
pub fn max_single_root_arborescence(scores: &Array2<f64>) -> Vec<usize> {
    let n = scores.nrows();
    let free = max_arborescence(scores);
    if n <= 2 || free[1..].iter().filter(|&&p| p == 0).count() == 1 {
        return free;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..n {
        let mut s = scores.clone();
        for d in 1..n {
            if d != r {
                s[(0, d)] = f64::NEG_INFINITY;
            }
        }
        let tree = max_arborescence(&s);
        let total = tree_score(scores, &tree);
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, tree));
        }
    }
    best.expect("at least one token").1
}

/// Sum of `scores[parent[d], d]` over tokens `d ≥ 1`.
pub fn tree_score(scores: &Array2<f64>, parents: &[usize]) -> f64 {
    parents.iter().enumerate().skip(1).map(|(d, &h)| scores[(h, d)]).sum()
}

/// Recursive contraction. `s` has forbidden arcs already at -inf.
fn contract(s: &Array2<f64>) -> Vec<usize> {
    let n = s.nrows();
    let mut parent = vec![0usize; n];
    for v in 1..n {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for u in 0..n {
            if u != v && (arg == usize::MAX || s[(u, v)] > best) {
                best = s[(u, v)];
                arg = u;
            }
        }
        parent[v] = arg;
    }
    let cycle = match find_cycle(&parent) {
        None => return parent,
        Some(c) => c,
    };

    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    // Old node -> new node; the cycle becomes the last new node.
    let mut new_id = vec![usize::MAX; n];
    let mut old_of = Vec::new();
    for v in 0..n {
        if !in_cycle[v] {
            new_id[v] = old_of.len();
            old_of.push(v);
        }
    }
    let c = old_of.len();
    let m = c + 1;
    let cycle_score: Vec<f64> = (0..n).map(|v| if in_cycle[v] { s[(parent[v], v)] } else { 0.0 }).collect();

    let mut t = Array2::from_elem((m, m), f64::NEG_INFINITY);
    // For arcs entering the cycle: which cycle node they enter.
    let mut enter = vec![usize::MAX; m];
    // For arcs leaving the cycle: which cycle node they leave from.
    let mut leave = vec![usize::MAX; m];
    for (nu, &u) in old_of.iter().enumerate() {
        for (nw, &w) in old_of.iter().enumerate() {
            t[(nu, nw)] = s[(u, w)];
        }
        for &v in &cycle {
            let val = s[(u, v)] - cycle_score[v];
            if enter[nu] == usize::MAX || val > t[(nu, c)] {
                t[(nu, c)] = val;
                enter[nu] = v;
            }
            let out = s[(v, u)];
            if leave[nu] == usize::MAX || out > t[(c, nu)] {
                t[(c, nu)] = out;
                leave[nu] = v;
            }
        }
    }
    for nv in 0..m {
        t[(nv, nv)] = f64::NEG_INFINITY;
    }
    for nv in 0..m {
        t[(nv, 0)] = f64::NEG_INFINITY;
    }

    let sub = contract(&t);
    let mut result = parent.clone();
    for nw in 1..m {
        let np = sub[nw];
        if nw == c {
            let u = old_of[np];
            result[enter[np]] = u;
        } else {
            let w = old_of[nw];
            result[w] = if np == c { leave[nw] } else { old_of[np] };
        }
    }
    result
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let n = parent.len();
    let mut state = vec![0u8; n]; // 0 unseen, 1 on current path, 2 done
    state[0] = 2;
    for start in 1..n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&x| x == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_token_attaches_to_root() {
        let s = array![[0.0, 5.0], [3.0, 0.0]];
        assert_eq!(max_single_root_arborescence(&s), vec![0, 0]);
    }

    #[test]
    fn breaks_a_two_cycle() {
        // 1 and 2 prefer each other; the root arc decides who enters.
        let s = array![[0.0, 1.0, 2.0], [0.0, 0.0, 10.0], [0.0, 10.0, 0.0]];
        assert_eq!(max_arborescence(&s), vec![0, 2, 0]);
    }

    #[test]
    fn single_root_constraint_changes_the_tree() {
        let s = array![[0.0, 10.0, 10.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert_eq!(max_arborescence(&s), vec![0, 0, 0]);
        assert_eq!(max_single_root_arborescence(&s), vec![0, 0, 1]);
    }
}
