//! Directed-graph routines over dense node indices `0..n`.
//!
//! Edges are `(from, to)` pairs and may repeat; routines that need a
//! simple graph collapse parallel edges themselves.

use std::collections::VecDeque;

/// Sorted, deduplicated successor and predecessor lists.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for &(u, v) in edges {
            out[u].push(v);
            inc[v].push(u);
        }
        for l in out.iter_mut().chain(inc.iter_mut()) {
            l.sort_unstable();
            l.dedup();
        }
        Adjacency { out, inc }
    }
}

fn bfs(adj: &[Vec<usize>], sources: &[usize], seen: &mut [bool]) {
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
}

/// Nodes reachable from `src` along directed edges, `src` included.
pub fn reachable_from(n: usize, edges: &[(usize, usize)], src: usize) -> Vec<bool> {
    let adj = Adjacency::new(n, edges);
    let mut seen = vec![false; n];
    bfs(&adj.out, &[src], &mut seen);
    seen
}

/// `m[u][v]` is true iff a directed path `u -> v` exists (reflexive).
pub fn reachability_matrix(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let adj = Adjacency::new(n, edges);
    (0..n)
        .map(|u| {
            let mut seen = vec![false; n];
            bfs(&adj.out, &[u], &mut seen);
            seen
        })
        .collect()
}

/// Union of the descendants and ancestors of `root`, `root` included.
pub fn bidirectional_reach(n: usize, edges: &[(usize, usize)], root: usize) -> Vec<bool> {
    let adj = Adjacency::new(n, edges);
    let mut down = vec![false; n];
    bfs(&adj.out, &[root], &mut down);
    let mut up = vec![false; n];
    bfs(&adj.inc, &[root], &mut up);
    down.iter().zip(&up).map(|(a, b)| *a || *b).collect()
}

/// Weakly connected component id per node; ids follow smallest member.
pub fn weak_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let adj = Adjacency::new(n, edges);
    let undirected: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            let mut l: Vec<usize> = adj.out[u].iter().chain(&adj.inc[u]).copied().collect();
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut seen = vec![false; n];
        bfs(&undirected, &[s], &mut seen);
        for (v, hit) in seen.iter().enumerate() {
            if *hit {
                comp[v] = next;
            }
        }
        next += 1;
    }
    comp
}

/// Flags edges that close a cycle in a depth-first search started at
/// `first` and continued from the remaining nodes in index order.
///
/// Removing the flagged edges leaves an acyclic graph. Self-loops are
/// always flagged.
pub fn back_edges(n: usize, edges: &[(usize, usize)], first: usize) -> Vec<bool> {
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &(u, _)) in edges.iter().enumerate() {
        out_edges[u].push(i);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        New,
        Active,
        Done,
    }
    let mut state = vec![State::New; n];
    let mut flagged = vec![false; edges.len()];
    let order = std::iter::once(first).chain((0..n).filter(|&v| v != first));
    for start in order {
        if state[start] != State::New {
            continue;
        }
        // (node, position in its edge list)
        let mut stack = vec![(start, 0usize)];
        state[start] = State::Active;
        while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
            if *pos < out_edges[u].len() {
                let ei = out_edges[u][*pos];
                *pos += 1;
                let v = edges[ei].1;
                match state[v] {
                    State::New => {
                        state[v] = State::Active;
                        stack.push((v, 0));
                    }
                    State::Active => flagged[ei] = true,
                    State::Done => {}
                }
            } else {
                state[u] = State::Done;
                stack.pop();
            }
        }
    }
    flagged
}

/// Greedy transitive reduction.
///
/// Visits non-exempt edges in index order and drops an edge `(u, v)` when
/// `v` stays reachable from `u` without any direct `u -> v` edge. Exempt
/// edges are never dropped but do carry paths; `bidirectional` edges carry
/// paths in both directions. Reachability is preserved, and no kept
/// non-exempt edge can be dropped afterwards.
pub fn transitive_reduction(n: usize, edges: &[(usize, usize)], exempt: &[bool], bidirectional: &[bool]) -> Vec<bool> {
    assert_eq!(edges.len(), exempt.len());
    assert_eq!(edges.len(), bidirectional.len());
    let mut keep = vec![true; edges.len()];
    for i in 0..edges.len() {
        let (u, v) = edges[i];
        if exempt[i] || bidirectional[i] || u == v {
            continue;
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, &(a, b)) in edges.iter().enumerate() {
            if !keep[j] || (a == u && b == v) {
                continue;
            }
            adj[a].push(b);
            if bidirectional[j] {
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; n];
        bfs(&adj, &[u], &mut seen);
        if seen[v] {
            keep[i] = false;
        }
    }
    keep
}

/// Directed betweenness centrality (Brandes), normalized by
/// `(n-1)(n-2)`; graphs with fewer than three nodes score zero.
pub fn betweenness(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let adj = Adjacency::new(n, edges);
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![-1i64; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj.out[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    if n < 3 {
        return vec![0.0; n];
    }
    let norm = ((n - 1) * (n - 2)) as f64;
    cb.iter().map(|c| c / norm).collect()
}

/// Hop distance from `src` ignoring edge direction; `None` if unreachable.
pub fn undirected_distances(n: usize, edges: &[(usize, usize)], src: usize) -> Vec<Option<usize>> {
    let adj = Adjacency::new(n, edges);
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for &v in adj.out[u].iter().chain(&adj.inc[u]) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Undirected degree counting each edge once, self-loops once.
pub fn degrees(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0; n];
    for &(u, v) in edges {
        deg[u] += 1;
        if u != v {
            deg[v] += 1;
        }
    }
    deg
}
