use crate::error::{Error, Result};

/// Disjoint-set forest with path compression and union by rank.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    /// Consecutive labels, numbered by each component's smallest member.
    pub labels: Vec<usize>,
    pub count: usize,
}

pub fn connected_components(n: usize, edges: &[(usize, usize)]) -> Result<Components> {
    let mut uf = UnionFind::new(n);
    for &(p, q) in edges {
        if p >= n || q >= n {
            return Err(Error::Input(format!(
                "edge ({p}, {q}) out of range for n = {n}"
            )));
        }
        uf.union(p, q);
    }
    let mut root_label = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut count = 0;
    for i in 0..n {
        let root = uf.find(i);
        if root_label[root] == usize::MAX {
            root_label[root] = count;
            count += 1;
        }
        labels.push(root_label[root]);
    }
    Ok(Components { labels, count })
}
