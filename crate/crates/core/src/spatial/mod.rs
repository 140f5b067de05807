//! In-memory r-tree over latitude/longitude rectangles (Guttman, quadratic split).

use crate::domain::BoundingBox;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub const DEFAULT_MAX_FANOUT: usize = 16;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf(Vec<(BoundingBox, T)>),
    Internal(Vec<(BoundingBox, Box<Node<T>>)>),
}

impl<T> Node<T> {
    fn len(&self) -> usize {
        match self {
            Node::Leaf(e) => e.len(),
            Node::Internal(c) => c.len(),
        }
    }

    fn bbox(&self) -> Option<BoundingBox> {
        match self {
            Node::Leaf(e) => union_all(e.iter().map(|(b, _)| b)),
            Node::Internal(c) => union_all(c.iter().map(|(b, _)| b)),
        }
    }
}

fn union_all<'a>(mut it: impl Iterator<Item = &'a BoundingBox>) -> Option<BoundingBox> {
    let first = *it.next()?;
    Some(it.fold(first, |acc, b| acc.union(b)))
}

fn enlargement(current: &BoundingBox, add: &BoundingBox) -> f64 {
    current.union(add).area() - current.area()
}

fn margin(b: &BoundingBox) -> f64 {
    (b.max_lat - b.min_lat) + (b.max_lon - b.min_lon)
}

type Entries<X> = Vec<(BoundingBox, X)>;

/// Quadratic split of an overfull entry list into two groups of at least `min` each.
fn quadratic_split<X>(entries: Entries<X>, min: usize) -> (Entries<X>, Entries<X>) {
    let n = entries.len();
    let (mut s1, mut s2, mut worst) = (0, 1, (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for i in 0..n {
        for j in i + 1..n {
            let u = entries[i].0.union(&entries[j].0);
            let waste = (u.area() - entries[i].0.area() - entries[j].0.area(), margin(&u));
            if waste.0 > worst.0 || (waste.0 == worst.0 && waste.1 > worst.1) {
                (s1, s2, worst) = (i, j, waste);
            }
        }
    }
    let mut rest: Vec<Option<(BoundingBox, X)>> = entries.into_iter().map(Some).collect();
    let e1 = rest[s1].take().expect("seed");
    let e2 = rest[s2].take().expect("seed");
    let (mut b1, mut b2) = (e1.0, e2.0);
    let (mut g1, mut g2) = (vec![e1], vec![e2]);
    let mut remaining = n - 2;
    while remaining > 0 {
        if g1.len() + remaining == min {
            g1.extend(rest.iter_mut().filter_map(Option::take));
            break;
        }
        if g2.len() + remaining == min {
            g2.extend(rest.iter_mut().filter_map(Option::take));
            break;
        }
        // Pick the entry with the strongest preference for one group.
        let mut pick = None;
        let mut best_diff = f64::NEG_INFINITY;
        for (k, e) in rest.iter().enumerate() {
            if let Some((b, _)) = e {
                let diff = (enlargement(&b1, b) - enlargement(&b2, b)).abs();
                if diff > best_diff {
                    best_diff = diff;
                    pick = Some(k);
                }
            }
        }
        let e = rest[pick.expect("remaining > 0")].take().expect("present");
        let (d1, d2) = (enlargement(&b1, &e.0), enlargement(&b2, &e.0));
        let to_first = match d1.partial_cmp(&d2).unwrap_or(Ordering::Equal) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => match b1.area().partial_cmp(&b2.area()).unwrap_or(Ordering::Equal) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => g1.len() <= g2.len(),
            },
        };
        if to_first {
            b1 = b1.union(&e.0);
            g1.push(e);
        } else {
            b2 = b2.union(&e.0);
            g2.push(e);
        }
        remaining -= 1;
    }
    (g1, g2)
}

/// Structural violation found by [`RTree::audit`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("r-tree audit failed: {0}")]
pub struct AuditError(pub String);

#[derive(Debug, Clone)]
pub struct RTree<T> {
    root: Node<T>,
    len: usize,
    max: usize,
    min: usize,
}

impl<T> Default for RTree<T> {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_FANOUT)
    }
}

impl<T> RTree<T> {
    /// Fanout `max` (at least 4); minimum fill is `ceil(max / 2)`.
    pub fn new(max: usize) -> Self {
        let max = max.max(4);
        Self { root: Node::Leaf(Vec::new()), len: 0, max, min: max.div_ceil(2) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.root.bbox()
    }

    pub fn insert(&mut self, bbox: BoundingBox, item: T) {
        if let Some((split_box, split)) = Self::insert_into(&mut self.root, bbox, item, self.max, self.min) {
            let old = std::mem::replace(&mut self.root, Node::Leaf(Vec::new()));
            let old_box = old.bbox().expect("split leaves entries behind");
            self.root = Node::Internal(vec![(old_box, Box::new(old)), (split_box, split)]);
        }
        self.len += 1;
    }

    fn insert_into(node: &mut Node<T>, bbox: BoundingBox, item: T, max: usize, min: usize) -> Option<(BoundingBox, Box<Node<T>>)> {
        match node {
            Node::Leaf(entries) => {
                entries.push((bbox, item));
                if entries.len() <= max {
                    return None;
                }
                let (a, b) = quadratic_split(std::mem::take(entries), min);
                *entries = a;
                let split = Node::Leaf(b);
                Some((split.bbox().expect("non-empty"), Box::new(split)))
            }
            Node::Internal(children) => {
                let mut best = 0;
                let mut key = (f64::INFINITY, f64::INFINITY);
                for (i, (b, _)) in children.iter().enumerate() {
                    let k = (enlargement(b, &bbox), b.area());
                    if k.0 < key.0 || (k.0 == key.0 && k.1 < key.1) {
                        key = k;
                        best = i;
                    }
                }
                let child = &mut children[best];
                let split = Self::insert_into(&mut child.1, bbox, item, max, min);
                child.0 = child.1.bbox().expect("child non-empty");
                if let Some(s) = split {
                    children.push(s);
                }
                if children.len() <= max {
                    return None;
                }
                let (a, b) = quadratic_split(std::mem::take(children), min);
                *children = a;
                let split = Node::Internal(b);
                Some((split.bbox().expect("non-empty"), Box::new(split)))
            }
        }
    }

    /// Visit every entry whose rectangle intersects `query`.
    pub fn query<'a>(&'a self, query: &BoundingBox, mut visit: impl FnMut(&'a BoundingBox, &'a T)) {
        fn walk<'a, T>(node: &'a Node<T>, q: &BoundingBox, visit: &mut impl FnMut(&'a BoundingBox, &'a T)) {
            match node {
                Node::Leaf(entries) => {
                    for (b, item) in entries {
                        if b.intersects(q) {
                            visit(b, item);
                        }
                    }
                }
                Node::Internal(children) => {
                    for (b, child) in children {
                        if b.intersects(q) {
                            walk(child, q, visit);
                        }
                    }
                }
            }
        }
        walk(&self.root, query, &mut visit);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BoundingBox, &T)> {
        let mut out = Vec::with_capacity(self.len);
        self.query(&BoundingBox::world(), |b, t| out.push((b, t)));
        out.into_iter()
    }

    /// Item minimizing `(distance(item), tie(item))`.
    ///
    /// `lower_bound(rect)` must never exceed the distance of any item inside `rect`.
    /// Subtrees whose bound exceeds the best distance by more than `slack` are pruned.
    pub fn nearest_by<D, K>(
        &self,
        lower_bound: impl Fn(&BoundingBox) -> f64,
        distance: D,
        tie: impl Fn(&T) -> K,
        slack: f64,
    ) -> Option<(&T, f64)>
    where
        D: Fn(&T) -> f64,
        K: Ord,
    {
        struct Pending<'a, T>(f64, &'a Node<T>);
        impl<T> PartialEq for Pending<'_, T> {
            fn eq(&self, o: &Self) -> bool {
                self.0 == o.0
            }
        }
        impl<T> Eq for Pending<'_, T> {}
        impl<T> PartialOrd for Pending<'_, T> {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl<T> Ord for Pending<'_, T> {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0)
            }
        }

        let mut heap = BinaryHeap::new();
        heap.push(Pending(0.0, &self.root));
        let mut best: Option<(&T, f64, K)> = None;
        while let Some(Pending(bound, node)) = heap.pop() {
            if let Some((_, d, _)) = &best {
                if bound > *d + slack {
                    break;
                }
            }
            match node {
                Node::Leaf(entries) => {
                    for (_, item) in entries {
                        let d = distance(item);
                        let better = match &best {
                            None => true,
                            Some((_, bd, bk)) => d < *bd || (d == *bd && tie(item) < *bk),
                        };
                        if better {
                            best = Some((item, d, tie(item)));
                        }
                    }
                }
                Node::Internal(children) => {
                    for (b, child) in children {
                        heap.push(Pending(lower_bound(b), child));
                    }
                }
            }
        }
        best.map(|(t, d, _)| (t, d))
    }

    /// Check containment, fill factor (except the root) and uniform leaf depth.
    pub fn audit(&self) -> Result<(), AuditError> {
        let mut leaf_depth = None;
        let mut count = 0;
        self.audit_node(&self.root, None, 0, true, &mut leaf_depth, &mut count)?;
        if count != self.len {
            return Err(AuditError(format!("tree holds {count} entries but len is {}", self.len)));
        }
        Ok(())
    }

    fn audit_node(
        &self,
        node: &Node<T>,
        parent_box: Option<&BoundingBox>,
        depth: usize,
        is_root: bool,
        leaf_depth: &mut Option<usize>,
        count: &mut usize,
    ) -> Result<(), AuditError> {
        let n = node.len();
        if n > self.max {
            return Err(AuditError(format!("node at depth {depth} has {n} > {} entries", self.max)));
        }
        if !is_root && n < self.min {
            return Err(AuditError(format!("node at depth {depth} has {n} < {} entries", self.min)));
        }
        if is_root && matches!(node, Node::Internal(_)) && n < 2 {
            return Err(AuditError("internal root with fewer than two children".into()));
        }
        if let (Some(pb), Some(own)) = (parent_box, node.bbox()) {
            if !pb.contains(&own) {
                return Err(AuditError(format!("child rectangle at depth {depth} escapes its parent")));
            }
        }
        match node {
            Node::Leaf(entries) => {
                match leaf_depth {
                    None => *leaf_depth = Some(depth),
                    Some(d) if *d != depth => return Err(AuditError(format!("leaves at depths {d} and {depth}"))),
                    _ => {}
                }
                *count += entries.len();
            }
            Node::Internal(children) => {
                for (b, child) in children {
                    let actual = child.bbox().ok_or_else(|| AuditError("empty non-root node".into()))?;
                    if !b.contains(&actual) {
                        return Err(AuditError(format!("stored rectangle at depth {depth} does not cover its child")));
                    }
                    self.audit_node(child, Some(b), depth + 1, false, leaf_depth, count)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GeoPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn point_box(lat: f64, lon: f64) -> BoundingBox {
        BoundingBox::of_point(GeoPoint::new(lat, lon).unwrap())
    }

    #[test]
    fn query_matches_scan_and_audit_holds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut tree = RTree::new(16);
        let mut all = Vec::new();
        for i in 0..5_000u32 {
            let b = point_box(rng.gen_range(35.0..35.1), rng.gen_range(-85.4..-85.3));
            tree.insert(b, i);
            all.push((b, i));
            if i % 1000 == 999 {
                tree.audit().unwrap();
            }
        }
        for _ in 0..50 {
            let (a, b): (f64, f64) = (rng.gen_range(35.0..35.1), rng.gen_range(35.0..35.1));
            let (c, d): (f64, f64) = (rng.gen_range(-85.4..-85.3), rng.gen_range(-85.4..-85.3));
            let q = BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap();
            let mut got = Vec::new();
            tree.query(&q, |_, &i| got.push(i));
            got.sort();
            let want: Vec<u32> = all.iter().filter(|(bb, _)| bb.intersects(&q)).map(|(_, i)| *i).collect();
            assert_eq!(got, want);
        }
        assert_eq!(tree.iter().count(), 5_000);
    }

    #[test]
    fn duplicate_points_split_cleanly() {
        let mut tree = RTree::new(4);
        for i in 0..200 {
            tree.insert(point_box(35.0, -85.0), i);
        }
        tree.audit().unwrap();
        let mut n = 0;
        tree.query(&point_box(35.0, -85.0), |_, _| n += 1);
        assert_eq!(n, 200);
    }

    #[test]
    fn nearest_with_ties_prefers_smallest_key() {
        let mut tree = RTree::new(4);
        for (i, lat) in [35.0, 35.0, 35.5, 34.0, 35.0].into_iter().enumerate() {
            tree.insert(point_box(lat, -85.0), i);
        }
        let target: f64 = 35.0;
        let dist = |i: &usize| ([35.0, 35.0, 35.5, 34.0, 35.0][*i] - target).abs();
        let lb = |b: &BoundingBox| if target < b.min_lat { b.min_lat - target } else if target > b.max_lat { target - b.max_lat } else { 0.0 };
        let (best, d) = tree.nearest_by(lb, dist, |i| *i, 0.0).unwrap();
        assert_eq!((*best, d), (0, 0.0));
        assert!(RTree::<usize>::new(8).nearest_by(lb, dist, |i| *i, 0.0).is_none());
    }

    proptest! {
        #[test]
        fn invariants_hold_for_any_insert_sequence(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..0.1, 0.0f64..0.1), 0..300),
            fanout in 4usize..20,
        ) {
            let mut tree = RTree::new(fanout);
            for (i, (lat, lon, h, w)) in pts.iter().enumerate() {
                tree.insert(BoundingBox::new(*lat, *lon, lat + h, lon + w).unwrap(), i);
            }
            prop_assert!(tree.audit().is_ok());
            prop_assert_eq!(tree.len(), pts.len());
        }
    }
}
