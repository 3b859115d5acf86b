//! Time partitions and piecewise-linear paths over them.
//!
//! A [`Partition`] is a strictly increasing grid `0 = t_0 < ... < t_N = t_f`.
//! Uniform partitions store `(t_f, N)` and compute node `k` as `k * t_f / N`,
//! so refining by doubling reproduces the coarse nodes bit-for-bit.
//! A [`PwlPath`] holds one vector per node and interpolates linearly between
//! nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Nodes {
    Uniform { t_f: f64, intervals: usize },
    Explicit(Vec<f64>),
}

/// A strictly increasing time grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    nodes: Nodes,
}

impl Partition {
    /// Uniform grid with `intervals + 1` nodes at `k * t_f / intervals`.
    pub fn uniform(t_f: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Input("a partition needs at least one interval".into()));
        }
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive and finite, got {t_f}")));
        }
        Ok(Self { nodes: Nodes::Uniform { t_f, intervals } })
    }

    /// General grid from explicit node times. The first node must be zero.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Input("a partition needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Input(format!("first node must be 0, got {}", nodes[0])));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Input(format!("nodes not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Self { nodes: Nodes::Explicit(nodes) })
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        match &self.nodes {
            Nodes::Uniform { intervals, .. } => *intervals,
            Nodes::Explicit(v) => v.len() - 1,
        }
    }

    /// Number of nodes `N + 1`.
    pub fn len(&self) -> usize {
        self.intervals() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        match &self.nodes {
            Nodes::Uniform { t_f, .. } => *t_f,
            Nodes::Explicit(v) => v[v.len() - 1],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.nodes, Nodes::Uniform { .. })
    }

    /// Time of node `k`.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        match &self.nodes {
            Nodes::Uniform { t_f, intervals } => {
                if k == *intervals {
                    *t_f
                } else {
                    k as f64 * t_f / *intervals as f64
                }
            }
            Nodes::Explicit(v) => v[k],
        }
    }

    /// Width `t_{k+1} - t_k` of interval `k`.
    #[inline]
    pub fn width(&self, k: usize) -> f64 {
        self.node(k + 1) - self.node(k)
    }

    /// Largest interval width.
    pub fn mesh(&self) -> f64 {
        match &self.nodes {
            Nodes::Uniform { t_f, intervals } => t_f / *intervals as f64,
            Nodes::Explicit(_) => (0..self.intervals()).map(|k| self.width(k)).fold(0.0, f64::max),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Partition with every interval split into `2^times` equal pieces.
    pub fn refine(&self, times: u32) -> Self {
        let factor = 1usize << times;
        match &self.nodes {
            Nodes::Uniform { t_f, intervals } => Self { nodes: Nodes::Uniform { t_f: *t_f, intervals: intervals * factor } },
            Nodes::Explicit(v) => {
                let mut out = Vec::with_capacity((v.len() - 1) * factor + 1);
                for w in v.windows(2) {
                    for j in 0..factor {
                        out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
                    }
                }
                out.push(v[v.len() - 1]);
                Self { nodes: Nodes::Explicit(out) }
            }
        }
    }

    /// Index of the interval containing `t` (the last interval for `t = t_f`).
    pub fn locate(&self, t: f64) -> Result<usize> {
        let t_f = self.horizon();
        if !(0.0..=t_f).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {t_f}]")));
        }
        let last = self.intervals() - 1;
        let k = match &self.nodes {
            Nodes::Uniform { intervals, .. } => {
                let guess = ((t / t_f) * *intervals as f64).floor() as usize;
                let mut k = guess.min(last);
                // floor() can land one off when node(k) is not exactly k*t_f/N.
                while k > 0 && self.node(k) > t {
                    k -= 1;
                }
                while k < last && self.node(k + 1) <= t {
                    k += 1;
                }
                k
            }
            Nodes::Explicit(v) => match v.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
                Ok(i) => i.min(last),
                Err(i) => (i - 1).min(last),
            },
        };
        Ok(k)
    }

    /// Index of the node within `tol` of `t`, if any.
    pub fn node_index(&self, t: f64, tol: f64) -> Option<usize> {
        let k = self.locate(t.clamp(0.0, self.horizon())).ok()?;
        [k, k + 1].into_iter().filter(|&i| i < self.len()).find(|&i| (self.node(i) - t).abs() <= tol)
    }

    /// True if every node of `self` is a node of `finer` (to `tol`).
    pub fn is_nested_in(&self, finer: &Partition, tol: f64) -> bool {
        (0..self.len()).all(|k| finer.node_index(self.node(k), tol).is_some())
    }
}

/// Piecewise-linear path in `R^dim` with breaks on a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlPath {
    partition: Partition,
    dim: usize,
    values: Vec<f64>,
}

impl PwlPath {
    /// Build from node values stored row-major, `(N + 1) * dim` entries.
    pub fn new(partition: Partition, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.len() * dim {
            return Err(Error::Input(format!(
                "path needs {} values ({} nodes x dim {dim}), got {}",
                partition.len() * dim,
                partition.len(),
                values.len()
            )));
        }
        Ok(Self { partition, dim, values })
    }

    /// Sample `f` at every node.
    pub fn from_fn(partition: Partition, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(partition.len() * dim);
        for k in 0..partition.len() {
            let v = f(partition.node(k));
            assert_eq!(v.len(), dim, "sampled vector has wrong dimension");
            values.extend_from_slice(&v);
        }
        Self { partition, dim, values }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value stored at node `k`.
    #[inline]
    pub fn node_value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Linear interpolation at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.partition.locate(t)?;
        let (t0, t1) = (self.partition.node(k), self.partition.node(k + 1));
        if t == t0 {
            return Ok(self.node_value(k).to_vec());
        }
        if t == t1 {
            return Ok(self.node_value(k + 1).to_vec());
        }
        let w1 = (t - t0) / (t1 - t0);
        let w0 = (t1 - t) / (t1 - t0);
        Ok(self.node_value(k).iter().zip(self.node_value(k + 1)).map(|(a, b)| w0 * a + w1 * b).collect())
    }

    /// The same path expressed on another partition of the same horizon.
    pub fn resample(&self, partition: &Partition) -> Result<PwlPath> {
        check_horizon(self.partition.horizon(), partition.horizon())?;
        let mut values = Vec::with_capacity(partition.len() * self.dim);
        for k in 0..partition.len() {
            values.extend(self.eval(partition.node(k).min(self.partition.horizon()))?);
        }
        PwlPath::new(partition.clone(), self.dim, values)
    }
}

fn check_horizon(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
        return Err(Error::HorizonMismatch { left: a, right: b });
    }
    Ok(())
}

/// Supremum over time of the Euclidean distance between two paths.
///
/// The difference of two piecewise-linear paths is affine between the nodes
/// of their common refinement, so the supremum is attained on those nodes.
pub fn sup_norm_distance(a: &PwlPath, b: &PwlPath) -> Result<f64> {
    check_horizon(a.partition.horizon(), b.partition.horizon())?;
    if a.dim != b.dim {
        return Err(Error::Input(format!("path dimensions differ: {} vs {}", a.dim, b.dim)));
    }
    let t_f = a.partition.horizon().min(b.partition.horizon());
    let mut times: Vec<f64> = a.partition.nodes();
    times.extend(b.partition.nodes());
    times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    times.dedup();
    let mut best = 0.0f64;
    for t in times {
        let t = t.min(t_f);
        let (va, vb) = (a.eval(t)?, b.eval(t)?);
        let d = va.iter().zip(&vb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        best = best.max(d);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_nodes() {
        let p = Partition::uniform(1.0, 2).unwrap();
        assert_eq!(p.nodes(), vec![0.0, 0.5, 1.0]);
        let p = Partition::uniform(50.0, 1000).unwrap();
        assert!((p.mesh() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn doubling_is_nested() {
        for n in [1usize, 3, 7, 500] {
            let p = Partition::uniform(50.0, n).unwrap();
            let q = p.refine(1);
            assert_eq!(q.intervals(), 2 * n);
            for k in 0..p.len() {
                assert_eq!(p.node(k), q.node(2 * k));
            }
        }
        let e = Partition::from_nodes(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(e.is_nested_in(&e.refine(2), 0.0));
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(Partition::uniform(1.0, 0).is_err());
        assert!(Partition::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(Partition::from_nodes(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn eval_at_nodes_and_midpoints() {
        let p = Partition::uniform(2.0, 4).unwrap();
        let path = PwlPath::from_fn(p, 2, |t| vec![t * t, -t]);
        assert_eq!(path.eval(1.0).unwrap(), vec![1.0, -1.0]);
        let mid = path.eval(0.75).unwrap();
        assert!((mid[0] - 0.5 * (0.25 + 1.0)).abs() < 1e-15);
        assert!(path.eval(2.5).is_err());
        assert!(path.eval(-0.1).is_err());
    }

    #[test]
    fn interpolation_error_of_sine() {
        for n in [10usize, 40, 160] {
            let p = Partition::uniform(2.0 * std::f64::consts::PI, n).unwrap();
            let delta = p.mesh();
            let path = PwlPath::from_fn(p, 1, |t| vec![t.sin()]);
            let mut worst = 0.0f64;
            for i in 0..=10_000 {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 10_000.0;
                worst = worst.max((path.eval(t).unwrap()[0] - t.sin()).abs());
            }
            assert!(worst <= delta * delta / 8.0 + 1e-12, "n={n}: {worst}");
        }
    }

    #[test]
    fn sup_distance_against_dense_sampling() {
        let a = PwlPath::from_fn(Partition::uniform(3.0, 7).unwrap(), 1, |t| vec![(2.0 * t).sin()]);
        let b = PwlPath::from_fn(Partition::from_nodes(vec![0.0, 0.4, 1.1, 1.15, 2.0, 2.9, 3.0]).unwrap(), 1, |t| vec![t.cos()]);
        let exact = sup_norm_distance(&a, &b).unwrap();
        let mut dense = 0.0f64;
        for i in 0..=10_000 {
            let t = 3.0 * i as f64 / 10_000.0;
            dense = dense.max((a.eval(t).unwrap()[0] - b.eval(t).unwrap()[0]).abs());
        }
        assert!(exact >= dense - 1e-12);
        assert!(exact - dense < 1e-3);
        // Dense sampling that includes every breakpoint is exact.
        let mut with_nodes = dense;
        for t in a.partition().nodes().into_iter().chain(b.partition().nodes()) {
            with_nodes = with_nodes.max((a.eval(t).unwrap()[0] - b.eval(t).unwrap()[0]).abs());
        }
        assert!((exact - with_nodes).abs() < 1e-12);
    }

    #[test]
    fn sup_distance_simple_cases() {
        let p = Partition::uniform(1.0, 5).unwrap();
        let a = PwlPath::from_fn(p.clone(), 1, |t| vec![t]);
        let b = PwlPath::from_fn(p, 1, |t| vec![t - 0.3]);
        assert_eq!(sup_norm_distance(&a, &a).unwrap(), 0.0);
        assert!((sup_norm_distance(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        let c = PwlPath::from_fn(Partition::uniform(2.0, 5).unwrap(), 1, |t| vec![t]);
        assert!(matches!(sup_norm_distance(&a, &c), Err(Error::HorizonMismatch { .. })));
    }

    #[test]
    fn resample_roundtrip_on_refinement() {
        let p = Partition::uniform(5.0, 13).unwrap();
        let path = PwlPath::from_fn(p.clone(), 2, |t| vec![t.sin(), t.exp()]);
        let back = path.resample(&p.refine(2)).unwrap().resample(&p).unwrap();
        assert_eq!(back.values(), path.values());
    }

    fn path_strategy() -> impl Strategy<Value = PwlPath> {
        (1usize..12, proptest::collection::vec(-5.0f64..5.0, 13)).prop_map(|(n, v)| {
            let p = Partition::uniform(1.0, n).unwrap();
            PwlPath::new(p, 1, v[..n + 1].to_vec()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn sup_distance_is_a_metric(a in path_strategy(), b in path_strategy(), c in path_strategy()) {
            let ab = sup_norm_distance(&a, &b).unwrap();
            let ba = sup_norm_distance(&b, &a).unwrap();
            let bc = sup_norm_distance(&b, &c).unwrap();
            let ac = sup_norm_distance(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn eval_is_affine_between_nodes(a in path_strategy(), s in 0.0f64..1.0) {
            let p = a.partition().clone();
            let k = ((p.intervals() as f64 * s).floor() as usize).min(p.intervals() - 1);
            let (t0, t1) = (p.node(k), p.node(k + 1));
            let t = t0 + (t1 - t0) * 0.37;
            let v = a.eval(t).unwrap()[0];
            let expect = 0.63 * a.node_value(k)[0] + 0.37 * a.node_value(k + 1)[0];
            prop_assert!((v - expect).abs() < 1e-12);
        }
    }
}
