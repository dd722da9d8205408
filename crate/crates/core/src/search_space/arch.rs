use std::fmt;

use serde::{Deserialize, Serialize};

use super::{SpaceError, SupernetSpec};
use crate::autodiff::{softmax, Tensor};

/// One α vector per compound edge, shared by every cell in the stack.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams {
    edges: Vec<Tensor>,
}

impl ArchParams {
    /// All-zero α, i.e. a uniform mixture on every edge.
    pub fn zeros(num_edges: usize, num_ops: usize) -> Self {
        Self {
            edges: (0..num_edges)
                .map(|_| Tensor::zeros(vec![num_ops]).with_requires_grad(true))
                .collect(),
        }
    }

    pub fn for_spec(spec: &SupernetSpec) -> Self {
        Self::zeros(spec.num_edges(), spec.op_set.len())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SpaceError> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if m == 0 {
            return Err(SpaceError::Domain(
                "architecture needs at least one edge and op".into(),
            ));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(SpaceError::Domain("ragged architecture parameters".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SpaceError::Domain(
                "non-finite architecture parameter".into(),
            ));
        }
        Ok(Self {
            edges: rows
                .into_iter()
                .map(|r| Tensor::from_vec(r).with_requires_grad(true))
                .collect(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_ops(&self) -> usize {
        self.edges[0].len()
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        self.edges[e].data()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.edges
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.edges
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.edges.iter().map(|t| t.data().to_vec()).collect()
    }

    /// softmax(α) per edge.
    pub fn mixture_weights(&self) -> Vec<Vec<f64>> {
        self.edges
            .iter()
            .map(|t| softmax(t.data()).expect("α entries are finite"))
            .collect()
    }

    pub fn check_against(&self, spec: &SupernetSpec) -> Result<(), SpaceError> {
        if self.num_edges() != spec.num_edges() || self.num_ops() != spec.op_set.len() {
            return Err(SpaceError::Domain(format!(
                "architecture is {}x{}, supernet expects {}x{}",
                self.num_edges(),
                self.num_ops(),
                spec.num_edges(),
                spec.op_set.len()
            )));
        }
        Ok(())
    }

    /// Bitwise fingerprint used to assert that a step left α untouched.
    pub fn bit_pattern(&self) -> Vec<u64> {
        self.edges
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }
}

/// Discrete architecture: one chosen operation index per compound edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub ops: Vec<usize>,
}

/// Per-edge argmax over α, lowest index on ties.
pub fn discretize(arch: &ArchParams) -> Architecture {
    Architecture {
        ops: (0..arch.num_edges())
            .map(|e| {
                let row = arch.edge(e);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEdge {
    pub edge: [usize; 2],
    pub op: String,
}

/// JSON-facing form of an [`Architecture`]: a list of `{edge, op}` records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype(pub Vec<GenotypeEdge>);

impl Architecture {
    pub fn genotype(&self, spec: &SupernetSpec) -> Result<Genotype, SpaceError> {
        let edges = spec.edges();
        if edges.len() != self.ops.len() {
            return Err(SpaceError::Domain(format!(
                "architecture has {} edges, supernet has {}",
                self.ops.len(),
                edges.len()
            )));
        }
        let names = spec.op_set.names();
        self.ops
            .iter()
            .zip(edges)
            .map(|(&op, (from, to))| {
                let name = names
                    .get(op)
                    .ok_or_else(|| SpaceError::Domain(format!("op index {op} out of range")))?;
                Ok(GenotypeEdge {
                    edge: [from, to],
                    op: name.to_string(),
                })
            })
            .collect::<Result<_, _>>()
            .map(Genotype)
    }

    pub fn count_of(&self, op: usize) -> usize {
        self.ops.iter().filter(|&&o| o == op).count()
    }
}

impl Genotype {
    pub fn contains_op(&self, name: &str) -> bool {
        self.0.iter().any(|e| e.op == name)
    }
}

impl fmt::Display for Genotype {
    /// NAS-Bench-201 style: `|op~0|+|op~0|op~1|+...`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut current_to = None;
        for e in &self.0 {
            if current_to != Some(e.edge[1]) {
                if current_to.is_some() {
                    write!(f, "+")?;
                }
                write!(f, "|")?;
                current_to = Some(e.edge[1]);
            }
            write!(f, "{}~{}|", e.op, e.edge[0])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_and_ties() {
        let a = ArchParams::from_rows(vec![vec![2.0, 1.0, 0.0, -1.0, -2.0]]).unwrap();
        assert_eq!(discretize(&a).ops, vec![0]);
        let a = ArchParams::from_rows(vec![vec![0.3; 5]]).unwrap();
        assert_eq!(discretize(&a).ops, vec![0]);
        let a = ArchParams::zeros(6, 5);
        assert_eq!(discretize(&a).ops, vec![0; 6]);
    }

    #[test]
    fn six_edges_brute_force() {
        let rows = vec![
            vec![0.1, 0.9, -0.2, 0.0, 0.3],
            vec![1.5, 0.2, 0.1, 0.0, 0.3],
            vec![0.0, 0.0, 0.0, 0.7, 0.3],
            vec![-1.0, -2.0, -0.5, -3.0, -0.6],
            vec![0.0, 0.1, 0.2, 0.3, 0.4],
            vec![0.0, 0.0, 5.0, 0.0, 0.0],
        ];
        let expected: Vec<usize> = rows
            .iter()
            .map(|r| {
                // pairwise comparison: index i wins if no other entry beats it
                (0..r.len())
                    .find(|&i| (0..r.len()).all(|j| r[i] > r[j] || (r[i] == r[j] && i <= j)))
                    .unwrap()
            })
            .collect();
        let a = ArchParams::from_rows(rows).unwrap();
        assert_eq!(discretize(&a).ops, expected);
        assert_eq!(expected, vec![1, 0, 3, 2, 4, 2]);
    }

    #[test]
    fn genotype_json_and_string() {
        let spec = SupernetSpec::default();
        let arch = Architecture {
            ops: vec![1, 3, 2, 0, 4, 3],
        };
        let g = arch.genotype(&spec).unwrap();
        assert_eq!(
            g.to_string(),
            "|skip_connect~0|+|op_large~0|op_small~1|+|none~0|avg_smooth~1|op_large~2|"
        );
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.starts_with(r#"[{"edge":[0,1],"op":"skip_connect"}"#));
        assert!(g.contains_op("avg_smooth"));
        assert!(!g.contains_op("conv"));
    }

    #[test]
    fn from_rows_validation() {
        assert!(ArchParams::from_rows(vec![]).is_err());
        assert!(ArchParams::from_rows(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(ArchParams::from_rows(vec![vec![f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn discretize_shift_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 5), 6),
            edge in 0usize..6,
            c in -10.0f64..10.0,
        ) {
            let a = ArchParams::from_rows(rows.clone()).unwrap();
            let mut shifted = rows;
            // exact shift: choose c representable so v + c does not reorder ties
            for v in &mut shifted[edge] { *v += c; }
            let b = ArchParams::from_rows(shifted).unwrap();
            let (da, db) = (discretize(&a), discretize(&b));
            // rounding can only collapse near-ties; argmax stays if the winner is clear
            let row = a.edge(edge);
            let best = row[da.ops[edge]];
            let clear = row.iter().enumerate().all(|(i, &v)| i == da.ops[edge] || best - v > 1e-9);
            if clear {
                prop_assert_eq!(da, db);
            }
        }

        #[test]
        fn mixture_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 1..7), 1..7)) {
            let m = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(m, 0.0); r }).collect();
            let a = ArchParams::from_rows(rows).unwrap();
            for w in a.mixture_weights() {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
