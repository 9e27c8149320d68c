//! Relational entity graph: one node per row, one edge per resolved foreign-key
//! cell, plus the inverse of every relation.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::numcore::Segments;
use crate::rdb::RdbInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Child (foreign-key side) to parent (primary-key side).
    Forward,
    Inverse,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationType {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub direction: Direction,
    /// Foreign-key column this relation came from.
    pub column: String,
}

#[derive(Clone, Debug)]
pub struct Relation {
    pub ty: RelationType,
    /// Per destination node, its source neighbors in ascending order.
    pub incoming: Arc<Segments>,
}

impl Relation {
    pub fn edge_count(&self) -> usize {
        self.incoming.total()
    }

    /// Edges as `(src, dst)`, ordered by destination then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.incoming.len()).flat_map(move |d| self.incoming.segment(d).iter().map(move |&s| (s, d)))
    }
}

/// A typed node: row `index` of table `table`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId {
    pub table: usize,
    pub index: usize,
}

/// Forward relation given as an explicit edge list.
#[derive(Clone, Debug)]
pub struct ForwardEdges {
    pub src: usize,
    pub dst: usize,
    pub column: String,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Reg {
    pub table_names: Vec<String>,
    pub node_counts: Vec<usize>,
    /// Forward relation `i` has id `2i`, its inverse `2i + 1`.
    pub relations: Vec<Relation>,
}

impl Reg {
    /// Builds a graph from forward edge lists; inverses are materialized as transposes.
    pub fn from_forward_edges(
        table_names: Vec<String>,
        node_counts: Vec<usize>,
        forward: Vec<ForwardEdges>,
    ) -> Result<Self> {
        let mut relations = Vec::with_capacity(forward.len() * 2);
        for (i, f) in forward.into_iter().enumerate() {
            let (ns, nd) = match (node_counts.get(f.src), node_counts.get(f.dst)) {
                (Some(&a), Some(&b)) => (a, b),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "relation {i} references unknown table"
                    )))
                }
            };
            if let Some(&(s, d)) = f.edges.iter().find(|&&(s, d)| s >= ns || d >= nd) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({s}, {d}) out of range for relation {i}"
                )));
            }
            let fwd = Segments::from_pairs(nd, f.edges.iter().map(|&(s, d)| (d, s)));
            let inv = Segments::from_pairs(ns, f.edges.iter().map(|&(s, d)| (s, d)));
            relations.push(Relation {
                ty: RelationType {
                    id: 2 * i,
                    src: f.src,
                    dst: f.dst,
                    direction: Direction::Forward,
                    column: f.column.clone(),
                },
                incoming: Arc::new(fwd),
            });
            relations.push(Relation {
                ty: RelationType {
                    id: 2 * i + 1,
                    src: f.dst,
                    dst: f.src,
                    direction: Direction::Inverse,
                    column: f.column,
                },
                incoming: Arc::new(inv),
            });
        }
        Ok(Self {
            table_names,
            node_counts,
            relations,
        })
    }

    /// One node per row; one forward edge per foreign-key cell.
    pub fn build(rdb: &RdbInstance) -> Self {
        let forward = rdb
            .schema
            .links()
            .into_iter()
            .map(|link| {
                let col = rdb.schema.tables[link.child]
                    .foreign_keys()
                    .position(|(c, _)| c == link.column)
                    .unwrap();
                let parents = &rdb.tables[link.child].foreign_keys[col];
                ForwardEdges {
                    src: link.child,
                    dst: link.parent,
                    column: link.column,
                    edges: parents.iter().enumerate().map(|(c, &p)| (c, p)).collect(),
                }
            })
            .collect();
        Self::from_forward_edges(
            rdb.tables.iter().map(|t| t.name.clone()).collect(),
            rdb.tables.iter().map(|t| t.row_count()).collect(),
            forward,
        )
        .expect("loaded foreign keys resolve to existing rows")
    }

    pub fn num_tables(&self) -> usize {
        self.node_counts.len()
    }

    pub fn relation(&self, id: usize) -> Option<&Relation> {
        self.relations.get(id)
    }

    pub fn forward_relations(&self) -> impl Iterator<Item = &Relation> + '_ {
        self.relations
            .iter()
            .filter(|r| r.ty.direction == Direction::Forward)
    }

    /// Relations whose destination is `table`.
    pub fn incoming_relations(&self, table: usize) -> impl Iterator<Item = &Relation> + '_ {
        self.relations.iter().filter(move |r| r.ty.dst == table)
    }

    /// Sources `w` with `(w, node)` an edge of `relation`, ascending.
    pub fn neighbors(&self, relation: usize, node: NodeId) -> Result<&[usize]> {
        let rel = self
            .relations
            .get(relation)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown relation {relation}")))?;
        if rel.ty.dst != node.table || node.index >= self.node_counts[node.table] {
            return Err(Error::InvalidArgument(format!(
                "node {node:?} is not a destination of relation {relation}"
            )));
        }
        Ok(rel.incoming.segment(node.index))
    }

    pub fn total_edges(&self) -> usize {
        self.relations.iter().map(|r| r.edge_count()).sum()
    }

    /// Debug dump, one `relation_id,src,dst` line per edge.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for r in &self.relations {
            for (s, d) in r.edges() {
                let _ = writeln!(out, "{},{},{}", r.ty.id, s, d);
            }
        }
        out
    }

    /// Subgraph induced by `keep[t]` (ascending row ids per table); nodes are renumbered
    /// in the order given.
    pub fn induced(&self, keep: &[Vec<usize>]) -> Result<Reg> {
        if keep.len() != self.num_tables() {
            return Err(Error::InvalidArgument("one row list per table required".into()));
        }
        let remap: Vec<Vec<Option<usize>>> = keep
            .iter()
            .zip(&self.node_counts)
            .map(|(k, &n)| {
                let mut m = alloc::vec![None; n];
                for (new, &old) in k.iter().enumerate() {
                    m[old] = Some(new);
                }
                m
            })
            .collect();
        let forward = self
            .forward_relations()
            .map(|r| ForwardEdges {
                src: r.ty.src,
                dst: r.ty.dst,
                column: r.ty.column.clone(),
                edges: r
                    .edges()
                    .filter_map(|(s, d)| Some((remap[r.ty.src][s]?, remap[r.ty.dst][d]?)))
                    .collect(),
            })
            .collect();
        Reg::from_forward_edges(
            self.table_names.clone(),
            keep.iter().map(|k| k.len()).collect(),
            forward,
        )
    }
}
