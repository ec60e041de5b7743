//! The assembled grid-based multi-graph index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_inter_edges, build_intra_graphs, BuildParams, InterCellEdges, IntraCellGraph};
use crate::grid::{partition, CellAssignment, GridParams, GridSpec};
use crate::histogram::{build_histogram, ClusterHistogram, HistogramParams};
use crate::model::{Dataset, Metric};
use crate::quantize::QuantizedVectors;
use crate::search::GraphView;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    pub grid: GridParams,
    pub build: BuildParams,
    pub histogram: HistogramParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmgIndex {
    pub(crate) build: BuildParams,
    pub(crate) grid: GridSpec,
    pub(crate) assignment: CellAssignment,
    pub(crate) intra: Vec<IntraCellGraph>,
    pub(crate) inter: InterCellEdges,
    pub(crate) histogram: ClusterHistogram,
    pub(crate) codes: QuantizedVectors,
    pub(crate) dataset: Dataset,
}

pub fn build_index(dataset: Dataset, params: &IndexParams) -> Result<GmgIndex> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.len() > u32::MAX as usize {
        return Err(Error::invalid("at most 2^32 - 1 records are supported"));
    }
    params.build.validate()?;
    let (grid, assignment) = partition(&dataset, &params.grid)?;
    let intra = build_intra_graphs(&dataset, &assignment, &params.build);
    let inter = build_inter_edges(&dataset, &assignment, &intra, &params.build);
    let histogram = build_histogram(&dataset, &assignment, &params.histogram)?;
    let codes = QuantizedVectors::encode(&dataset);
    Ok(GmgIndex {
        build: params.build.clone(),
        grid,
        assignment,
        intra,
        inter,
        histogram,
        codes,
        dataset,
    })
}

impl GmgIndex {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        build: BuildParams,
        grid: GridSpec,
        assignment: CellAssignment,
        intra: Vec<IntraCellGraph>,
        inter: InterCellEdges,
        histogram: ClusterHistogram,
        codes: QuantizedVectors,
        dataset: Dataset,
    ) -> Result<Self> {
        let s = grid.num_cells();
        let n = dataset.len();
        if assignment.len() != n || codes.len() != n || grid.n() != n {
            return Err(Error::Corrupt("section record counts disagree".into()));
        }
        if intra.len() != s || inter.blocks().len() != s || histogram.num_cells() != s {
            return Err(Error::Corrupt("section cell counts disagree".into()));
        }
        for (c, g) in intra.iter().enumerate() {
            if g.degree() > 0 && g.num_nodes() != assignment.cell_size(c) {
                return Err(Error::Corrupt(format!("cell {c} graph size mismatch")));
            }
            if g.adjacency().iter().any(|&v| v as usize >= n) {
                return Err(Error::Corrupt(format!("cell {c} has out-of-range edges")));
            }
        }
        for (c, b) in inter.blocks().iter().enumerate() {
            if b.counts().len() != s || b.edges().len() != b.stride() * assignment.cell_size(c) {
                return Err(Error::Corrupt(format!("cell {c} inter block mismatch")));
            }
            if b.edges().iter().any(|&v| v as usize >= n) {
                return Err(Error::Corrupt(format!("cell {c} has out-of-range inter edges")));
            }
        }
        Ok(Self {
            build,
            grid,
            assignment,
            intra,
            inter,
            histogram,
            codes,
            dataset,
        })
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn params(&self) -> &BuildParams {
        &self.build
    }

    pub fn metric(&self) -> Metric {
        self.build.metric
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn assignment(&self) -> &CellAssignment {
        &self.assignment
    }

    pub fn intra_graphs(&self) -> &[IntraCellGraph] {
        &self.intra
    }

    pub fn inter_edges(&self) -> &InterCellEdges {
        &self.inter
    }

    pub fn histogram(&self) -> &ClusterHistogram {
        &self.histogram
    }

    pub fn codes(&self) -> &QuantizedVectors {
        &self.codes
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Intra-cell neighbors of `node`.
    pub fn intra_neighbors(&self, node: u32) -> &[u32] {
        let g = &self.intra[self.assignment.cell_of(node)];
        if g.degree() == 0 {
            &[]
        } else {
            g.neighbors(self.assignment.position(node))
        }
    }

    /// Inter-cell neighbors of `node` inside `cell`.
    pub fn inter_neighbors(&self, node: u32, cell: usize) -> &[u32] {
        self.inter
            .block(self.assignment.cell_of(node))
            .neighbors(self.assignment.position(node), cell)
    }

    /// Total stored edges: intra plus inter.
    pub fn edge_count(&self) -> usize {
        self.intra.iter().map(|g| g.adjacency().len()).sum::<usize>() + self.inter.total_edges()
    }
}

impl GraphView for GmgIndex {
    fn num_nodes(&self) -> usize {
        self.len()
    }
    fn num_cells(&self) -> usize {
        GmgIndex::num_cells(self)
    }
    fn cell_of(&self, node: u32) -> usize {
        self.assignment.cell_of(node)
    }
    fn members(&self, cell: usize) -> &[u32] {
        self.assignment.members(cell)
    }
    fn intra(&self, node: u32) -> impl Iterator<Item = u32> + '_ {
        self.intra_neighbors(node).iter().copied()
    }
    fn inter(&self, node: u32, cell: usize) -> impl Iterator<Item = u32> + '_ {
        self.inter_neighbors(node, cell).iter().copied()
    }
}
