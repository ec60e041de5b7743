//! Range-filtered approximate nearest neighbor search over a grid-based
//! multi-graph index.

pub mod error;
pub mod eval;
pub mod format;
pub mod graph;
pub mod grid;
pub mod histogram;
pub mod index;
pub mod io;
pub mod knn;
pub mod model;
pub mod pipeline;
pub mod quantize;
pub mod schedule;
pub mod search;
mod util;

pub use error::{Error, Result};
pub use graph::{BuildParams, InterCellEdges, IntraCellGraph};
pub use grid::{cells_intersecting, partition, CellAssignment, GridParams, GridSpec};
pub use histogram::{ClusterHistogram, HistogramParams};
pub use index::{build_index, GmgIndex, IndexParams};
pub use model::{satisfies, Dataset, Metric, Neighbor, Predicate, RangeQuery, VectorRecord};
pub use quantize::{QuantizedVectors, ScalarQuantizer};
pub use search::{search, search_batch, GraphView, SearchOutput, SearchParams, SearchState, SearchStats};
pub use eval::{brute_force_rfnns, recall_at_k};
pub use format::{load_index, save_index, IndexFile};
pub use pipeline::{run_out_of_core, OutOfCoreOutput, OutOfCoreParams, StreamBudget};
pub use schedule::{active_count, schedule_exact, schedule_greedy, BatchPlan, IncidenceMatrix};
pub use util::VisitedSet;
