//! Location graph: adjacency construction and the normalized propagation
//! matrix shared by every GCN layer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One weather-collection location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
}

/// Rule used to connect locations into a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeighborRule {
    /// Connect pairs closer than `tau` degrees (Euclidean in degree space).
    /// On a 0.25-degree grid, tau = 0.3 gives a 4-neighborhood and
    /// tau = 0.36 an 8-neighborhood.
    Grid { tau: f64 },
    /// Symmetrized union of directed k-nearest-neighbor edges.
    /// Distance ties break toward the lower id.
    Knn { k: usize },
}

impl Default for NeighborRule {
    fn default() -> Self {
        NeighborRule::Grid { tau: 0.3 }
    }
}

/// Binary, symmetric, zero-diagonal adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: Array2<f64>,
}

impl AdjacencyMatrix {
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::Shape(format!("adjacency must be square, got {r}x{c}")));
        }
        for i in 0..r {
            if entries[[i, i]] != 0.0 {
                return Err(Error::Validation(format!("adjacency diagonal nonzero at {i}")));
            }
            for j in 0..r {
                let v = entries[[i, j]];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Validation(format!("adjacency entry ({i},{j}) = {v} not binary")));
                }
                if entries[[i, j]] != entries[[j, i]] {
                    return Err(Error::Validation(format!("adjacency not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.entries[[i, j]] != 0.0
    }
}

/// D̃^{-1/2} (A + I) D̃^{-1/2} of a source adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPropagation {
    entries: Array2<f64>,
}

impl NormalizedPropagation {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

fn dist2(a: &Location, b: &Location) -> f64 {
    let dl = a.lat - b.lat;
    let dn = a.lon - b.lon;
    dl * dl + dn * dn
}

/// Build the adjacency matrix from location coordinates.
pub fn build_adjacency(locations: &[Location], rule: NeighborRule) -> Result<AdjacencyMatrix> {
    let n = locations.len();
    if n == 0 {
        return Err(Error::Validation("no locations given".into()));
    }
    for (i, loc) in locations.iter().enumerate() {
        if loc.id != i {
            return Err(Error::Validation(format!(
                "location ids must be dense 0..n-1, found id {} at position {i}",
                loc.id
            )));
        }
        if !loc.lat.is_finite() || !loc.lon.is_finite() {
            return Err(Error::Validation(format!("non-finite coordinates at location {i}")));
        }
    }
    let mut a = Array2::<f64>::zeros((n, n));
    match rule {
        NeighborRule::Grid { tau } => {
            if !(tau > 0.0) {
                return Err(Error::Config(format!("grid rule needs tau > 0, got {tau}")));
            }
            let t2 = tau * tau;
            for i in 0..n {
                for j in (i + 1)..n {
                    if dist2(&locations[i], &locations[j]) <= t2 {
                        a[[i, j]] = 1.0;
                        a[[j, i]] = 1.0;
                    }
                }
            }
        }
        NeighborRule::Knn { k } => {
            if k == 0 || k >= n {
                return Err(Error::Config(format!("k-NN rule needs 0 < k < n, got k={k}, n={n}")));
            }
            for i in 0..n {
                let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                // ties resolve toward the lower id
                order.sort_by(|&x, &y| {
                    dist2(&locations[i], &locations[x])
                        .partial_cmp(&dist2(&locations[i], &locations[y]))
                        .unwrap()
                        .then(x.cmp(&y))
                });
                for &j in order.iter().take(k) {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
    }
    AdjacencyMatrix::from_entries(a)
}

/// D̃^{-1/2} Ã D̃^{-1/2} with Ã = A + I and D̃ the row sums of Ã.
pub fn normalize(adj: &AdjacencyMatrix) -> NormalizedPropagation {
    let n = adj.n();
    let mut tilde = adj.entries.clone();
    for i in 0..n {
        tilde[[i, i]] += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| tilde.row(i).sum().sqrt().recip())
        .collect();
    for i in 0..n {
        for j in 0..n {
            tilde[[i, j]] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    NormalizedPropagation { entries: tilde }
}

/// Entrywise product of the adjacency with a symmetric binary edge mask.
pub fn apply_edge_mask(adj: &AdjacencyMatrix, edge_mask: &Array2<f64>) -> Result<AdjacencyMatrix> {
    if edge_mask.dim() != adj.entries.dim() {
        return Err(Error::Shape(format!(
            "edge mask {:?} does not match adjacency {:?}",
            edge_mask.dim(),
            adj.entries.dim()
        )));
    }
    AdjacencyMatrix::from_entries(&adj.entries * edge_mask)
}

/// Read `locations.csv` (`location_id,lat,lon`), ids 0..n-1.
pub fn read_locations_csv(path: &std::path::Path) -> Result<Vec<Location>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut locations = Vec::new();
    for (line, record) in reader.deserialize::<LocationRow>().enumerate() {
        let row = record.map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), line + 2)))?;
        locations.push(Location { id: row.location_id, lat: row.lat, lon: row.lon });
    }
    locations.sort_by_key(|l| l.id);
    for (i, loc) in locations.iter().enumerate() {
        if loc.id != i {
            return Err(Error::Validation(format!(
                "{}: location ids must be dense 0..n-1",
                path.display()
            )));
        }
    }
    Ok(locations)
}

pub fn write_locations_csv(path: &std::path::Path, locations: &[Location]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for loc in locations {
        writer.serialize(LocationRow { location_id: loc.id, lat: loc.lat, lon: loc.lon })?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LocationRow {
    location_id: usize,
    lat: f64,
    lon: f64,
}
