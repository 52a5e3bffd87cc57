//! Packing and shape statistics: packing density, contact coordination,
//! granulometry percentiles and aspect ratios, plus the JSON/CSV dashboard.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{GrainSet, LabelGrid};
use crate::voxel::{ValueKind, VoxelGrid};

/// Reference values measured on full-scale ballast DEM assemblies; emitted
/// as dashboard annotations for context, never asserted by tests.
pub const DEM_REFERENCE: DemReference = DemReference {
    packing_density: 0.62,
    first_order_coordination_mean: 5.77,
    second_order_coordination_mean: 6.41,
    grain_size_p50_m: 0.0192,
    grain_size_p90_m: 0.0240,
    mean_aspect_ratio: 8.74,
    elongated_grain_count: 4066,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DemReference {
    pub packing_density: f64,
    pub first_order_coordination_mean: f64,
    pub second_order_coordination_mean: f64,
    pub grain_size_p50_m: f64,
    pub grain_size_p90_m: f64,
    pub mean_aspect_ratio: f64,
    pub elongated_grain_count: usize,
}

/// Foreground fraction of the grid (or of an index sub-box, half-open
/// per-axis ranges in (z, y, x) order).
pub fn packing_density(grid: &VoxelGrid, region: Option<[[usize; 2]; 3]>) -> Result<f64> {
    if grid.kind != ValueKind::Binary {
        return Err(Error::UnsupportedValueKind {
            expected: "binary",
            found: grid.kind.name(),
        });
    }
    match region {
        None => Ok(grid.foreground_count() as f64 / grid.len() as f64),
        Some(r) => {
            let mut count = 0usize;
            let mut total = 0usize;
            for (a, rr) in r.iter().enumerate() {
                if rr[0] >= rr[1] || rr[1] > grid.dims[a] {
                    return Err(Error::invalid("empty or out-of-range region"));
                }
            }
            for z in r[0][0]..r[0][1] {
                for y in r[1][0]..r[1][1] {
                    for x in r[2][0]..r[2][1] {
                        total += 1;
                        if grid.get(z, y, x) != 0.0 {
                            count += 1;
                        }
                    }
                }
            }
            Ok(count as f64 / total as f64)
        }
    }
}

/// Symmetric grain adjacency: i and j touch when some voxel of i lies within
/// Chebyshev distance `tolerance` of some voxel of j.
#[derive(Debug, Clone)]
pub struct ContactGraph {
    pub grain_count: usize,
    /// (smaller, larger) label pairs, 1-based labels.
    pub edges: BTreeSet<(u32, u32)>,
}

impl ContactGraph {
    pub fn degree(&self, label: u32) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == label || b == label)
            .count()
    }

    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.grain_count + 1];
        for &(a, b) in &self.edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        adj
    }
}

pub fn contact_graph(labels: &LabelGrid, tolerance: usize) -> ContactGraph {
    let [nz, ny, nx] = labels.dims;
    let t = tolerance as isize;
    let mut edges = BTreeSet::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let l = labels.labels[labels.idx(z, y, x)];
                if l == 0 {
                    continue;
                }
                for dz in -t..=t {
                    for dy in -t..=t {
                        for dx in -t..=t {
                            let (z2, y2, x2) =
                                (z as isize + dz, y as isize + dy, x as isize + dx);
                            if z2 < 0
                                || y2 < 0
                                || x2 < 0
                                || z2 >= nz as isize
                                || y2 >= ny as isize
                                || x2 >= nx as isize
                            {
                                continue;
                            }
                            let m = labels.labels
                                [labels.idx(z2 as usize, y2 as usize, x2 as usize)];
                            if m != 0 && m != l {
                                edges.insert((l.min(m), l.max(m)));
                            }
                        }
                    }
                }
            }
        }
    }
    ContactGraph {
        grain_count: labels.label_count(),
        edges,
    }
}

/// (first-order mean, second-order mean): mean contact degree and mean count
/// of grains reachable within two hops, excluding self.
pub fn coordination(graph: &ContactGraph) -> (f64, f64) {
    let n = graph.grain_count;
    if n == 0 {
        return (0.0, 0.0);
    }
    let adj = graph.adjacency();
    let mut deg_sum = 0usize;
    let mut two_hop_sum = 0usize;
    for l in 1..=n {
        deg_sum += adj[l].len();
        let mut reach: BTreeSet<u32> = BTreeSet::new();
        for &m in &adj[l] {
            reach.insert(m);
            for &k in &adj[m as usize] {
                reach.insert(k);
            }
        }
        reach.remove(&(l as u32));
        two_hop_sum += reach.len();
    }
    (deg_sum as f64 / n as f64, two_hop_sum as f64 / n as f64)
}

pub const CDF_SAMPLES: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Granulometry {
    /// Equivalent sphere diameter (6V/π)^(1/3) per grain, meters.
    pub diameters_m: Vec<f64>,
    pub p50_m: f64,
    pub p90_m: f64,
    pub cdf_diameters_m: Vec<f64>,
    pub cdf_fraction: Vec<f64>,
}

/// Percentile by linear interpolation between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn granulometry(grains: &GrainSet) -> Result<Granulometry> {
    if grains.grains.is_empty() {
        return Err(Error::EmptyGrainSet);
    }
    let mut diameters: Vec<f64> = grains
        .grains
        .iter()
        .map(|g| (6.0 * g.volume / std::f64::consts::PI).cbrt())
        .collect();
    let unsorted = diameters.clone();
    diameters.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (diameters[0], *diameters.last().unwrap());
    let mut cdf_d = Vec::with_capacity(CDF_SAMPLES);
    let mut cdf_f = Vec::with_capacity(CDF_SAMPLES);
    for i in 0..CDF_SAMPLES {
        let d = lo + (hi - lo) * i as f64 / (CDF_SAMPLES - 1) as f64;
        let below = diameters.iter().filter(|&&v| v <= d).count();
        cdf_d.push(d);
        cdf_f.push(below as f64 / diameters.len() as f64);
    }
    Ok(Granulometry {
        p50_m: percentile(&diameters, 50.0),
        p90_m: percentile(&diameters, 90.0),
        diameters_m: unsorted,
        cdf_diameters_m: cdf_d,
        cdf_fraction: cdf_f,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeStats {
    /// Longest/shortest principal axis length per grain; the shortest axis
    /// is floored at one voxel.
    pub aspect_ratios: Vec<f64>,
    pub mean_aspect_ratio: f64,
    pub elongated_count_ar_gt_2: usize,
}

pub fn aspect_ratios(grains: &GrainSet) -> Result<ShapeStats> {
    if grains.grains.is_empty() {
        return Err(Error::EmptyGrainSet);
    }
    let floor = grains.pitch;
    let ars: Vec<f64> = grains
        .grains
        .iter()
        .map(|g| g.axis_lengths[0].max(floor) / g.axis_lengths[2].max(floor))
        .collect();
    let mean = ars.iter().sum::<f64>() / ars.len() as f64;
    let elongated = ars.iter().filter(|&&a| a > 2.0).count();
    Ok(ShapeStats {
        mean_aspect_ratio: mean,
        elongated_count_ar_gt_2: elongated,
        aspect_ratios: ars,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinationStats {
    pub first_order_mean: f64,
    pub second_order_mean: f64,
    /// Contact degree per grain, indexed by label - 1.
    pub degrees: Vec<usize>,
    pub contact_tolerance_voxels: usize,
}

/// The full dashboard. Sections that need labels or grains are `None` when
/// those inputs are absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub packing_density: f64,
    pub grain_count: usize,
    pub coordination: Option<CoordinationStats>,
    pub granulometry: Option<Granulometry>,
    pub shape: Option<ShapeStats>,
    pub definitions: Definitions,
    pub dem_reference: DemReference,
    pub provenance: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Definitions {
    pub second_order_coordination: String,
    pub aspect_ratio: String,
    pub dem_reference_note: String,
}

impl Default for Definitions {
    fn default() -> Self {
        Definitions {
            second_order_coordination:
                "grains reachable within two contact hops, excluding self (a chosen \
                 convention; flagged because conventions differ)"
                    .into(),
            aspect_ratio: "longest/shortest principal axis length, shortest floored at one voxel"
                .into(),
            dem_reference_note:
                "full-scale ballast DEM baseline values, for context only, not a test target"
                    .into(),
        }
    }
}

pub const DEFAULT_CONTACT_TOLERANCE: usize = 1;

/// Assemble the dashboard from the individual operations; every number
/// equals what the standalone op returns on the same inputs.
pub fn report(
    grid: &VoxelGrid,
    labels: Option<&LabelGrid>,
    grains: Option<&GrainSet>,
    provenance: std::collections::BTreeMap<String, String>,
) -> Result<AssemblyReport> {
    let phi = packing_density(grid, None)?;
    let coordination_stats = match labels {
        Some(l) if l.label_count() > 0 => {
            let graph = contact_graph(l, DEFAULT_CONTACT_TOLERANCE);
            let (first, second) = coordination(&graph);
            let adj = graph.adjacency();
            Some(CoordinationStats {
                first_order_mean: first,
                second_order_mean: second,
                degrees: (1..=graph.grain_count).map(|i| adj[i].len()).collect(),
                contact_tolerance_voxels: DEFAULT_CONTACT_TOLERANCE,
            })
        }
        _ => None,
    };
    let granulometry_stats = match grains {
        Some(g) if !g.grains.is_empty() => Some(granulometry(g)?),
        _ => None,
    };
    let shape_stats = match grains {
        Some(g) if !g.grains.is_empty() => Some(aspect_ratios(g)?),
        _ => None,
    };
    Ok(AssemblyReport {
        packing_density: phi,
        grain_count: labels.map_or(0, |l| l.label_count()),
        coordination: coordination_stats,
        granulometry: granulometry_stats,
        shape: shape_stats,
        definitions: Definitions::default(),
        dem_reference: DEM_REFERENCE,
        provenance,
    })
}

impl AssemblyReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::CorruptPayload(e.to_string()))
    }
}

/// One CSV row per grain: derived geometry plus the contact degree.
pub fn per_grain_csv(grains: &GrainSet, graph: Option<&ContactGraph>) -> String {
    let mut out = String::from(
        "label,volume_m3,equiv_diameter_m,centroid_x_m,centroid_y_m,centroid_z_m,\
         axis_a_m,axis_b_m,axis_c_m,aspect_ratio,contacts\n",
    );
    let adj = graph.map(|g| g.adjacency());
    for g in &grains.grains {
        let d = (6.0 * g.volume / std::f64::consts::PI).cbrt();
        let floor = grains.pitch;
        let ar = g.axis_lengths[0].max(floor) / g.axis_lengths[2].max(floor);
        let contacts = adj
            .as_ref()
            .and_then(|a| a.get(g.label as usize))
            .map_or(0, |v| v.len());
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.9},{:.9},{:.9},{:.12e},{:.12e},{:.12e},{:.6},{}\n",
            g.label,
            g.volume,
            d,
            g.centroid[0],
            g.centroid[1],
            g.centroid[2],
            g.axis_lengths[0],
            g.axis_lengths[1],
            g.axis_lengths[2],
            ar,
            contacts
        ));
    }
    out
}
