//! JSON serialization of vector maps.
//!
//! The wire format is deliberately small and stable:
//!
//! ```json
//! {
//!   "bev_extent": [15.0, 30.0],
//!   "instances": [
//!     {
//!       "category": "divider",
//!       "closed": false,
//!       "score": 0.9,
//!       "points": [[0.1, 0.2], [0.3, 0.4]]
//!     }
//!   ]
//! }
//! ```
//!
//! `score` is omitted for ground truth. Floats are written with
//! shortest-roundtrip formatting, so loading a written map reproduces every
//! coordinate bit-for-bit. Loading validates all map invariants and reports
//! the offending instance/point on failure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BevExtent, Category, MapInstance, Point2, Polyline, VectorMap};
use crate::scalar::Scalar;

#[derive(Serialize, Deserialize)]
struct WireMap<T> {
    bev_extent: [T; 2],
    instances: Vec<WireInstance<T>>,
}

#[derive(Serialize, Deserialize)]
struct WireInstance<T> {
    category: Category,
    closed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<T>,
    points: Vec<[T; 2]>,
}

fn to_wire<T: Scalar>(map: &VectorMap<T>) -> WireMap<T> {
    WireMap {
        bev_extent: [map.bev_extent().x_half_m, map.bev_extent().y_half_m],
        instances: map
            .instances()
            .iter()
            .map(|inst| WireInstance {
                category: inst.category,
                closed: inst.polyline.closed(),
                score: inst.score,
                points: inst.polyline.points().iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    }
}

fn from_wire<T: Scalar>(wire: WireMap<T>) -> Result<VectorMap<T>> {
    let extent = BevExtent::new(wire.bev_extent[0], wire.bev_extent[1])?;
    let mut instances = Vec::with_capacity(wire.instances.len());
    for (i, inst) in wire.instances.into_iter().enumerate() {
        let mut points = Vec::with_capacity(inst.points.len());
        for (j, [x, y]) in inst.points.into_iter().enumerate() {
            points.push(Point2::new(x, y).map_err(|_| Error::NonFinite {
                context: format!("instance {i}, point {j}"),
            })?);
        }
        let polyline = Polyline::new(points, inst.closed)
            .map_err(|e| Error::Malformed(format!("instance {i}: {e}")))?;
        instances.push(
            MapInstance::new(polyline, inst.category, inst.score)
                .map_err(|e| Error::Malformed(format!("instance {i}: {e}")))?,
        );
    }
    VectorMap::new(instances, extent)
}

/// Serializes a map to pretty-printed JSON (stable bytes for fixed input).
pub fn map_to_json<T: Scalar + Serialize>(map: &VectorMap<T>) -> String {
    let mut out =
        serde_json::to_string_pretty(&to_wire(map)).expect("map serialization cannot fail");
    out.push('\n');
    out
}

/// Parses and validates a map from JSON.
pub fn map_from_json<T: Scalar + for<'de> Deserialize<'de>>(json: &str) -> Result<VectorMap<T>> {
    let wire: WireMap<T> =
        serde_json::from_str(json).map_err(|e| Error::Malformed(e.to_string()))?;
    from_wire(wire)
}
