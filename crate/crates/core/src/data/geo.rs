//! Great-circle distance and neighborhood polygons.

use std::io::{Read, Write};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Haversine distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A polygon with an exterior ring and optional holes. Vertices are stored
/// as `[lon, lat]` like GeoJSON; every ring is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    rings: Vec<Vec<[f64; 2]>>,
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::arg("polygon without rings"));
        }
        let mut closed = Vec::with_capacity(rings.len());
        for mut ring in rings {
            if ring.len() < 3 {
                return Err(Error::arg("polygon ring needs at least 3 vertices"));
            }
            if ring.first() != ring.last() {
                ring.push(ring[0]);
            }
            if ring.len() < 4 {
                return Err(Error::arg("degenerate polygon ring"));
            }
            closed.push(ring);
        }
        Ok(Polygon { rings: closed })
    }

    /// Axis-aligned rectangle, handy for grids.
    pub fn rect(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Self {
        Polygon {
            rings: vec![vec![
                [min_lon, min_lat],
                [max_lon, min_lat],
                [max_lon, max_lat],
                [min_lon, max_lat],
                [min_lon, min_lat],
            ]],
        }
    }

    pub fn rings(&self) -> &[Vec<[f64; 2]>] {
        &self.rings
    }

    /// Even-odd ray casting over all rings, so holes are excluded.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for w in ring.windows(2) {
                let [x1, y1] = w[0];
                let [x2, y2] = w[1];
                if (y1 > lat) != (y2 > lat) {
                    let x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1);
                    if lon < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &self.rings[0] {
            b[0] = b[0].min(y);
            b[1] = b[1].min(x);
            b[2] = b[2].max(y);
            b[3] = b[3].max(x);
        }
        b
    }

    /// Area-weighted centroid of the exterior ring as `(lat, lon)`.
    pub fn centroid(&self) -> (f64, f64) {
        let ring = &self.rings[0];
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for w in ring.windows(2) {
            let [x1, y1] = w[0];
            let [x2, y2] = w[1];
            let cross = x1 * y2 - x2 * y1;
            a += cross;
            cx += (x1 + x2) * cross;
            cy += (y1 + y2) * cross;
        }
        if a.abs() < 1e-18 {
            let n = (ring.len() - 1) as f64;
            let sx: f64 = ring[..ring.len() - 1].iter().map(|p| p[0]).sum();
            let sy: f64 = ring[..ring.len() - 1].iter().map(|p| p[1]).sum();
            return (sy / n, sx / n);
        }
        (cy / (3.0 * a), cx / (3.0 * a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub id: String,
    pub polygons: Vec<Polygon>,
}

impl Neighborhood {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(lat, lon))
    }

    fn bbox(&self) -> [f64; 4] {
        self.polygons.iter().map(Polygon::bbox).fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
        )
    }
}

/// Neighborhood polygons with a uniform-grid index over their bounding
/// boxes. Overlaps resolve to the polygon that came first.
#[derive(Debug, Clone)]
pub struct NeighborhoodMap {
    regions: Vec<Neighborhood>,
    bounds: [f64; 4],
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl NeighborhoodMap {
    pub fn new(regions: Vec<Neighborhood>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::arg("neighborhood map has no polygons"));
        }
        let boxes: Vec<[f64; 4]> = regions.iter().map(Neighborhood::bbox).collect();
        let bounds = boxes.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
        );
        let cells = ((regions.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let mut map = NeighborhoodMap {
            regions,
            bounds,
            cells,
            buckets: vec![Vec::new(); cells * cells],
        };
        for (i, b) in boxes.iter().enumerate() {
            let (r0, c0) = map.cell_of(b[0], b[1]);
            let (r1, c1) = map.cell_of(b[2], b[3]);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    map.buckets[r * cells + c].push(i);
                }
            }
        }
        Ok(map)
    }

    fn cell_of(&self, lat: f64, lon: f64) -> (usize, usize) {
        let [lat0, lon0, lat1, lon1] = self.bounds;
        let f = |v: f64, lo: f64, hi: f64| {
            if hi <= lo {
                0
            } else {
                (((v - lo) / (hi - lo)) * self.cells as f64)
                    .floor()
                    .clamp(0.0, (self.cells - 1) as f64) as usize
            }
        };
        (f(lat, lat0, lat1), f(lon, lon0, lon1))
    }

    pub fn regions(&self) -> &[Neighborhood] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Index of the first neighborhood containing the point.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        let [lat0, lon0, lat1, lon1] = self.bounds;
        if lat < lat0 || lat > lat1 || lon < lon0 || lon > lon1 {
            return None;
        }
        let (r, c) = self.cell_of(lat, lon);
        // bucket entries are pushed in region order, so the first hit wins
        self.buckets[r * self.cells + c]
            .iter()
            .copied()
            .find(|&i| self.regions[i].contains(lat, lon))
    }

    pub fn lookup(&self, lat: f64, lon: f64) -> Option<&str> {
        self.locate(lat, lon).map(|i| self.regions[i].id.as_str())
    }

    /// Reads a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
    /// The neighborhood id comes from property `id_key`; numeric ids are
    /// stringified.
    pub fn read_geojson(reader: impl Read, id_key: &str) -> Result<Self> {
        let doc: Value = serde_json::from_reader(reader)
            .map_err(|e| Error::Format(format!("invalid GeoJSON: {e}")))?;
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format("GeoJSON without `features` array".into()))?;
        let mut regions = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let id = match f.get("properties").and_then(|p| p.get(id_key)) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(Error::Format(format!(
                        "feature {i} lacks property `{id_key}`"
                    )))
                }
            };
            let geom = f
                .get("geometry")
                .ok_or_else(|| Error::Format(format!("feature {i} lacks geometry")))?;
            let kind = geom.get("type").and_then(Value::as_str).unwrap_or("");
            let coords = geom
                .get("coordinates")
                .ok_or_else(|| Error::Format(format!("feature {i} lacks coordinates")))?;
            let polygons = match kind {
                "Polygon" => vec![parse_polygon(coords)?],
                "MultiPolygon" => coords
                    .as_array()
                    .ok_or_else(|| Error::Format("bad MultiPolygon".into()))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Result<_>>()?,
                other => {
                    return Err(Error::Format(format!(
                        "feature {i}: unsupported geometry `{other}`"
                    )))
                }
            };
            regions.push(Neighborhood { id, polygons });
        }
        NeighborhoodMap::new(regions)
    }

    /// Writes the map back out as GeoJSON, attaching extra properties per
    /// neighborhood (e.g. a cluster label) from `props`.
    pub fn write_geojson(
        &self,
        mut w: impl Write,
        id_key: &str,
        props: impl Fn(&str) -> Map<String, Value>,
    ) -> Result<()> {
        let features: Vec<Value> = self
            .regions
            .iter()
            .map(|r| {
                let mut p = props(&r.id);
                p.insert(id_key.to_string(), Value::String(r.id.clone()));
                let polys: Vec<Value> = r.polygons.iter().map(|p| json!(p.rings())).collect();
                let geometry = if polys.len() == 1 {
                    json!({"type": "Polygon", "coordinates": polys[0]})
                } else {
                    json!({"type": "MultiPolygon", "coordinates": polys})
                };
                json!({"type": "Feature", "properties": p, "geometry": geometry})
            })
            .collect();
        let doc = json!({"type": "FeatureCollection", "features": features});
        serde_json::to_writer(&mut w, &doc).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::Format("polygon is not an array of rings".into()))?;
    let mut out = Vec::with_capacity(rings.len());
    for ring in rings {
        let pts = ring
            .as_array()
            .ok_or_else(|| Error::Format("ring is not an array".into()))?;
        let mut r = Vec::with_capacity(pts.len());
        for p in pts {
            let xy = p.as_array().filter(|a| a.len() >= 2);
            let (x, y) = match xy {
                Some(a) => (a[0].as_f64(), a[1].as_f64()),
                None => (None, None),
            };
            match (x, y) {
                (Some(x), Some(y)) => r.push([x, y]),
                _ => return Err(Error::Format("bad coordinate pair".into())),
            }
        }
        out.push(r);
    }
    Polygon::new(out).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haversine_known_values() {
        assert_eq!(haversine_km((40.0, -74.0), (40.0, -74.0)), 0.0);
        // one degree of latitude
        let d = haversine_km((0.0, 0.0), (1.0, 0.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI / 180.0).abs() < 1e-9);
        // JFK to LAX is roughly 3983 km
        let d = haversine_km((40.6413, -73.7781), (33.9416, -118.4085));
        assert!((d - 3983.0).abs() < 10.0, "{d}");
        // symmetric
        let a = (48.85, 2.35);
        let b = (51.5, -0.12);
        assert_eq!(haversine_km(a, b), haversine_km(b, a));
    }

    #[test]
    fn holes_are_outside() {
        let p = Polygon::new(vec![
            vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
            vec![[4.0, 4.0], [6.0, 4.0], [6.0, 6.0], [4.0, 6.0]],
        ])
        .unwrap();
        assert!(p.contains(2.0, 2.0));
        assert!(!p.contains(5.0, 5.0));
        assert!(!p.contains(12.0, 5.0));
        assert_eq!(p.rings()[0].first(), p.rings()[0].last());
    }

    #[test]
    fn centroid_lookup_and_first_match_wins() {
        let a = Neighborhood {
            id: "A".into(),
            polygons: vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)],
        };
        let b = Neighborhood {
            id: "B".into(),
            polygons: vec![Polygon::rect(0.5, 0.5, 2.0, 2.0)],
        };
        let map = NeighborhoodMap::new(vec![a.clone(), b.clone()]).unwrap();
        let (clat, clon) = a.polygons[0].centroid();
        assert!((clat - 0.5).abs() < 1e-12 && (clon - 0.5).abs() < 1e-12);
        assert_eq!(map.lookup(clat, clon), Some("A"));
        assert_eq!(map.lookup(0.75, 0.75), Some("A"));
        assert_eq!(map.lookup(1.5, 1.5), Some("B"));
        assert_eq!(map.lookup(5.0, 5.0), None);
        let swapped = NeighborhoodMap::new(vec![b, a]).unwrap();
        assert_eq!(swapped.lookup(0.75, 0.75), Some("B"));
    }

    /// Winding-number test, written independently of the ray-casting code.
    fn winding_contains(ring: &[[f64; 2]], lat: f64, lon: f64) -> bool {
        let mut wn = 0i32;
        for w in ring.windows(2) {
            let (x1, y1, x2, y2) = (w[0][0], w[0][1], w[1][0], w[1][1]);
            let is_left = (x2 - x1) * (lat - y1) - (lon - x1) * (y2 - y1);
            if y1 <= lat {
                if y2 > lat && is_left > 0.0 {
                    wn += 1;
                }
            } else if y2 <= lat && is_left < 0.0 {
                wn -= 1;
            }
        }
        wn != 0
    }

    #[test]
    fn agrees_with_winding_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // an irregular star-shaped polygon per cell of a 3x3 grid
        let mut regions = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let (cy, cx) = (r as f64 + 0.5, c as f64 + 0.5);
                let ring: Vec<[f64; 2]> = (0..9)
                    .map(|k| {
                        let ang = k as f64 / 9.0 * std::f64::consts::TAU;
                        let rad = rng.gen_range(0.2..0.5);
                        [cx + rad * ang.cos(), cy + rad * ang.sin()]
                    })
                    .collect();
                regions.push(Neighborhood {
                    id: format!("{r}{c}"),
                    polygons: vec![Polygon::new(vec![ring]).unwrap()],
                });
            }
        }
        let map = NeighborhoodMap::new(regions.clone()).unwrap();
        for _ in 0..1000 {
            let lat = rng.gen_range(-0.2..3.2);
            let lon = rng.gen_range(-0.2..3.2);
            let expected = regions
                .iter()
                .find(|n| winding_contains(&n.polygons[0].rings()[0], lat, lon))
                .map(|n| n.id.as_str());
            assert_eq!(map.lookup(lat, lon), expected, "({lat}, {lon})");
        }
    }

    #[test]
    fn geojson_round_trip() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"GEOID":360610001001},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
          {"type":"Feature","properties":{"GEOID":"B"},
           "geometry":{"type":"MultiPolygon","coordinates":[[[[2,2],[3,2],[3,3],[2,2]]],[[[5,5],[6,5],[6,6]]]]}}
        ]}"#;
        let map = NeighborhoodMap::read_geojson(text.as_bytes(), "GEOID").unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.lookup(0.5, 0.5), Some("360610001001"));
        assert_eq!(map.lookup(5.2, 5.8), Some("B"));

        let mut buf = Vec::new();
        map.write_geojson(&mut buf, "GEOID", |id| {
            let mut m = Map::new();
            m.insert("cluster".into(), json!(id.len()));
            m
        })
        .unwrap();
        let back = NeighborhoodMap::read_geojson(buf.as_slice(), "GEOID").unwrap();
        assert_eq!(back.regions(), map.regions());
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["features"][1]["properties"]["cluster"], json!(1));

        assert!(NeighborhoodMap::read_geojson(text.as_bytes(), "NAME").is_err());
    }
}
