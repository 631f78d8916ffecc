use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::CoefficientLaw;
use crate::mech::{derive_seed, seeded_rng};
use crate::types::{Histogram, QueryMatrix, UniversePoints};

/// Axis-aligned box `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for CoordBox {
    fn default() -> Self {
        Self {
            x: (0.0, 100.0),
            y: (0.0, 100.0),
        }
    }
}

impl CoordBox {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if ok(self.x) && ok(self.y) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad coordinate box {self:?}")))
        }
    }
}

// separate streams so that changing one generator's draw count leaves the others untouched
const UNIVERSE_STREAM: u64 = 0x55;
const QUERY_STREAM: u64 = 0x51;
const HISTOGRAM_STREAM: u64 = 0x48;

/// `size` distinct points drawn uniformly from `bounds`.
pub fn gen_universe(size: usize, bounds: CoordBox, seed: u64) -> Result<UniversePoints> {
    if size < 2 {
        return Err(Error::Invalid(format!("universe needs N >= 2, got {size}")));
    }
    bounds.validate()?;
    let mut rng = seeded_rng(derive_seed(seed, UNIVERSE_STREAM));
    let mut seen = HashSet::with_capacity(size);
    let mut points = Vec::with_capacity(size);
    while points.len() < size {
        let p = [
            rng.random_range(bounds.x.0..bounds.x.1),
            rng.random_range(bounds.y.0..bounds.y.1),
        ];
        if seen.insert((p[0].to_bits(), p[1].to_bits())) {
            points.push(p.to_vec());
        }
    }
    UniversePoints::new(points)
}

/// `count` random `k × n` query matrices; query `i` depends only on `(seed, i)`.
pub fn gen_queries(count: usize, k: usize, n: usize, law: CoefficientLaw, seed: u64) -> Result<Vec<QueryMatrix>> {
    if count == 0 || k == 0 || n == 0 {
        return Err(Error::Invalid("query count, K and N must be >= 1".into()));
    }
    let root = derive_seed(seed, QUERY_STREAM);
    (0..count)
        .map(|i| {
            let mut rng = seeded_rng(derive_seed(root, i as u64));
            let data = (0..k * n)
                .map(|_| match law {
                    CoefficientLaw::Uniform => rng.random::<f64>(),
                    CoefficientLaw::Binary => f64::from(u8::from(rng.random::<bool>())),
                })
                .collect();
            QueryMatrix::new(k, n, data)
        })
        .collect()
}

/// Multinomial histogram of `records` draws, uniform over `bins`.
pub fn gen_histogram(bins: usize, records: u64, seed: u64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let mut rng = seeded_rng(derive_seed(seed, HISTOGRAM_STREAM));
    let mut counts = vec![0u64; bins];
    for _ in 0..records {
        counts[rng.random_range(0..bins)] += 1;
    }
    Ok(Histogram::new(counts))
}

/// Random points with an `elevation` attribute that varies smoothly with
/// position and a `population` attribute that does not.
pub fn correlated_elevation_points(size: usize, seed: u64) -> Result<UniversePoints> {
    let mut pts = gen_universe(size, CoordBox::default(), seed)?;
    let elevation = pts
        .points
        .iter()
        .map(|p| 200.0 + 12.0 * p[0] + 6.0 * p[1] + 150.0 * (p[0] / 25.0).sin() * (p[1] / 40.0).cos())
        .collect();
    let mut rng = seeded_rng(derive_seed(seed, UNIVERSE_STREAM + 1));
    let population = (0..size).map(|_| rng.random_range(50_000.0..2_000_000.0f64).round()).collect();
    pts.attributes.insert("elevation".into(), elevation);
    pts.attributes.insert("population".into(), population);
    Ok(pts)
}

/// Single query with the named attribute as coefficients.
pub fn attribute_query(points: &UniversePoints, name: &str) -> Result<QueryMatrix> {
    let coeffs = points
        .attribute(name)
        .ok_or_else(|| Error::Invalid(format!("points have no attribute '{name}'")))?;
    QueryMatrix::single(coeffs)
}
