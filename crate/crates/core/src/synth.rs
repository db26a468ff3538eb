//! Seeded synthetic point sets used by tests, benchmarks, the CLI `synth`
//! command and the browser demo.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::{GridSpec, PointRecord, Schema, ATTR_CLASS, ATTR_ECHO, ATTR_INTENSITY};

/// 64 points along x at `y = z = 7.5/16` in the unit cube.
pub fn segment() -> Vec<[f64; 3]> {
    (0..64).map(|i| [(f64::from(i) + 0.5) / 64.0, 7.5 / 16.0, 7.5 / 16.0]).collect()
}

/// Cell centers of a `2^level` lattice in the unit cube, spanning `dim` axes
/// (x, then y, then z). Other axes sit just below one half.
pub fn lattice(dim: usize, level: u8) -> Vec<[f64; 3]> {
    assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
    let n = 1usize << level;
    let step = 1.0 / n as f64;
    let center = |i: usize| (i as f64 + 0.5) * step;
    let fixed = center(n / 2 - usize::from(n > 1));
    let count = n.pow(dim as u32);
    (0..count)
        .map(|k| {
            let mut p = [fixed; 3];
            let mut rest = k;
            for c in p.iter_mut().take(dim) {
                *c = center(rest % n);
                rest /= n;
            }
            p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Line,
    Plane,
    Volume,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Line, Shape::Plane, Shape::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Line => "line",
            Shape::Plane => "plane",
            Shape::Volume => "volume",
        }
    }

    /// Value stored in the `class` attribute.
    pub fn class_value(self) -> f64 {
        match self {
            Shape::Line => 1.0,
            Shape::Plane => 2.0,
            Shape::Volume => 3.0,
        }
    }

    pub fn from_class_value(v: i64) -> Option<Self> {
        Shape::ALL.into_iter().find(|s| s.class_value() as i64 == v)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Shape::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn dimension(self) -> f64 {
        self.class_value()
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n2 = v.iter().map(|x| x * x).sum::<f64>();
        if (0.01..=1.0).contains(&n2) {
            let n = n2.sqrt();
            return v.map(|x| x / n);
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// `n` points of a randomly oriented line, plane or sub-box inside the cube
/// `[origin, origin + side)`, with uniform jitter of `jitter * side`.
pub fn shape_patch(rng: &mut impl Rng, shape: Shape, n: usize, origin: [f64; 3], side: f64, jitter: f64) -> Vec<[f64; 3]> {
    let center: [f64; 3] = std::array::from_fn(|_| 0.5 + rng.gen_range(-0.1..0.1));
    let inside = |p: &[f64; 3]| p.iter().all(|c| (0.0..1.0).contains(c));
    let mut out = Vec::with_capacity(n);
    match shape {
        Shape::Line => {
            let d = random_unit(rng);
            while out.len() < n {
                let t = rng.gen_range(-0.9..0.9);
                let p: [f64; 3] = std::array::from_fn(|k| center[k] + t * d[k] + jitter * rng.gen_range(-1.0..1.0));
                if inside(&p) {
                    out.push(p);
                }
            }
        }
        Shape::Plane => {
            let normal = random_unit(rng);
            let helper = if normal[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let u = normalize(cross(normal, helper));
            let v = cross(normal, u);
            while out.len() < n {
                let (a, b) = (rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
                let p: [f64; 3] =
                    std::array::from_fn(|k| center[k] + a * u[k] + b * v[k] + jitter * rng.gen_range(-1.0..1.0));
                if inside(&p) {
                    out.push(p);
                }
            }
        }
        Shape::Volume => {
            let ext: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
            let lo: [f64; 3] = std::array::from_fn(|k| rng.gen_range(0.0..1.0 - ext[k]));
            for _ in 0..n {
                out.push(std::array::from_fn(|k| lo[k] + ext[k] * rng.gen::<f64>()));
            }
        }
    }
    out.into_iter().map(|p| std::array::from_fn(|k| origin[k] + side * p[k])).collect()
}

/// Unit-cube [`shape_patch`] drawn from its own seeded generator.
pub fn seeded_shape(shape: Shape, n: usize, seed: u64) -> Vec<[f64; 3]> {
    shape_patch(&mut ChaCha8Rng::seed_from_u64(seed), shape, n, [0.0; 3], 1.0, 0.002)
}

/// `n` uniform points in the cube `[origin, origin + side)`.
pub fn uniform_patch(rng: &mut impl Rng, n: usize, origin: [f64; 3], side: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|k| origin[k] + side * rng.gen::<f64>())).collect()
}

/// Schema of generated corpora.
pub fn corpus_schema() -> Schema {
    Schema::new([ATTR_INTENSITY, ATTR_ECHO, ATTR_CLASS])
}

fn records(rng: &mut impl Rng, points: Vec<[f64; 3]>, class: f64) -> impl Iterator<Item = PointRecord> + '_ {
    points.into_iter().map(move |p| PointRecord {
        position: p,
        attributes: vec![rng.gen_range(0.0..255.0), f64::from(rng.gen_range(1u8..=3)), class],
    })
}

/// Line, plane and volume patches, `per_class` of each, one per 1 m grid
/// cell along a 20 cell wide strip, with 500 to 3000 points each. Intensity
/// and echo are drawn from the same distribution for every class.
pub fn class_corpus(per_class: usize, seed: u64) -> (Vec<PointRecord>, Schema, GridSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..3 * per_class {
        let shape = Shape::ALL[i % 3];
        let origin = [(i % 20) as f64, (i / 20) as f64, 0.0];
        let n = rng.gen_range(500..=3000);
        let pts = shape_patch(&mut rng, shape, n, origin, 1.0, 0.002);
        let recs: Vec<PointRecord> = records(&mut rng, pts, shape.class_value()).collect();
        out.extend(recs);
    }
    (out, corpus_schema(), GridSpec::new(1.0).expect("positive size"))
}

/// Class value of ground points in [`ground_scenario`].
pub const GROUND_CLASS: f64 = 2.0;
/// Class value of object points in [`ground_scenario`].
pub const OBJECT_CLASS: f64 = 6.0;

/// A 20 x 20 m ground layer of 1 m patches plus 80 object columns rising
/// 10 m above it.
pub fn ground_scenario(seed: u64) -> (Vec<PointRecord>, Schema, GridSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut columns: Vec<(usize, usize)> = (0..20).flat_map(|x| (0..20).map(move |y| (x, y))).collect();
    for x in 0..20 {
        for y in 0..20 {
            let pts: Vec<[f64; 3]> = (0..30)
                .map(|_| [x as f64 + rng.gen::<f64>(), y as f64 + rng.gen::<f64>(), rng.gen_range(0.2..0.4)])
                .collect();
            let recs: Vec<PointRecord> = records(&mut rng, pts, GROUND_CLASS).collect();
            out.extend(recs);
        }
    }
    rand::seq::SliceRandom::shuffle(columns.as_mut_slice(), &mut rng);
    for &(x, y) in &columns[..80] {
        for z in 1..=10 {
            let pts = uniform_patch(&mut rng, 30, [x as f64, y as f64, f64::from(z)], 1.0);
            let recs: Vec<PointRecord> = records(&mut rng, pts, OBJECT_CLASS).collect();
            out.extend(recs);
        }
    }
    (out, corpus_schema(), GridSpec::new(1.0).expect("positive size"))
}

/// `patches` uniform volume patches of `points` points each, on a 1 m grid.
pub fn dense_corpus(patches: usize, points: usize, seed: u64) -> (Vec<PointRecord>, Schema, GridSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(patches * points);
    for i in 0..patches {
        let pts = uniform_patch(&mut rng, points, [i as f64, 0.0, 0.0], 1.0);
        let recs: Vec<PointRecord> = records(&mut rng, pts, 0.0).collect();
        out.extend(recs);
    }
    (out, corpus_schema(), GridSpec::new(1.0).expect("positive size"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_sizes() {
        assert_eq!(lattice(1, 3).len(), 8);
        assert_eq!(lattice(2, 3).len(), 64);
        assert_eq!(lattice(3, 2).len(), 64);
        assert!(lattice(2, 3).iter().all(|p| p[2] == 3.5 / 8.0));
    }

    #[test]
    fn shapes_stay_in_their_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in Shape::ALL {
            let pts = shape_patch(&mut rng, s, 200, [3.0, -2.0, 5.0], 2.0, 0.001);
            assert_eq!(pts.len(), 200);
            assert!(pts.iter().all(|p| (3.0..5.0).contains(&p[0]) && (-2.0..0.0).contains(&p[1]) && (5.0..7.0).contains(&p[2])));
        }
    }

    #[test]
    fn corpora_are_seeded() {
        assert_eq!(class_corpus(2, 9).0, class_corpus(2, 9).0);
        assert_ne!(class_corpus(2, 9).0, class_corpus(2, 10).0);
        assert_eq!(ground_scenario(1).0.len(), (400 + 800) * 30);
    }
}
