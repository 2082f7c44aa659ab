use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridSpec, VectorVolume};

pub const DEFAULT_NUM_SEEDS: usize = 200;
pub const DEFAULT_MAX_STEPS: usize = 1000;
const MIN_SPEED: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    MaxSteps,
    DomainExit,
    ZeroVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    pub seed: [f64; 3],
    pub points: Vec<[f64; 3]>,
    pub termination: Termination,
}

/// Seed positions in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub seeds: Vec<[f64; 3]>,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

impl SeedSet {
    /// Halton points in bases 2, 3, 5 with a seeded toroidal shift, mapped
    /// into the grid's bounding box.
    pub fn halton(grid: &GridSpec, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let (lo, hi) = grid.bounds();
        let seeds = (1..=count as u64)
            .map(|i| {
                let h = [radical_inverse(i, 2), radical_inverse(i, 3), radical_inverse(i, 5)];
                std::array::from_fn(|a| {
                    let u = (h[a] + shift[a]).fract();
                    lo[a] + u * (hi[a] - lo[a])
                })
            })
            .collect();
        SeedSet { seeds }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub num_seeds: usize,
    /// World-space step; `None` means half the smallest grid spacing.
    pub step: Option<f64>,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            num_seeds: DEFAULT_NUM_SEEDS,
            step: None,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
        }
    }
}

impl TraceConfig {
    pub fn step_for(&self, grid: &GridSpec) -> f64 {
        self.step
            .unwrap_or_else(|| 0.5 * grid.spacing.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

struct Sampler<'a> {
    field: &'a VectorVolume,
    lo: [f64; 3],
    hi: [f64; 3],
    spacing: [f64; 3],
}

impl Sampler<'_> {
    fn inside(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    fn velocity(&self, p: [f64; 3]) -> [f64; 3] {
        let idx = std::array::from_fn(|a| (p[a] - self.lo[a]) / self.spacing[a]);
        self.field.sample_index(idx)
    }
}

fn axpy(p: [f64; 3], s: f64, v: [f64; 3]) -> [f64; 3] {
    [p[0] + s * v[0], p[1] + s * v[1], p[2] + s * v[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Classic RK4 streamline integration with trilinear velocity lookup.
/// Integration stops when the next point would leave the grid, after
/// `max_steps` steps, or when the local speed drops below `1e-8`.
pub fn trace_streamlines(
    field: &VectorVolume,
    seeds: &SeedSet,
    step: f64,
    max_steps: usize,
) -> Result<Vec<Streamline>> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("streamline step must be positive, got {step}")));
    }
    let grid = field.grid();
    let (lo, hi) = grid.bounds();
    let s = Sampler {
        field,
        lo,
        hi,
        spacing: grid.spacing,
    };
    Ok(seeds.seeds.iter().map(|&seed| trace_one(&s, seed, step, max_steps)).collect())
}

fn trace_one(s: &Sampler<'_>, seed: [f64; 3], h: f64, max_steps: usize) -> Streamline {
    let mut points = vec![seed];
    let mut p = seed;
    if !s.inside(p) {
        return Streamline {
            seed,
            points,
            termination: Termination::DomainExit,
        };
    }
    for _ in 0..max_steps {
        let k1 = s.velocity(p);
        if norm(k1) < MIN_SPEED {
            return Streamline {
                seed,
                points,
                termination: Termination::ZeroVelocity,
            };
        }
        let k2 = s.velocity(axpy(p, 0.5 * h, k1));
        let k3 = s.velocity(axpy(p, 0.5 * h, k2));
        let k4 = s.velocity(axpy(p, h, k3));
        let next = std::array::from_fn(|a| p[a] + h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]));
        if !s.inside(next) {
            return Streamline {
                seed,
                points,
                termination: Termination::DomainExit,
            };
        }
        points.push(next);
        p = next;
    }
    Streamline {
        seed,
        points,
        termination: Termination::MaxSteps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ScalarVolume;

    fn field(grid: &GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> VectorVolume {
        let comp = |a: usize| {
            ScalarVolume::from_fn(grid.clone(), |x, y, z| f(grid.position(x, y, z))[a] as f32).unwrap()
        };
        VectorVolume::new(comp(0), comp(1), comp(2)).unwrap()
    }

    #[test]
    fn halton_seeds_are_deterministic_and_inside() {
        let g = GridSpec::new([8, 9, 10], [0.5, 1.0, 2.0], [-1.0, 0.0, 3.0]).unwrap();
        let a = SeedSet::halton(&g, 200, 7);
        assert_eq!(a.len(), 200);
        assert_eq!(a, SeedSet::halton(&g, 200, 7));
        assert_ne!(a, SeedSet::halton(&g, 200, 8));
        let (lo, hi) = g.bounds();
        for p in &a.seeds {
            for ax in 0..3 {
                assert!(p[ax] >= lo[ax] && p[ax] <= hi[ax]);
            }
        }
    }

    #[test]
    fn uniform_field_gives_straight_evenly_spaced_line() {
        let g = GridSpec::unit([16, 8, 8]).unwrap();
        let f = field(&g, |_| [1.0, 0.0, 0.0]);
        let seeds = SeedSet { seeds: vec![[0.25, 3.0, 4.0]] };
        let lines = trace_streamlines(&f, &seeds, 0.5, 1000).unwrap();
        let l = &lines[0];
        assert_eq!(l.termination, Termination::DomainExit);
        assert_eq!(l.points.len(), 30);
        for (i, p) in l.points.iter().enumerate() {
            assert!((p[0] - (0.25 + 0.5 * i as f64)).abs() < 1e-12);
            assert_eq!((p[1], p[2]), (3.0, 4.0));
        }
    }

    #[test]
    fn zero_field_stops_immediately() {
        let g = GridSpec::unit([4, 4, 4]).unwrap();
        let f = field(&g, |_| [0.0; 3]);
        let seeds = SeedSet::halton(&g, 5, 1);
        for l in trace_streamlines(&f, &seeds, 0.1, 10).unwrap() {
            assert_eq!(l.points.len(), 1);
            assert_eq!(l.termination, Termination::ZeroVelocity);
        }
        assert!(matches!(
            trace_streamlines(&f, &SeedSet { seeds: vec![] }, 0.1, 10),
            Err(Error::EmptySeeds)
        ));
    }

    #[test]
    fn circular_field_keeps_its_radius() {
        let g = GridSpec::new([21, 21, 3], [0.1, 0.1, 0.1], [-1.0, -1.0, -0.1]).unwrap();
        let f = field(&g, |p| [-p[1], p[0], 0.0]);
        let seeds = SeedSet { seeds: vec![[0.5, 0.0, 0.0]] };
        let h = 1e-2;
        let steps = (2.0 * std::f64::consts::PI / h).round() as usize;
        let l = &trace_streamlines(&f, &seeds, h, steps).unwrap()[0];
        assert_eq!(l.points.len(), steps + 1);
        for p in &l.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5).abs() / 0.5 < 1e-4, "radius {r}");
        }
    }

    #[test]
    fn time_rescaling_leaves_paths_unchanged() {
        let g = GridSpec::unit([12, 12, 12]).unwrap();
        let base = |p: [f64; 3]| [(0.3 * p[1]).sin() + 0.2, (0.2 * p[2]).cos(), 0.1 * (0.4 * p[0]).sin()];
        let f1 = field(&g, base);
        let seeds = SeedSet::halton(&g, 20, 3);
        let a = trace_streamlines(&f1, &seeds, 0.2, 200).unwrap();
        for c in [0.25, 2.0, 8.0] {
            let fc = field(&g, |p| base(p).map(|v| v * c));
            let b = trace_streamlines(&fc, &seeds, 0.2 / c, 200).unwrap();
            for (la, lb) in a.iter().zip(&b) {
                assert_eq!(la.points.len(), lb.points.len());
                for (p, q) in la.points.iter().zip(&lb.points) {
                    for ax in 0..3 {
                        assert!((p[ax] - q[ax]).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
