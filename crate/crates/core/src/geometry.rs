//! Tracks, line-shape metrics and discrete geodesics in W2.

use crate::assignment::EmpiricalMeasure;
use crate::numerics::Vector;
use crate::{Error, Result, DEGENERATE_NORM};

/// One sample's representations `x(0) -> x(1) -> .. -> x(n)` inside a
/// fixed-width stage of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    states: Vec<Vector>,
}

impl Track {
    pub fn new(states: Vec<Vector>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::DegenerateTrack("a track needs at least one segment"));
        }
        let dim = states[0].dim();
        if let Some(s) = states.iter().find(|s| s.dim() != dim) {
            return Err(Error::dim("track state", dim, s.dim()));
        }
        if !states.iter().all(Vector::is_finite) {
            return Err(Error::NonFinite("track"));
        }
        Ok(Track { states })
    }

    pub(crate) fn from_states_unchecked(states: Vec<Vector>) -> Self {
        debug_assert!(states.len() >= 2);
        Track { states }
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn into_states(self) -> Vec<Vector> {
        self.states
    }

    /// Number of segments.
    pub fn segments(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn first(&self) -> &Vector {
        &self.states[0]
    }

    pub fn last(&self) -> &Vector {
        &self.states[self.states.len() - 1]
    }

    fn segment_vectors(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.states.windows(2).map(|w| {
            w[1].as_slice()
                .iter()
                .zip(w[0].as_slice())
                .map(|(b, a)| b - a)
                .collect()
        })
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.segment_vectors().map(|s| norm(&s)).collect()
    }

    pub fn chord_length(&self) -> f64 {
        self.first().dist(self.last()).expect("track states share one dim")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Line-shape ratio: polyline length over chord length.
pub fn lsr(track: &Track) -> Result<f64> {
    let chord = track.chord_length();
    if chord <= DEGENERATE_NORM {
        return Err(Error::DegenerateTrack("endpoints coincide"));
    }
    // The triangle inequality floors the ratio at 1; clamp away rounding.
    Ok((track.segment_lengths().iter().sum::<f64>() / chord).max(1.0))
}

/// Line-shape score: chain the unit-normalized segments and divide their
/// count by the resulting chord. Segments of norm `<= 1e-12` carry no
/// direction and are dropped, reducing the count.
pub fn lss(track: &Track) -> Result<f64> {
    let mut end = vec![0.0; track.dim()];
    let mut kept = 0usize;
    for seg in track.segment_vectors() {
        let len = norm(&seg);
        if len <= DEGENERATE_NORM {
            continue;
        }
        kept += 1;
        for (e, s) in end.iter_mut().zip(&seg) {
            *e += s / len;
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateTrack("every segment has zero length"));
    }
    let chord = norm(&end);
    if chord <= DEGENERATE_NORM {
        // Unit segments that cancel exactly: infinitely far from straight.
        return Ok(f64::INFINITY);
    }
    // `chord <= kept` by the triangle inequality; clamp away rounding.
    Ok((kept as f64 / chord).max(1.0))
}

/// Minimum over layers of the distance between corresponding states.
pub fn track_distance(a: &Track, b: &Track) -> Result<f64> {
    if a.segments() != b.segments() || a.dim() != b.dim() {
        return Err(Error::dim(
            "track distance",
            format!("{} segments, dim {}", a.segments(), a.dim()),
            format!("{} segments, dim {}", b.segments(), b.dim()),
        ));
    }
    let min_sq = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.dist_sq(y).expect("dims checked"))
        .fold(f64::INFINITY, f64::min);
    Ok(min_sq.sqrt())
}

/// Lower bound on the minimum distance between two particles moving along
/// an optimal-transport geodesic:
/// `|xp - xq| |T(xp) - T(xq)| / sqrt(|xp - xq|^2 + |T(xp) - T(xq)|^2)`.
pub fn theorem1_bound(xp: &Vector, xq: &Vector, txp: &Vector, txq: &Vector) -> Result<f64> {
    let dim = xp.dim();
    for v in [xq, txp, txq] {
        if v.dim() != dim {
            return Err(Error::dim("separation bound", dim, v.dim()));
        }
    }
    let a = xp.dist(xq)?;
    let b = txp.dist(txq)?;
    if a <= DEGENERATE_NORM && b <= DEGENERATE_NORM {
        return Ok(0.0);
    }
    Ok(a * b / (a * a + b * b).sqrt())
}

/// Source point `x` and its transport image `T(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPair {
    source: Vector,
    target: Vector,
}

impl GeodesicPair {
    pub fn new(source: Vector, target: Vector) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::dim("geodesic pair", source.dim(), target.dim()));
        }
        Ok(GeodesicPair { source, target })
    }

    pub fn source(&self) -> &Vector {
        &self.source
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    /// `(1 - t) x + t T(x)`
    pub fn at(&self, t: f64) -> Vector {
        self.source.lerp(&self.target, t).expect("dims checked")
    }
}

/// Pairs `(a_i, b_sigma(i))` for a transport permutation `sigma`.
pub fn pairs_from_plan(a: &EmpiricalMeasure, b: &EmpiricalMeasure, permutation: &[usize]) -> Result<Vec<GeodesicPair>> {
    if permutation.len() != a.len() || b.len() != a.len() {
        return Err(Error::dim("transport plan", a.len(), permutation.len()));
    }
    a.points()
        .iter()
        .zip(permutation)
        .map(|(x, &j)| GeodesicPair::new(x.clone(), b.points()[j].clone()))
        .collect()
}

/// Displacement interpolation `((1 - t) I + t T)_# mu_0`.
pub fn geodesic_interpolate(pairs: &[GeodesicPair], t: f64) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range {
            name: "t",
            value: t,
            range: "[0, 1]",
        });
    }
    let points = pairs
        .iter()
        .map(|p| {
            if t == 0.0 {
                p.source.clone()
            } else if t == 1.0 {
                p.target.clone()
            } else {
                p.at(t)
            }
        })
        .collect();
    EmpiricalMeasure::new(points)
}

/// `T(x) - x`: the constant velocity of the particle on its geodesic segment.
pub fn optimal_velocity(pair: &GeodesicPair) -> Result<Vector> {
    pair.target.sub(&pair.source)
}

/// Discrete action of a track: total length and sum of squared segment
/// lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackAction {
    pub length: f64,
    pub energy: f64,
}

pub fn track_action(track: &Track) -> TrackAction {
    let lengths = track.segment_lengths();
    TrackAction {
        length: lengths.iter().sum(),
        energy: lengths.iter().map(|l| l * l).sum(),
    }
}

/// Equally spaced states `x(l) = (l xn + (n - l) x0) / n`, the minimizer of
/// the discrete energy among tracks with these endpoints.
pub fn straight_line_track(x0: &Vector, xn: &Vector, n: usize) -> Result<Track> {
    if n == 0 {
        return Err(Error::Range {
            name: "segments",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    if x0.dim() != xn.dim() {
        return Err(Error::dim("straight track endpoints", x0.dim(), xn.dim()));
    }
    let states = (0..=n)
        .map(|l| {
            let entries = x0
                .as_slice()
                .iter()
                .zip(xn.as_slice())
                .map(|(a, b)| (l as f64 * b + (n - l) as f64 * a) / n as f64)
                .collect();
            Vector::new(entries)
        })
        .collect::<Result<Vec<_>>>()?;
    Track::new(states)
}
