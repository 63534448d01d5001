//! Sub-level sets of a value field: membership, slices, masks and contours.
//!
//! Sets are closed: a state belongs to the `J`-level set when its
//! interpolated value is `<= J`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, OutOfDomain, ValueField};
use crate::MAX_DIM;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub inside: bool,
    pub value: f64,
    /// Set when the state left a non-periodic axis range.
    pub out_of_domain: bool,
}

/// `interpolate(field, s) <= j`. Out-of-domain states are never members
/// under [`OutOfDomain::Saturate`].
pub fn member(field: &ValueField, s: &[f64], j: f64, policy: OutOfDomain) -> Result<Membership> {
    let value = field.interpolate(s, policy)?;
    let out_of_domain = !field.grid().contains(s);
    let inside = value <= j && !(out_of_domain && policy == OutOfDomain::Saturate);
    Ok(Membership {
        inside,
        value,
        out_of_domain,
    })
}

/// Returns the first threshold at or above `lambda * T + Lambda`, where the
/// field no longer equals the minimal performance index.
pub fn beyond_validity(thresholds: &[f64], validity_bound: f64) -> Option<f64> {
    thresholds.iter().copied().find(|&j| j >= validity_bound)
}

/// 2-D field over the two free axes with the others fixed.
///
/// `fixed` must name exactly `dim - 2` distinct axes.
pub fn slice(field: &ValueField, fixed: &[(usize, f64)]) -> Result<ValueField> {
    let grid = field.grid();
    let n = grid.dim();
    if n < 2 || fixed.len() + 2 != n {
        return Err(Error::InvalidConfig(alloc::format!(
            "slicing a {n}-D field needs {} fixed dimensions, got {}",
            n.saturating_sub(2),
            fixed.len()
        )));
    }
    let mut pinned = [None; MAX_DIM];
    for &(d, x) in fixed {
        if d >= n || pinned[d].is_some() {
            return Err(Error::InvalidConfig(alloc::format!(
                "fixed dimension {d} is out of range or repeated"
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if !grid.axis(d).contains(x) {
            return Err(Error::OutOfDomain);
        }
        pinned[d] = Some(x);
    }
    if fixed.is_empty() {
        return Ok(field.clone());
    }
    let free: Vec<usize> = (0..n).filter(|&d| pinned[d].is_none()).collect();
    let out_grid = GridSpec::new(free.iter().map(|&d| *grid.axis(d)).collect())?;

    let mut point = [0.0; MAX_DIM];
    for d in 0..n {
        if let Some(x) = pinned[d] {
            point[d] = x;
        }
    }
    let mut plane = [0.0; 2];
    let mut values = vec![0.0; out_grid.node_count()];
    for (node, slot) in values.iter_mut().enumerate() {
        out_grid.node_at(node, &mut plane);
        point[free[0]] = plane[0];
        point[free[1]] = plane[1];
        *slot = field.interpolate(&point[..n], OutOfDomain::Clamp)?;
    }
    ValueField::new(out_grid, values, field.meta().clone())
}

/// One byte per node in field order: 1 when the node value is `<= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub grid: GridSpec,
    pub threshold: f64,
    pub cells: Vec<u8>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b != 0).count()
    }

    /// Nodes set here but not in `other`.
    pub fn violations_against(&self, other: &Mask) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(&a, &b)| a != 0 && b == 0)
            .count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.cells.len() == other.cells.len() && self.violations_against(other) == 0
    }
}

pub fn mask(field: &ValueField, threshold: f64) -> Mask {
    Mask {
        grid: field.grid().clone(),
        threshold,
        cells: field
            .values()
            .iter()
            .map(|&v| u8::from(v <= threshold))
            .collect(),
    }
}

/// Polylines of the `threshold` level of a 2-D field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelSetContour {
    pub threshold: f64,
    /// Axes of the originating field held fixed to produce the 2-D slice.
    pub fixed: Vec<(usize, f64)>,
    /// Closed loops repeat their first point at the end.
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl LevelSetContour {
    pub fn point_count(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum()
    }
}

/// Grid edge between node `(i, j)` and its neighbour along axis 0 (`X`) or
/// axis 1 (`Y`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    X(usize, usize),
    Y(usize, usize),
}

/// Marching squares over the node lattice.
///
/// Edge crossings are placed by linear interpolation of the two edge values;
/// ambiguous saddle cells are split by comparing the cell-centre average
/// against the threshold. Periodic axes are contoured without the seam cell.
pub fn extract_contours(field: &ValueField, threshold: f64) -> Result<LevelSetContour> {
    let grid = field.grid();
    if grid.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: grid.dim(),
        });
    }
    let (nx, ny) = (grid.axis(0).points, grid.axis(1).points);
    let v = field.values();
    let at = |i: usize, j: usize| v[i * ny + j];
    let inside = |i: usize, j: usize| at(i, j) <= threshold;

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            // corners a=(i,j) b=(i+1,j) c=(i+1,j+1) d=(i,j+1)
            let bits = u8::from(inside(i, j))
                | u8::from(inside(i + 1, j)) << 1
                | u8::from(inside(i + 1, j + 1)) << 2
                | u8::from(inside(i, j + 1)) << 3;
            let ab = Edge::X(i, j);
            let bc = Edge::Y(i + 1, j);
            let dc = Edge::X(i, j + 1);
            let ad = Edge::Y(i, j);
            match bits {
                0 | 15 => {}
                1 | 14 => segments.push((ad, ab)),
                2 | 13 => segments.push((ab, bc)),
                4 | 11 => segments.push((bc, dc)),
                8 | 7 => segments.push((dc, ad)),
                3 | 12 => segments.push((ad, bc)),
                6 | 9 => segments.push((ab, dc)),
                5 | 10 => {
                    let centre = 0.25 * (at(i, j) + at(i + 1, j) + at(i + 1, j + 1) + at(i, j + 1));
                    let centre_inside = centre <= threshold;
                    let a_inside = bits == 5;
                    if centre_inside == a_inside {
                        // a and c joined through the centre: cut off b and d
                        segments.push((ab, bc));
                        segments.push((dc, ad));
                    } else {
                        segments.push((ad, ab));
                        segments.push((bc, dc));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    let crossing = |e: Edge| -> [f64; 2] {
        let (i0, j0, i1, j1) = match e {
            Edge::X(i, j) => (i, j, i + 1, j),
            Edge::Y(i, j) => (i, j, i, j + 1),
        };
        let (v0, v1) = (at(i0, j0), at(i1, j1));
        let t = ((threshold - v0) / (v1 - v0)).clamp(0.0, 1.0);
        let (ax, ay) = (grid.axis(0), grid.axis(1));
        let (x0, y0) = (ax.node(i0), ay.node(j0));
        let (x1, y1) = (ax.node(i1), ay.node(j1));
        [x0 + t * (x1 - x0), y0 + t * (y1 - y0)]
    };

    Ok(LevelSetContour {
        threshold,
        fixed: Vec::new(),
        polylines: join_segments(&segments)
            .into_iter()
            .map(|chain| chain.into_iter().map(crossing).collect())
            .collect(),
    })
}

/// Chains segments sharing edges into polylines. Open chains (ending on the
/// domain boundary) are emitted first, then closed loops.
fn join_segments(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut incident: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        incident.entry(a).or_default().push(k);
        incident.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();

    let walk = |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| {
        let mut chain = vec![start_edge];
        let mut seg = start_seg;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            chain.push(next);
            at = next;
            match incident[&at].iter().find(|&&k| !used[k]) {
                Some(&k) => seg = k,
                None => break,
            }
        }
        chain
    };

    let ends: Vec<(Edge, usize)> = incident
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(&e, segs)| (e, segs[0]))
        .collect();
    for (edge, seg) in ends {
        if !used[seg] {
            chains.push(walk(seg, edge, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            chains.push(walk(k, segments[k].0, &mut used));
        }
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, FieldMeta};

    fn radial(n: usize) -> ValueField {
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, n), Axis::new(-1.0, 1.0, n)]).unwrap();
        let mut values = vec![0.0; grid.node_count()];
        let mut p = [0.0; 2];
        for (k, v) in values.iter_mut().enumerate() {
            grid.node_at(k, &mut p);
            *v = (p[0] * p[0] + p[1] * p[1]).sqrt();
        }
        ValueField::new(grid, values, FieldMeta::default()).unwrap()
    }

    #[test]
    fn constant_field_has_no_contour() {
        let grid = GridSpec::new(vec![Axis::new(0.0, 1.0, 4), Axis::new(0.0, 1.0, 4)]).unwrap();
        let f = ValueField::new(grid, vec![2.0; 16], FieldMeta::default()).unwrap();
        assert!(extract_contours(&f, 1.0).unwrap().polylines.is_empty());
        assert!(extract_contours(&f, 3.0).unwrap().polylines.is_empty());
    }

    #[test]
    fn circle_contour_is_one_closed_loop() {
        let f = radial(101);
        let c = extract_contours(&f, 0.5).unwrap();
        assert_eq!(c.polylines.len(), 1);
        let line = &c.polylines[0];
        assert_eq!(line.first(), line.last());
        let diag = 0.02 * core::f64::consts::SQRT_2;
        for p in line {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5).abs() <= diag, "radius {r}");
            let v = f.interpolate(p, OutOfDomain::Clamp).unwrap();
            assert!((v - 0.5).abs() <= 1e-6 * (f.max() - f.min()));
        }
    }

    #[test]
    fn open_contour_ends_on_boundary() {
        // plane x + y, level 0 is the anti-diagonal
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 5), Axis::new(-1.0, 1.0, 5)]).unwrap();
        let mut values = vec![0.0; 25];
        let mut p = [0.0; 2];
        for (k, v) in values.iter_mut().enumerate() {
            grid.node_at(k, &mut p);
            *v = p[0] + p[1] + 0.1;
        }
        let f = ValueField::new(grid, values, FieldMeta::default()).unwrap();
        let c = extract_contours(&f, 0.0).unwrap();
        assert_eq!(c.polylines.len(), 1);
        for p in &c.polylines[0] {
            assert!((p[0] + p[1] + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn saddle_uses_centre_average() {
        // a=0 b=1 c=0 d=1 ; centre 0.5
        let grid = GridSpec::new(vec![Axis::new(0.0, 1.0, 2), Axis::new(0.0, 1.0, 2)]).unwrap();
        // values laid out [ (0,0), (0,1), (1,0), (1,1) ] = [a, d, b, c]
        let f = ValueField::new(grid, vec![0.0, 1.0, 1.0, 0.0], FieldMeta::default()).unwrap();
        let low = extract_contours(&f, 0.4).unwrap();
        let high = extract_contours(&f, 0.6).unwrap();
        assert_eq!(low.polylines.len(), 2);
        assert_eq!(high.polylines.len(), 2);
        // below the centre value the inside corners a, c are isolated
        let near_a = |c: &LevelSetContour| {
            c.polylines
                .iter()
                .any(|l| l.iter().all(|p| p[0] + p[1] < 0.9))
        };
        assert!(near_a(&low));
        // above it the outside corners b, d are cut off instead
        assert!(!near_a(&high));
    }

    #[test]
    fn masks_nest_and_saturate() {
        let f = radial(21);
        let a = mask(&f, 0.3);
        let b = mask(&f, 0.6);
        assert!(a.is_subset_of(&b));
        assert_eq!(mask(&f, f.max()).count(), f.values().len());
        assert_eq!(mask(&f, f.min() - 1.0).count(), 0);
    }

    #[test]
    fn membership_rules() {
        let f = radial(21);
        assert!(member(&f, &[0.0, 0.0], 0.0, OutOfDomain::Saturate).unwrap().inside);
        assert!(!member(&f, &[0.0, 0.0], -0.1, OutOfDomain::Saturate).unwrap().inside);
        let out = member(&f, &[2.0, 0.0], 100.0, OutOfDomain::Saturate).unwrap();
        assert!(out.out_of_domain && !out.inside);
        assert!(member(&f, &[2.0, 0.0], 100.0, OutOfDomain::Clamp).unwrap().inside);
        assert_eq!(beyond_validity(&[0.5, 1.0, 2.0], 1.0), Some(1.0));
    }

    #[test]
    fn slice_counts_and_planes() {
        let grid = GridSpec::new(vec![
            Axis::new(0.0, 1.0, 3),
            Axis::new(0.0, 1.0, 4),
            Axis::periodic(0.0, 2.0, 4),
        ])
        .unwrap();
        let values: Vec<f64> = (0..grid.node_count()).map(|k| k as f64 * 0.5).collect();
        let f = ValueField::new(grid, values, FieldMeta::default()).unwrap();
        assert!(slice(&f, &[]).is_err());
        let s = slice(&f, &[(2, 1.0)]).unwrap();
        assert_eq!(s.grid().shape(), vec![3, 4]);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(s.value_at(&[i, j]).unwrap(), f.value_at(&[i, j, 2]).unwrap());
            }
        }
        let mid = slice(&f, &[(0, 0.5)]).unwrap();
        assert_eq!(mid.grid().shape(), vec![4, 4]);

        let flat = radial(5);
        assert_eq!(slice(&flat, &[]).unwrap(), flat);
        assert!(slice(&f, &[(2, 1.0), (2, 1.5)]).is_err());
        assert!(matches!(slice(&f, &[(0, 3.0)]), Err(Error::OutOfDomain)));
    }
}
