//! Hexagonal site layout with optional wraparound, and the uniform UE drop.
//!
//! Sites sit on a triangular lattice spanned by `(isd, 0)` and
//! `(isd/2, isd*sqrt(3)/2)`. A cluster of `n` rings wraps onto itself through
//! the six translations `rot60^k((n+1)u + n v)`, which is what makes every
//! cell see a full ring of interferers.

use std::f64::consts::PI;

use rand::{Rng, RngExt};

use crate::config::DeploymentLayout;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Add for Point {
    type Output = Point;

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotate(self, rad: f64) -> Point {
        let (s, c) = rad.sin_cos();
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    /// Direction of this vector in degrees, in (-180, 180].
    pub fn angle_deg(self) -> f64 {
        self.y.atan2(self.x).to_degrees()
    }
}

/// One sector of a site.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub site: usize,
    pub position: Point,
    /// Antenna boresight in degrees; `None` for omni cells.
    pub boresight_deg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub isd: f64,
    pub sites: Vec<Point>,
    pub cells: Vec<Cell>,
    /// Translations defining the wrapped images of the cluster (empty without wraparound).
    pub wrap_shifts: Vec<Point>,
}

/// Angular offset between two directions, folded into [0, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

impl Layout {
    /// Lays out sites and sectors. Three-sector sites point at 30, 150 and 270 degrees.
    pub fn new(deployment: &DeploymentLayout) -> Self {
        let isd = deployment.inter_site_distance_m;
        let rings = match deployment.site_count {
            1 => 0,
            7 => 1,
            _ => 2,
        };
        let u = Point::new(isd, 0.0);
        let v = Point::new(isd / 2.0, isd * 3f64.sqrt() / 2.0);

        let mut sites = vec![Point::default()];
        for ring in 1..=rings as i64 {
            // Walk the hexagonal ring starting at ring * u.
            let dirs = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)];
            let (mut i, mut j) = (ring, 0i64);
            for (di, dj) in dirs {
                for _ in 0..ring {
                    sites.push(Point::new(
                        i as f64 * u.x + j as f64 * v.x,
                        i as f64 * u.y + j as f64 * v.y,
                    ));
                    i += di;
                    j += dj;
                }
            }
        }

        let mut cells = Vec::with_capacity(sites.len() * deployment.cells_per_site);
        for (s, &p) in sites.iter().enumerate() {
            if deployment.cells_per_site == 1 {
                cells.push(Cell {
                    id: cells.len(),
                    site: s,
                    position: p,
                    boresight_deg: None,
                });
            } else {
                for k in 0..deployment.cells_per_site {
                    cells.push(Cell {
                        id: cells.len(),
                        site: s,
                        position: p,
                        boresight_deg: Some(30.0 + 120.0 * k as f64),
                    });
                }
            }
        }

        let wrap_shifts = if deployment.wraparound && rings > 0 {
            let r = rings as f64;
            let t = Point::new((r + 1.0) * u.x + r * v.x, (r + 1.0) * u.y + r * v.y);
            (0..6).map(|k| t.rotate(k as f64 * PI / 3.0)).collect()
        } else {
            Vec::new()
        };

        Layout {
            isd,
            sites,
            cells,
            wrap_shifts,
        }
    }

    pub fn cell_radius(&self) -> f64 {
        self.isd / 3f64.sqrt()
    }

    /// Vector from `from` to the nearest wrapped image of `to`.
    pub fn wrapped_offset(&self, from: Point, to: Point) -> Point {
        let mut best = to - from;
        let mut best_d = best.norm();
        for shift in &self.wrap_shifts {
            let cand = to + *shift - from;
            let d = cand.norm();
            if d < best_d {
                best = cand;
                best_d = d;
            }
        }
        best
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        self.wrapped_offset(a, b).norm()
    }

    /// Largest distance any point can have from its nearest image of another point.
    pub fn torus_diameter(&self) -> Option<f64> {
        self.wrap_shifts.first().map(|t| t.norm() / 3f64.sqrt())
    }

    /// True when `p` lies in the hexagonal Voronoi region of the site at `site`.
    pub fn in_site_hexagon(&self, site: Point, p: Point) -> bool {
        let d = p - site;
        (0..6).all(|k| {
            let (s, c) = (k as f64 * PI / 3.0).sin_cos();
            d.x * c + d.y * s <= self.isd / 2.0 + 1e-9
        })
    }

    /// True when `p` belongs to the drop area of `cell`.
    pub fn in_cell_area(&self, cell: &Cell, p: Point) -> bool {
        if !self.in_site_hexagon(cell.position, p) {
            return false;
        }
        match cell.boresight_deg {
            None => true,
            Some(b) => angle_diff_deg((p - cell.position).angle_deg(), b) <= 60.0,
        }
    }
}

/// Drops `ues_per_cell_mean` UEs uniformly in each cell's area, keeping at
/// least `min_distance_m` from the site. Explicit positions in the deployment
/// bypass the random drop.
pub fn drop_ue_positions<R: Rng + ?Sized>(
    deployment: &DeploymentLayout,
    layout: &Layout,
    rng: &mut R,
) -> Vec<Point> {
    if !deployment.ue_positions.is_empty() {
        return deployment.ue_positions.clone();
    }
    let r = layout.cell_radius();
    let mut out = Vec::with_capacity(layout.cells.len() * deployment.ues_per_cell_mean);
    for cell in &layout.cells {
        let mut placed = 0;
        while placed < deployment.ues_per_cell_mean {
            let p = Point::new(
                cell.position.x + (rng.random::<f64>() * 2.0 - 1.0) * r,
                cell.position.y + (rng.random::<f64>() * 2.0 - 1.0) * r,
            );
            if p.dist(cell.position) < deployment.min_distance_m {
                continue;
            }
            if layout.in_cell_area(cell, p) {
                out.push(p);
                placed += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_layout() -> (DeploymentLayout, Layout) {
        let d = DeploymentLayout::default();
        let l = Layout::new(&d);
        (d, l)
    }

    #[test]
    fn default_layout_has_21_cells() {
        let (_, l) = default_layout();
        assert_eq!(l.sites.len(), 7);
        assert_eq!(l.cells.len(), 21);
    }

    #[test]
    fn nearest_neighbour_site_distance_is_isd() {
        for sites in [7, 19] {
            let d = DeploymentLayout {
                site_count: sites,
                ..Default::default()
            };
            let l = Layout::new(&d);
            assert_eq!(l.sites.len(), sites);
            let mut min = f64::INFINITY;
            for (i, a) in l.sites.iter().enumerate() {
                for b in &l.sites[i + 1..] {
                    min = min.min(a.dist(*b));
                    min = min.min(l.distance(*a, *b));
                }
            }
            assert!((min - 500.0).abs() < 1e-9, "{sites}: {min}");
        }
    }

    #[test]
    fn wrapped_distance_is_symmetric_and_bounded() {
        let (_, l) = default_layout();
        let diameter = l.torus_diameter().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let a = Point::new(
                rng.random_range(-900.0..900.0),
                rng.random_range(-900.0..900.0),
            );
            let b = Point::new(
                rng.random_range(-900.0..900.0),
                rng.random_range(-900.0..900.0),
            );
            let ab = l.distance(a, b);
            let ba = l.distance(b, a);
            assert!((ab - ba).abs() < 1e-9);
            if l.sites.iter().any(|s| l.in_site_hexagon(*s, a))
                && l.sites.iter().any(|s| l.in_site_hexagon(*s, b))
            {
                assert!(ab <= diameter + 1e-9, "{ab} > {diameter}");
            }
        }
    }

    #[test]
    fn every_site_sees_six_neighbours_at_isd_under_wraparound() {
        let (_, l) = default_layout();
        for a in &l.sites {
            let n = l
                .sites
                .iter()
                .filter(|b| (l.distance(*a, **b) - 500.0).abs() < 1e-6)
                .count();
            assert_eq!(n, 6);
        }
    }

    #[test]
    fn drop_respects_area_and_min_distance() {
        let (d, l) = default_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ues = drop_ue_positions(&d, &l, &mut rng);
        assert_eq!(ues.len(), 210);
        for (i, p) in ues.iter().enumerate() {
            let cell = &l.cells[i / d.ues_per_cell_mean];
            assert!(l.in_cell_area(cell, *p));
            assert!(p.dist(cell.position) >= d.min_distance_m);
        }
        let again = drop_ue_positions(&d, &l, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(ues, again);
    }

    #[test]
    fn explicit_positions_bypass_the_drop() {
        let d = DeploymentLayout {
            site_count: 1,
            cells_per_site: 1,
            ue_positions: vec![Point::new(50.0, 0.0), Point::new(120.0, 0.0)],
            ..Default::default()
        };
        let l = Layout::new(&d);
        let ues = drop_ue_positions(&d, &l, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(ues, d.ue_positions);
    }
}
