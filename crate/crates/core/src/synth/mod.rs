//! Synthetic sketches: edge-map stroke tracing and parametric toy datasets.

mod toy;

pub use toy::{densify, make_toy_dataset, make_toy_dataset_with, Jitter, ToyKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch, Stroke};

/// Binary edge raster with a class label on every on-pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `Some(label)` marks an on-pixel.
    pub labels: Vec<Option<usize>>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![None; width * height] }
    }

    pub fn set(&mut self, x: usize, y: usize, label: usize) {
        self.labels[y * self.width + x] = Some(label);
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        self.labels[y * self.width + x]
    }

    pub fn on_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Text grid: a `W H` line, then `H` rows of `W` characters, `.` for off
    /// and a digit for an on-pixel with that label.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("edge map: empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("edge map: bad header '{header}'"))))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(Error::Parse(format!("edge map: header must be 'W H', got '{header}'")));
        };
        let mut map = Self::new(width, height);
        for y in 0..height {
            let row = lines.next().ok_or_else(|| Error::Parse(format!("edge map: missing row {y}")))?.trim_end();
            if row.chars().count() != width {
                return Err(Error::Parse(format!("edge map: row {y} has {} cells, expected {width}", row.chars().count())));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '.' => {}
                    d if d.is_ascii_digit() => map.set(x, y, d as usize - '0' as usize),
                    other => return Err(Error::Parse(format!("edge map: bad cell '{other}' at {x},{y}"))),
                }
            }
        }
        if lines.next().is_some() {
            return Err(Error::Parse("edge map: extra rows".into()));
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(match self.get(x, y) {
                    Some(l) if l < 10 => char::from(b'0' + l as u8),
                    Some(_) => '9',
                    None => '.',
                });
            }
            out.push('\n');
        }
        out
    }

    fn neighbors(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy))).filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            ((dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height)
                .then_some((nx as usize, ny as usize))
        })
    }
}

/// Clockwise angle from `d` to `v` in `[0, 2π)`, with y pointing down.
fn clockwise_angle(d: (f64, f64), v: (f64, f64)) -> f64 {
    let a = (d.0 * v.1 - d.1 * v.0).atan2(d.0 * v.0 + d.1 * v.1);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

struct Tracer<'a> {
    map: &'a EdgeMap,
    done: Vec<bool>,
}

impl Tracer<'_> {
    /// Greedy walk from `start` (already processed) with initial direction `dir`.
    fn walk(&mut self, start: (usize, usize), mut dir: (f64, f64)) -> Vec<(usize, usize)> {
        let w = self.map.width;
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            let mut best: Option<((usize, usize), f64, f64)> = None;
            for (nx, ny) in self.map.neighbors(cur.0, cur.1) {
                if self.done[ny * w + nx] || self.map.get(nx, ny).is_none() {
                    continue;
                }
                let v = (nx as f64 - cur.0 as f64, ny as f64 - cur.1 as f64);
                let cos = (v.0 * dir.0 + v.1 * dir.1) / (v.0.hypot(v.1) * dir.0.hypot(dir.1));
                let cw = clockwise_angle(dir, v);
                let better = match best {
                    None => true,
                    Some(((bx, by), bcos, bcw)) => {
                        cos > bcos || (cos == bcos && (cw < bcw || (cw == bcw && ny * w + nx < by * w + bx)))
                    }
                };
                if better {
                    best = Some(((nx, ny), cos, cw));
                }
            }
            let Some((next, _, _)) = best else { return path };
            self.done[next.1 * w + next.0] = true;
            dir = (next.0 as f64 - cur.0 as f64, next.1 as f64 - cur.1 as f64);
            path.push(next);
            cur = next;
        }
    }
}

/// Trace an edge map into strokes.
///
/// Each stroke starts at a seeded-random unprocessed pixel and grows
/// greedily to the unprocessed 8-neighbor with the smallest angle to the
/// running direction (initially horizontal), first forward and then
/// backward from the seed. Single-pixel strokes join an adjacent stroke
/// endpoint, stay on their own if they touch other pixels, and are dropped
/// if isolated.
pub fn trace_strokes(map: &EdgeMap, seed: u64) -> Result<Sketch> {
    if map.on_count() == 0 {
        return Err(Error::DegenerateInput("edge map has no on-pixels".into()));
    }
    let w = map.width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..map.labels.len()).filter(|&i| map.labels[i].is_some()).collect();
    let mut tracer = Tracer { map, done: vec![false; map.labels.len()] };
    let mut strokes: Vec<Vec<(usize, usize)>> = Vec::new();

    loop {
        remaining.retain(|&i| !tracer.done[i]);
        if remaining.is_empty() {
            break;
        }
        let i = remaining[rng.random_range(0..remaining.len())];
        tracer.done[i] = true;
        let start = (i % w, i / w);

        let forward = tracer.walk(start, (1.0, 0.0));
        let back_dir = match forward.first() {
            Some(&(x, y)) => (start.0 as f64 - x as f64, start.1 as f64 - y as f64),
            None => (-1.0, 0.0),
        };
        let backward = tracer.walk(start, back_dir);
        let mut path: Vec<(usize, usize)> = backward.into_iter().rev().collect();
        path.push(start);
        path.extend(forward);

        if path.len() >= 2 {
            strokes.push(path);
            continue;
        }
        let adjacent = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1;
        let dist2 = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0).pow(2) + a.1.abs_diff(b.1).pow(2);
        let mut target: Option<(usize, bool, usize)> = None;
        for (s, st) in strokes.iter().enumerate() {
            for (at_end, p) in [(false, st[0]), (true, st[st.len() - 1])] {
                if adjacent(p, start) && target.is_none_or(|(_, _, d)| dist2(p, start) < d) {
                    target = Some((s, at_end, dist2(p, start)));
                }
            }
        }
        match target {
            Some((s, true, _)) => strokes[s].push(start),
            Some((s, false, _)) => strokes[s].insert(0, start),
            None if map.neighbors(start.0, start.1).any(|(x, y)| map.get(x, y).is_some()) => strokes.push(path),
            None => {}
        }
    }

    if strokes.is_empty() {
        return Err(Error::DegenerateInput("edge map has only isolated pixels".into()));
    }
    let strokes = strokes
        .into_iter()
        .map(|path| {
            let labels = path.iter().map(|&(x, y)| map.get(x, y).expect("on-pixel")).collect();
            Stroke::labeled(path.into_iter().map(|(x, y)| Point::new(x as f64, y as f64)).collect(), labels)
        })
        .collect();
    Ok(Sketch::new("", strokes))
}

#[cfg(test)]
mod tests;
