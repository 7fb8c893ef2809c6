//! Frame differencing: screen-change and stability waits, blinking-cursor
//! detection, and crop comparison for stale elements.

use thiserror::Error;

use crate::model::BBox;
use crate::sim::grid::{cell_rect, CellRect, PixelGrid};

/// Fraction of changed cells that counts as a screen change.
pub const CHANGE_THRESHOLD: f64 = 0.2;
/// Consecutive quiet frames that count as stable.
pub const K_STABLE: u32 = 3;
/// Per-frame change below which a frame counts as quiet.
pub const STABLE_THRESHOLD: f64 = 0.01;
pub const CURSOR_MIN_REPEATS: u32 = 2;
pub const CURSOR_TIMEOUT: u32 = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PixelError {
    #[error("grid dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

fn same_dims(a: &PixelGrid, b: &PixelGrid) -> Result<(), PixelError> {
    if a.width != b.width || a.height != b.height {
        return Err(PixelError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

pub fn change_fraction(a: &PixelGrid, b: &PixelGrid) -> Result<f64, PixelError> {
    same_dims(a, b)?;
    let diff = a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.cells.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaitMode {
    Changed,
    Stable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaitOutcome {
    Ok(u32),
    Timeout(u32),
}

impl WaitOutcome {
    pub fn frames(self) -> u32 {
        match self {
            WaitOutcome::Ok(n) | WaitOutcome::Timeout(n) => n,
        }
    }

    pub fn is_ok(self) -> bool {
        matches!(self, WaitOutcome::Ok(_))
    }
}

/// Pulls up to `timeout` frames after `reference`.
///
/// `Changed` succeeds at the first frame differing from `reference` by at
/// least `threshold`; `Stable` after [`K_STABLE`] consecutive frames that each
/// differ from their predecessor by less than `threshold`.
pub fn wait_screen_event<I>(
    reference: &PixelGrid,
    frames: I,
    mode: WaitMode,
    threshold: f64,
    timeout: u32,
) -> Result<WaitOutcome, PixelError>
where
    I: IntoIterator<Item = PixelGrid>,
{
    let mut prev = reference.clone();
    let mut quiet = 0;
    let mut used = 0;
    for frame in frames.into_iter().take(timeout as usize) {
        used += 1;
        match mode {
            WaitMode::Changed => {
                if change_fraction(reference, &frame)? >= threshold {
                    return Ok(WaitOutcome::Ok(used));
                }
            }
            WaitMode::Stable => {
                if change_fraction(&prev, &frame)? < threshold {
                    quiet += 1;
                    if quiet >= K_STABLE {
                        return Ok(WaitOutcome::Ok(used));
                    }
                } else {
                    quiet = 0;
                }
                prev = frame;
            }
        }
    }
    Ok(WaitOutcome::Timeout(used))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CursorCandidate {
    pub column: u32,
    /// Half-open row span.
    pub rows: (u32, u32),
    pub first_seen: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CursorScan {
    pub found: Option<CursorCandidate>,
    pub frames_used: u32,
}

/// Connected changed regions inside `region` that form a 1-cell-wide
/// vertical bar of at least two cells.
fn bar_candidates(a: &PixelGrid, b: &PixelGrid, region: CellRect) -> Vec<(u32, u32, u32)> {
    let w = region.width() as usize;
    let h = region.height() as usize;
    let changed = |x: usize, y: usize| {
        let (gx, gy) = (region.x0 + x as u32, region.y0 + y as u32);
        a.get(gx, gy) != b.get(gx, gy)
    };
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if seen[sy * w + sx] || !changed(sx, sy) {
                continue;
            }
            let (mut minx, mut maxx, mut miny, mut maxy, mut n) = (sx, sx, sy, sy, 0usize);
            let mut stack = vec![(sx, sy)];
            seen[sy * w + sx] = true;
            while let Some((x, y)) = stack.pop() {
                n += 1;
                minx = minx.min(x);
                maxx = maxx.max(x);
                miny = miny.min(y);
                maxy = maxy.max(y);
                let mut push = |nx: usize, ny: usize| {
                    if !seen[ny * w + nx] && changed(nx, ny) {
                        seen[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    push(x - 1, y);
                }
                if x + 1 < w {
                    push(x + 1, y);
                }
                if y > 0 {
                    push(x, y - 1);
                }
                if y + 1 < h {
                    push(x, y + 1);
                }
            }
            let height = maxy - miny + 1;
            if minx == maxx && height >= 2 && height <= h && n == height {
                out.push((
                    region.x0 + minx as u32,
                    region.y0 + miny as u32,
                    region.y0 + maxy as u32 + 1,
                ));
            }
        }
    }
    out
}

/// Diffs consecutive frames inside `region` and reports a vertical bar seen
/// at the same place at least `min_repeats` times. The first frame of the
/// stream is the baseline; at most `timeout` further frames are pulled.
pub fn detect_blinking_cursor<I>(frames: I, region: &BBox, min_repeats: u32, timeout: u32) -> CursorScan
where
    I: IntoIterator<Item = PixelGrid>,
{
    let mut it = frames.into_iter();
    let Some(mut prev) = it.next() else {
        return CursorScan { found: None, frames_used: 0 };
    };
    let cells = cell_rect(region, prev.width, prev.height);
    let mut counts: Vec<(CursorCandidate, u32)> = Vec::new();
    let mut used = 0;
    for frame in it.take(timeout as usize) {
        used += 1;
        if frame.width != prev.width || frame.height != prev.height {
            break;
        }
        for (column, y0, y1) in bar_candidates(&prev, &frame, cells) {
            match counts.iter_mut().find(|(c, _)| c.column == column && c.rows == (y0, y1)) {
                Some((c, n)) => {
                    *n += 1;
                    if *n >= min_repeats {
                        return CursorScan {
                            found: Some(*c),
                            frames_used: used,
                        };
                    }
                }
                None => {
                    let c = CursorCandidate {
                        column,
                        rows: (y0, y1),
                        first_seen: frame.tick,
                    };
                    if min_repeats <= 1 {
                        return CursorScan {
                            found: Some(c),
                            frames_used: used,
                        };
                    }
                    counts.push((c, 1));
                }
            }
        }
        prev = frame;
    }
    CursorScan {
        found: None,
        frames_used: used,
    }
}

/// True iff every cell of `region` is identical in both grids.
pub fn crop_equal(cached: &PixelGrid, latest: &PixelGrid, region: &BBox) -> Result<bool, PixelError> {
    same_dims(cached, latest)?;
    let r = cached.rect_of(region);
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            if cached.get(x, y) != latest.get(x, y) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Like [`crop_equal`], but a difference consisting of one blinking-cursor
/// bar and nothing else still counts as equal.
pub fn crop_matches(cached: &PixelGrid, latest: &PixelGrid, region: &BBox) -> Result<bool, PixelError> {
    if crop_equal(cached, latest, region)? {
        return Ok(true);
    }
    let r = cached.rect_of(region);
    let mut changed = 0u32;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            changed += (cached.get(x, y) != latest.get(x, y)) as u32;
        }
    }
    Ok(match bar_candidates(cached, latest, r).as_slice() {
        [(_, y0, y1)] => y1 - y0 == changed,
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(tick: u64) -> PixelGrid {
        PixelGrid::new(90, 160, 0x336699, tick)
    }

    #[test]
    fn cursor_bar_does_not_break_crop_match() {
        let region = BBox::new(0.1, 0.1, 0.9, 0.2).unwrap();
        let a = grid(0);
        let mut bar = a.clone();
        bar.fill_rect(CellRect { x0: 20, y0: 18, x1: 21, y1: 30 }, 0);
        assert!(!crop_equal(&a, &bar, &region).unwrap());
        assert!(crop_matches(&a, &bar, &region).unwrap());
        let mut wide = a.clone();
        wide.fill_rect(CellRect { x0: 20, y0: 18, x1: 22, y1: 30 }, 0);
        assert!(!crop_matches(&a, &wide, &region).unwrap());
        let mut extra = bar.clone();
        extra.fill_rect(CellRect { x0: 40, y0: 20, x1: 41, y1: 21 }, 0);
        assert!(!crop_matches(&a, &extra, &region).unwrap());
    }

    #[test]
    fn change_fraction_examples() {
        let a = grid(0);
        assert_eq!(change_fraction(&a, &a).unwrap(), 0.0);
        let mut inv = a.clone();
        for c in &mut inv.cells {
            *c ^= 0xFF_FFFF;
        }
        assert_eq!(change_fraction(&a, &inv).unwrap(), 1.0);
        let mut b = a.clone();
        b.fill_rect(CellRect { x0: 10, y0: 20, x1: 19, y1: 36 }, 0x123456);
        // 9 × 16 cells out of 90 × 160.
        assert_eq!(change_fraction(&a, &b).unwrap(), 144.0 / 14400.0);
        assert_eq!(change_fraction(&b, &a).unwrap(), change_fraction(&a, &b).unwrap());
        let small = PixelGrid::new(10, 10, 0, 0);
        assert!(change_fraction(&a, &small).is_err());
    }

    #[test]
    fn wait_examples() {
        let a = grid(0);
        let stream: Vec<_> = (1..=20).map(grid).collect();
        assert_eq!(
            wait_screen_event(&a, stream.clone(), WaitMode::Changed, 0.2, 10).unwrap(),
            WaitOutcome::Timeout(10)
        );
        assert_eq!(
            wait_screen_event(&a, stream.clone(), WaitMode::Stable, STABLE_THRESHOLD, 10).unwrap(),
            WaitOutcome::Ok(K_STABLE)
        );
        let mut swapped = stream.clone();
        for g in swapped.iter_mut().skip(1) {
            g.cells.fill(0xFFFFFF);
        }
        assert_eq!(
            wait_screen_event(&a, swapped, WaitMode::Changed, 0.2, 10).unwrap(),
            WaitOutcome::Ok(2)
        );
        let flicker: Vec<_> = (1..=20)
            .map(|t| {
                let mut g = grid(t);
                if t % 2 == 0 {
                    g.fill_rect(CellRect { x0: 0, y0: 0, x1: 30, y1: 30 }, 0);
                }
                g
            })
            .collect();
        assert_eq!(
            wait_screen_event(&a, flicker, WaitMode::Stable, STABLE_THRESHOLD, 10).unwrap(),
            WaitOutcome::Timeout(10)
        );
    }

    fn blink_stream(bar: CellRect, n: u64) -> Vec<PixelGrid> {
        (0..n)
            .map(|t| {
                let mut g = grid(t);
                if t % 2 == 0 {
                    g.fill_rect(bar, 0);
                }
                g
            })
            .collect()
    }

    #[test]
    fn cursor_found_in_blink() {
        let field = BBox::new(0.1, 0.1, 0.9, 0.15).unwrap();
        let bar = CellRect { x0: 12, y0: 17, x1: 13, y1: 23 };
        let scan = detect_blinking_cursor(blink_stream(bar, 20), &field, 2, 12);
        let c = scan.found.unwrap();
        assert_eq!((c.column, c.rows), (12, (17, 23)));
        assert!(scan.frames_used <= 4);
    }

    #[test]
    fn cursor_rejections() {
        let field = BBox::new(0.1, 0.1, 0.9, 0.15).unwrap();
        let wide = CellRect { x0: 12, y0: 17, x1: 15, y1: 23 };
        assert_eq!(detect_blinking_cursor(blink_stream(wide, 20), &field, 2, 12).found, None);
        let stat: Vec<_> = (0..20).map(grid).collect();
        assert_eq!(detect_blinking_cursor(stat, &field, 2, 12).found, None);
        // A bar that appears and stays is seen once; a single flash twice.
        let bar = CellRect { x0: 12, y0: 17, x1: 13, y1: 23 };
        let mut stays: Vec<_> = (0..20).map(grid).collect();
        for g in stays.iter_mut().skip(3) {
            g.fill_rect(bar, 0);
        }
        assert_eq!(detect_blinking_cursor(stays, &field, 2, 12).found, None);
        let mut once: Vec<_> = (0..20).map(grid).collect();
        once[3].fill_rect(bar, 0);
        assert_eq!(detect_blinking_cursor(once, &field, 3, 12).found, None);
        // A bar outside the region is ignored.
        let outside = CellRect { x0: 12, y0: 60, x1: 13, y1: 66 };
        assert_eq!(detect_blinking_cursor(blink_stream(outside, 20), &field, 2, 12).found, None);
    }

    #[test]
    fn crop_examples() {
        let a = grid(0);
        let region = BBox::new(0.1, 0.1, 0.3, 0.2).unwrap();
        assert!(crop_equal(&a, &a, &region).unwrap());
        let mut inside = a.clone();
        inside.set(10, 17, 1);
        assert!(!crop_equal(&a, &inside, &region).unwrap());
        let mut outside = a.clone();
        outside.fill_rect(CellRect { x0: 40, y0: 80, x1: 90, y1: 160 }, 1);
        assert!(crop_equal(&a, &outside, &region).unwrap());
    }
}
