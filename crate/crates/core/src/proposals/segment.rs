//! Graph-based segmentation (Felzenszwalb–Huttenlocher).
//!
//! Pixels are nodes of an 8-connected grid graph weighted by absolute
//! intensity difference on the 0–255 scale, which is the scale the usual `k`
//! values refer to. Edges are visited in nondecreasing weight order; two
//! components merge when the edge weight does not exceed either component's
//! internal difference plus `k / size`.

use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur, GrayImage};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    /// Row-major component id per pixel, in `0..num_components`.
    pub labels: Vec<usize>,
    pub num_components: usize,
}

impl Segmentation {
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: u32, b: u32, weight: f32) {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.internal[big as usize] = weight;
    }
}

/// Edges of the 8-connected grid, sorted by (weight, first pixel, second pixel).
fn sorted_edges(img: &GrayImage) -> Vec<(f32, u32, u32)> {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut edges = Vec::with_capacity(w * h * 4);
    let weight = |a: usize, b: usize| ((d[a] - d[b]).abs() * 255.0) as f32;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edges.push((weight(p, p + 1), p as u32, (p + 1) as u32));
            }
            if y + 1 < h {
                let q = p + w;
                edges.push((weight(p, q), p as u32, q as u32));
                if x + 1 < w {
                    edges.push((weight(p, q + 1), p as u32, (q + 1) as u32));
                }
                if x > 0 {
                    edges.push((weight(p, q - 1), p as u32, (q - 1) as u32));
                }
            }
        }
    }
    // non-negative floats order like their bit patterns
    edges.sort_unstable_by_key(|&(wt, a, b)| (wt.to_bits(), a, b));
    edges
}

pub fn felzenszwalb_segment(
    img: &GrayImage,
    k: f64,
    sigma: f64,
    min_size: usize,
) -> Result<Segmentation> {
    if img.is_empty() {
        return Err(Error::Empty("image"));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("k must be > 0, got {k}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if min_size < 1 {
        return Err(Error::InvalidParameter("min_size must be >= 1".into()));
    }
    let smooth = if sigma > 0.0 {
        gaussian_blur(img, sigma)?
    } else {
        img.clone()
    };
    let n = img.len();
    let edges = sorted_edges(&smooth);
    let mut ds = DisjointSet::new(n);
    let mut threshold = vec![k as f32; n];
    for &(wt, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra != rb && wt <= threshold[ra as usize] && wt <= threshold[rb as usize] {
            ds.join(ra, rb, wt);
            let r = ds.find(ra);
            threshold[r as usize] = wt + (k / f64::from(ds.size[r as usize])) as f32;
        }
    }
    for &(wt, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra != rb
            && ((ds.size[ra as usize] as usize) < min_size
                || (ds.size[rb as usize] as usize) < min_size)
        {
            ds.join(ra, rb, wt);
        }
    }

    let mut ids = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0;
    for p in 0..n {
        let r = ds.find(p as u32) as usize;
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        labels.push(ids[r]);
    }
    Ok(Segmentation {
        width: img.width(),
        height: img.height(),
        labels,
        num_components: next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_one_component() {
        let seg = felzenszwalb_segment(&GrayImage::filled(30, 20, 0.4), 100.0, 0.8, 50).unwrap();
        assert_eq!(seg.num_components, 1);
    }

    #[test]
    fn two_halves() {
        let img = GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0.2 } else { 0.8 });
        let seg = felzenszwalb_segment(&img, 1.0, 0.0, 1).unwrap();
        assert_eq!(seg.num_components, 2);
        assert!(seg
            .labels
            .iter()
            .enumerate()
            .all(|(p, l)| *l == usize::from(p % 64 >= 32)));
    }

    #[test]
    fn min_size_absorbs_specks() {
        let img = GrayImage::from_fn(20, 20, |x, y| if (x, y) == (5, 5) { 0.0 } else { 0.9 });
        let seg = felzenszwalb_segment(&img, 1.0, 0.0, 1).unwrap();
        assert_eq!(seg.num_components, 2);
        let seg = felzenszwalb_segment(&img, 1.0, 0.0, 2).unwrap();
        assert_eq!(seg.num_components, 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = GrayImage::filled(4, 4, 0.5);
        assert!(felzenszwalb_segment(&img, 0.0, 0.8, 1).is_err());
        assert!(felzenszwalb_segment(&img, 1.0, -0.1, 1).is_err());
        assert!(felzenszwalb_segment(&img, 1.0, 0.8, 0).is_err());
        assert!(felzenszwalb_segment(&GrayImage::filled(0, 0, 0.0), 1.0, 0.8, 1).is_err());
    }
}
