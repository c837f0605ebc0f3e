use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Default block edge for small feature maps.
pub const DEFAULT_BLOCK_SIZE: usize = 3;
pub const DEFAULT_KEEP_PROB: f64 = 0.9;

fn check(shape: &[usize], block_size: usize, keep_prob: f64) -> Result<[usize; 4]> {
    let [b, c, h, w] = match *shape {
        [b, c, h, w] => [b, c, h, w],
        _ => return Err(Error::Dimension(format!("dropblock expects B×C×H×W, got {shape:?}"))),
    };
    if block_size == 0 || block_size > h.min(w) {
        return Err(Error::Contract(format!(
            "block size {block_size} must be in 1..={}",
            h.min(w)
        )));
    }
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Contract(format!("keep_prob {keep_prob} outside (0, 1]")));
    }
    Ok([b, c, h, w])
}

/// Zero/scale mask for one `B×C×H×W` activation.
///
/// Block centres are drawn only where a full `block_size²` block fits, with
/// the seed rate chosen so the expected dropped fraction is close to
/// `1 - keep_prob`. Survivors are scaled by `total / kept`.
pub fn dropblock_mask<R: Rng + ?Sized>(
    shape: &[usize],
    block_size: usize,
    keep_prob: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let [b, c, h, w] = check(shape, block_size, keep_prob)?;
    let total = b * c * h * w;
    if keep_prob == 1.0 {
        return Ok(vec![1.0; total]);
    }
    let (vh, vw) = (h - block_size + 1, w - block_size + 1);
    let gamma = (1.0 - keep_prob) / (block_size * block_size) as f64 * (h * w) as f64
        / (vh * vw) as f64;
    let mut mask = vec![1.0; total];
    for plane in mask.chunks_exact_mut(h * w) {
        for sy in 0..vh {
            for sx in 0..vw {
                if rng.random::<f64>() < gamma {
                    for y in sy..sy + block_size {
                        plane[y * w + sx..y * w + sx + block_size].fill(0.0);
                    }
                }
            }
        }
    }
    let kept = mask.iter().filter(|&&m| m != 0.0).count();
    if kept > 0 {
        let scale = total as f64 / kept as f64;
        mask.iter_mut().for_each(|m| *m *= scale);
    }
    Ok(mask)
}

/// Structured dropout. Identity outside training.
pub fn dropblock<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    block_size: usize,
    keep_prob: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if !training || keep_prob == 1.0 {
        check(&shape, block_size, keep_prob)?;
        return Ok(x);
    }
    let mask = dropblock_mask(&shape, block_size, keep_prob, rng)?;
    let m = g.constant(shape, mask)?;
    g.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keep_all_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.leaf(vec![2, 2, 8, 8], (0..256).map(|i| i as f64).collect(), false).unwrap();
        let y = dropblock(&mut g, x, 3, 1.0, true, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let y = dropblock(&mut g, x, 3, 0.5, false, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn zeroed_fraction_tracks_drop_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keep = 0.9;
        let mut frac = 0.0;
        for _ in 0..100 {
            let m = dropblock_mask(&[1, 1, 8, 8], 3, keep, &mut rng).unwrap();
            frac += m.iter().filter(|&&v| v == 0.0).count() as f64 / 64.0;
        }
        frac /= 100.0;
        assert!((frac - (1.0 - keep)).abs() <= 0.15, "{frac}");
    }

    #[test]
    fn zeros_come_in_whole_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = dropblock_mask(&[1, 1, 8, 8], 3, 0.5, &mut rng).unwrap();
        // Every zero must belong to some fully-zero 3×3 block.
        for y in 0..8 {
            for x in 0..8 {
                if m[y * 8 + x] != 0.0 {
                    continue;
                }
                let covered = (y.saturating_sub(2)..=y.min(5)).any(|sy| {
                    (x.saturating_sub(2)..=x.min(5)).any(|sx| {
                        (sy..sy + 3).all(|yy| (sx..sx + 3).all(|xx| m[yy * 8 + xx] == 0.0))
                    })
                });
                assert!(covered, "isolated zero at ({y},{x})");
            }
        }
    }

    #[test]
    fn oversized_block_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropblock_mask(&[1, 1, 2, 2], 3, 0.9, &mut rng).is_err());
    }
}
