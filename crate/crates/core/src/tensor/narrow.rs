//! Gemm kernels for products whose output has only a few columns.
//!
//! Convolutions in the full-resolution layers produce `[pixels × cout]` with
//! `cout` between 1 and 16; a packed 16×16 micro-kernel spends most of each
//! tile on padding there.

use rayon::prelude::*;

use super::Element;

/// Accumulator width the row kernel vectorizes well.
const LANES: usize = 16;
/// Output rows handled per parallel task.
const ROW_BLOCK: usize = 256;
/// Output rows sharing each loaded row of `b`.
const GROUP: usize = 4;
/// Largest `m × n` accumulator kept for the transposed-`a` kernel.
const OUTER_MAX: usize = 1 << 14;

macro_rules! by_width {
    ($n:expr, $f:ident, $($arg:expr),*) => {
        match $n {
            1 => $f::<_, 1>($($arg),*),
            2 => $f::<_, 2>($($arg),*),
            4 => $f::<_, 4>($($arg),*),
            8 => $f::<_, 8>($($arg),*),
            16 => $f::<_, 16>($($arg),*),
            32 => $f::<_, 32>($($arg),*),
            _ => return false,
        }
    };
}

/// `c = a·b + beta * c` for the layouts these kernels cover: `b` row-major
/// with `n` in {1, 2, 4, 8, 16, 32}, and `a` either row-major or the
/// transpose of a row-major `[k × m]` block. Returns `false`, leaving `c`
/// untouched, for anything else.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (isize, isize),
    b: &[T],
    b_strides: (isize, isize),
    c: &mut [T],
    beta: T,
) -> bool {
    if b_strides != (n as isize, 1) {
        return false;
    }
    if a_strides == (k as isize, 1) {
        if matches!(n, 4 | 8) && m >= LANES / n {
            folded(m, k, n, a, b, c, beta);
        } else {
            by_width!(n, rows, m, k, a, b, c, beta);
        }
        true
    } else if a_strides == (1, m as isize) && m * n <= OUTER_MAX {
        by_width!(n, outer, m, k, a, b, c, beta);
        true
    } else {
        false
    }
}

/// Rows narrower than `LANES` are folded: `f = LANES / n` consecutive rows
/// of `a` and `c` are one row of `[m/f × f·k]·[f·k × LANES]` with a
/// block-diagonal right factor. The compiler does not vectorize the
/// 8-wide accumulator; the 16-wide one it does.
fn folded<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], beta: T) {
    let f = LANES / n;
    let mut wide = vec![T::zero(); f * k * LANES];
    for blk in 0..f {
        for p in 0..k {
            let dst = &mut wide[((blk * k + p) * LANES + blk * n)..][..n];
            dst.copy_from_slice(&b[p * n..][..n]);
        }
    }
    let mf = m / f;
    rows::<T, LANES>(mf, f * k, a, &wide, c, beta);
    let done = mf * f;
    if done < m {
        let (a, c) = (&a[done * k..m * k], &mut c[done * n..m * n]);
        match n {
            4 => rows::<T, 4>(m - done, k, a, b, c, beta),
            _ => rows::<T, 8>(m - done, k, a, b, c, beta),
        }
    }
}

fn store<T: Element, const N: usize>(dst: &mut [T], acc: &[[T; N]], beta: T) {
    for (d, v) in dst.chunks_exact_mut(N).zip(acc) {
        if beta == T::zero() {
            d.copy_from_slice(v);
        } else {
            for (x, &y) in d.iter_mut().zip(v) {
                *x = y + beta * *x;
            }
        }
    }
}

/// Row-major `a`: `GROUP` output rows at a time share each row of `b`.
fn rows<T: Element, const N: usize>(m: usize, k: usize, a: &[T], b: &[T], c: &mut [T], beta: T) {
    let b = &b[..k * N];
    c[..m * N]
        .par_chunks_mut(ROW_BLOCK * N)
        .zip(a[..m * k].par_chunks(ROW_BLOCK * k))
        .for_each(|(cb, ab)| {
            let mut cg = cb.chunks_exact_mut(GROUP * N);
            let mut ag = ab.chunks_exact(GROUP * k);
            for (cc, aa) in (&mut cg).zip(&mut ag) {
                let (r0, rest) = aa.split_at(k);
                let (r1, rest) = rest.split_at(k);
                let (r2, r3) = rest.split_at(k);
                let mut acc = [[T::zero(); N]; GROUP];
                for ((((&x0, &x1), &x2), &x3), brow) in r0.iter().zip(r1).zip(r2).zip(r3).zip(b.chunks_exact(N)) {
                    let brow: &[T; N] = brow.try_into().expect("chunk of N");
                    for j in 0..N {
                        acc[0][j] += x0 * brow[j];
                        acc[1][j] += x1 * brow[j];
                        acc[2][j] += x2 * brow[j];
                        acc[3][j] += x3 * brow[j];
                    }
                }
                store(cc, &acc, beta);
            }
            for (cc, aa) in cg.into_remainder().chunks_exact_mut(N).zip(ag.remainder().chunks_exact(k)) {
                let mut acc = [[T::zero(); N]; 1];
                for (&av, brow) in aa.iter().zip(b.chunks_exact(N)) {
                    for (x, &y) in acc[0].iter_mut().zip(brow) {
                        *x += av * y;
                    }
                }
                store(cc, &acc, beta);
            }
        });
}

/// `a = xᵀ` with `x` row-major `[k × m]`: accumulate `k` outer products
/// `x[p]ᵀ b[p]`, one contiguous column of the `m × N` result at a time.
fn outer<T: Element, const N: usize>(m: usize, k: usize, x: &[T], b: &[T], c: &mut [T], beta: T) {
    let mut cols = vec![T::zero(); N * m];
    for (xrow, brow) in x.chunks_exact(m).zip(b.chunks_exact(N)).take(k) {
        for (col, &y) in cols.chunks_exact_mut(m).zip(brow) {
            for (s, &xv) in col.iter_mut().zip(xrow) {
                *s += xv * y;
            }
        }
    }
    for (i, row) in c[..m * N].chunks_exact_mut(N).enumerate() {
        for (j, d) in row.iter_mut().enumerate() {
            let v = cols[j * m + i];
            *d = if beta == T::zero() { v } else { v + beta * *d };
        }
    }
}
