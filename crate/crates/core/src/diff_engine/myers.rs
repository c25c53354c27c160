//! Linear-space Myers diff over arbitrary comparable slices.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Equal(usize),
    Delete(usize),
    Insert(usize),
}

/// Returns a shortest edit path from `old` to `new` as run-length ops.
///
/// Adjacent runs of the same kind are coalesced; within a change region all
/// deletions come before insertions.
pub(crate) fn diff<T: Eq>(old: &[T], new: &[T]) -> Vec<Op> {
    let mut raw = Vec::new();
    let max_d = (old.len() + new.len()).div_ceil(2) + 1;
    let mut vf = vec![0isize; 2 * max_d + 3];
    let mut vb = vec![0isize; 2 * max_d + 3];
    conquer(old, new, &mut vf, &mut vb, &mut raw);
    normalize(raw)
}

fn common_prefix<T: Eq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn common_suffix<T: Eq>(a: &[T], b: &[T]) -> usize {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count()
}

fn conquer<T: Eq>(old: &[T], new: &[T], vf: &mut [isize], vb: &mut [isize], out: &mut Vec<Op>) {
    let prefix = common_prefix(old, new);
    if prefix > 0 {
        out.push(Op::Equal(prefix));
    }
    let (old, new) = (&old[prefix..], &new[prefix..]);
    let suffix = common_suffix(old, new);
    let (old, new) = (&old[..old.len() - suffix], &new[..new.len() - suffix]);

    if old.is_empty() && !new.is_empty() {
        out.push(Op::Insert(new.len()));
    } else if new.is_empty() && !old.is_empty() {
        out.push(Op::Delete(old.len()));
    } else if !old.is_empty() {
        let snake = middle_snake(old, new, vf, vb);
        conquer(&old[..snake.x0], &new[..snake.y0], vf, vb, out);
        if snake.x1 > snake.x0 {
            out.push(Op::Equal(snake.x1 - snake.x0));
        }
        conquer(&old[snake.x1..], &new[snake.y1..], vf, vb, out);
    }

    if suffix > 0 {
        out.push(Op::Equal(suffix));
    }
}

#[derive(Debug)]
struct Snake {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

// Both inputs are non-empty and share neither a first nor a last element.
fn middle_snake<T: Eq>(old: &[T], new: &[T], vf: &mut [isize], vb: &mut [isize]) -> Snake {
    let n = old.len() as isize;
    let m = new.len() as isize;
    let delta = n - m;
    let odd = delta & 1 == 1;
    let d_max = (n + m + 1) / 2;
    let off = d_max + 1;
    let at = |k: isize| (k + off) as usize;

    vf[at(1)] = 0;
    vb[at(1)] = 0;

    for d in 0..=d_max {
        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && vf[at(k - 1)] < vf[at(k + 1)]) {
                vf[at(k + 1)]
            } else {
                vf[at(k - 1)] + 1
            };
            let mut y = x - k;
            let (x0, y0) = (x, y);
            while x < n && y < m && x >= 0 && y >= 0 && old[x as usize] == new[y as usize] {
                x += 1;
                y += 1;
            }
            vf[at(k)] = x;
            if odd && (k - delta).abs() < d && vf[at(k)] + vb[at(delta - k)] >= n {
                return Snake {
                    x0: x0 as usize,
                    y0: y0 as usize,
                    x1: x as usize,
                    y1: y as usize,
                };
            }
            k += 2;
        }

        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && vb[at(k - 1)] < vb[at(k + 1)]) {
                vb[at(k + 1)]
            } else {
                vb[at(k - 1)] + 1
            };
            let mut y = x - k;
            let (x0, y0) = (x, y);
            while x < n
                && y < m
                && x >= 0
                && y >= 0
                && old[(n - 1 - x) as usize] == new[(m - 1 - y) as usize]
            {
                x += 1;
                y += 1;
            }
            vb[at(k)] = x;
            if !odd && (k - delta).abs() <= d && vb[at(k)] + vf[at(delta - k)] >= n {
                return Snake {
                    x0: (n - x) as usize,
                    y0: (m - y) as usize,
                    x1: (n - x0) as usize,
                    y1: (m - y0) as usize,
                };
            }
            k += 2;
        }
    }

    unreachable!("middle snake not found for inputs of length {n} and {m}")
}

fn normalize(raw: Vec<Op>) -> Vec<Op> {
    // Collapse runs and order each change region as deletes-then-inserts.
    let mut out: Vec<Op> = Vec::with_capacity(raw.len());
    let mut pending_del = 0;
    let mut pending_ins = 0;
    let flush = |out: &mut Vec<Op>, del: &mut usize, ins: &mut usize| {
        if *del > 0 {
            out.push(Op::Delete(*del));
        }
        if *ins > 0 {
            out.push(Op::Insert(*ins));
        }
        *del = 0;
        *ins = 0;
    };
    for op in raw {
        match op {
            Op::Equal(0) | Op::Delete(0) | Op::Insert(0) => {}
            Op::Delete(n) => pending_del += n,
            Op::Insert(n) => pending_ins += n,
            Op::Equal(n) => {
                flush(&mut out, &mut pending_del, &mut pending_ins);
                match out.last_mut() {
                    Some(Op::Equal(prev)) => *prev += n,
                    _ => out.push(Op::Equal(n)),
                }
            }
        }
    }
    flush(&mut out, &mut pending_del, &mut pending_ins);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost(ops: &[Op]) -> usize {
        ops.iter()
            .map(|op| match op {
                Op::Equal(_) => 0,
                Op::Delete(n) | Op::Insert(n) => *n,
            })
            .sum()
    }

    fn lcs(a: &[u8], b: &[u8]) -> usize {
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                dp[i][j] = if a[i - 1] == b[j - 1] {
                    dp[i - 1][j - 1] + 1
                } else {
                    dp[i - 1][j].max(dp[i][j - 1])
                };
            }
        }
        dp[a.len()][b.len()]
    }

    #[test]
    fn classic_example() {
        // ABCABBA -> CBABAC has edit distance 5.
        let ops = diff(b"ABCABBA", b"CBABAC");
        assert_eq!(cost(&ops), 5);
    }

    #[test]
    fn exhaustive_small_binary_strings_are_minimal() {
        let words: Vec<Vec<u8>> = (0..5u32)
            .flat_map(|len| {
                (0..(1u32 << len)).map(move |bits| {
                    (0..len)
                        .map(|i| if bits >> i & 1 == 1 { b'a' } else { b'b' })
                        .collect()
                })
            })
            .collect();
        for a in &words {
            for b in &words {
                let ops = diff(a, b);
                assert_eq!(cost(&ops), a.len() + b.len() - 2 * lcs(a, b), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn ops_are_coalesced() {
        let ops = diff(b"abc", b"xyz");
        assert_eq!(ops, vec![Op::Delete(3), Op::Insert(3)]);
        assert_eq!(diff::<u8>(b"", b""), vec![]);
        assert_eq!(diff(b"ab", b"ab"), vec![Op::Equal(2)]);
    }
}
