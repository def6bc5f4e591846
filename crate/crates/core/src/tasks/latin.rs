//! Latin-square puzzles: fill an n×n grid with 1..n so that no row or column
//! repeats a value. There are no boxes.

use serde::{Deserialize, Serialize};

use super::Verdict;

/// A pre-filled cell, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Given {
    pub row: usize,
    pub col: usize,
    pub value: u8,
}

pub type Grid = Vec<Vec<u8>>;

pub fn empty_grid(n: usize, givens: &[Given]) -> Grid {
    let mut g = vec![vec![0u8; n]; n];
    for c in givens {
        if c.row < n && c.col < n {
            g[c.row][c.col] = c.value;
        }
    }
    g
}

pub fn verify_latin(n: usize, grid: &[Vec<u8>], givens: &[Given]) -> Verdict {
    if n == 0 {
        return Verdict::reject("grid size must be positive");
    }
    if grid.len() != n || grid.iter().any(|r| r.len() != n) {
        return Verdict::reject(format!("grid is not {n}x{n}"));
    }
    for (r, row) in grid.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v == 0 || v as usize > n {
                return Verdict::reject(format!("cell ({r},{c}) holds {v}, outside 1..={n}"));
            }
        }
    }
    for g in givens {
        if g.row >= n || g.col >= n || grid[g.row][g.col] != g.value {
            return Verdict::reject(format!("given at ({},{}) is not respected", g.row, g.col));
        }
    }
    for i in 0..n {
        let mut row_seen = vec![false; n + 1];
        let mut col_seen = vec![false; n + 1];
        for j in 0..n {
            let rv = grid[i][j] as usize;
            if std::mem::replace(&mut row_seen[rv], true) {
                return Verdict::reject(format!("row {i} repeats {rv}"));
            }
            let cv = grid[j][i] as usize;
            if std::mem::replace(&mut col_seen[cv], true) {
                return Verdict::reject(format!("column {i} repeats {cv}"));
            }
        }
    }
    Verdict::accept()
}

pub fn is_complete(grid: &[Vec<u8>]) -> bool {
    grid.iter().all(|r| r.iter().all(|&v| v != 0))
}

/// First row containing an empty cell.
pub fn next_row(grid: &[Vec<u8>]) -> Option<usize> {
    grid.iter().position(|r| r.contains(&0))
}

fn permutations(n: usize) -> Vec<Vec<u8>> {
    fn rec(cur: &mut Vec<u8>, used: &mut [bool], n: usize, out: &mut Vec<Vec<u8>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in 1..=n {
            if !used[v] {
                used[v] = true;
                cur.push(v as u8);
                rec(cur, used, n, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n + 1], n, &mut out);
    out
}

/// Rows that can legally fill row `r`: respect its filled cells and do not
/// clash with any other filled cell in the same column.
pub fn row_candidates(grid: &[Vec<u8>], r: usize) -> Vec<Vec<u8>> {
    let n = grid.len();
    permutations(n)
        .into_iter()
        .filter(|perm| {
            (0..n).all(|c| {
                let fixed = grid[r][c];
                if fixed != 0 && fixed != perm[c] {
                    return false;
                }
                (0..n).all(|rr| rr == r || grid[rr][c] != perm[c])
            })
        })
        .collect()
}

/// Backtracking completion; `None` if the partial grid cannot be finished.
pub fn complete(grid: &[Vec<u8>]) -> Option<Grid> {
    let Some(r) = next_row(grid) else {
        return Some(grid.to_vec());
    };
    for cand in row_candidates(grid, r) {
        let mut next = grid.to_vec();
        next[r] = cand;
        if let Some(done) = complete(&next) {
            return Some(done);
        }
    }
    None
}

pub fn solvable(grid: &[Vec<u8>]) -> bool {
    complete(grid).is_some()
}

pub fn format_grid(grid: &[Vec<u8>]) -> String {
    serde_json::to_string(grid).expect("grid serializes")
}

pub fn parse_grid(s: &str) -> Option<Grid> {
    serde_json::from_str(s.trim()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_square_accepts() {
        let g = vec![vec![1, 2, 3], vec![2, 3, 1], vec![3, 1, 2]];
        assert!(verify_latin(3, &g, &[]).accepted);
    }

    #[test]
    fn row_repeat_rejects() {
        let g = vec![vec![1, 1, 3], vec![2, 3, 1], vec![3, 1, 2]];
        assert!(!verify_latin(3, &g, &[]).accepted);
    }

    #[test]
    fn out_of_range_and_givens() {
        let g = vec![vec![1, 2, 4], vec![2, 3, 1], vec![3, 1, 2]];
        assert!(!verify_latin(3, &g, &[]).accepted);
        let g = vec![vec![1, 2, 3], vec![2, 3, 1], vec![3, 1, 2]];
        let given = Given { row: 0, col: 0, value: 2 };
        assert!(!verify_latin(3, &g, &[given]).accepted);
    }

    #[test]
    fn completion_respects_givens() {
        let givens = [Given { row: 1, col: 1, value: 1 }, Given { row: 2, col: 0, value: 2 }];
        let grid = empty_grid(3, &givens);
        let done = complete(&grid).unwrap();
        assert!(verify_latin(3, &done, &givens).accepted);
    }

    #[test]
    fn blocked_grid_is_unsolvable() {
        // row 0 = [1,2,3], row 1 = [2,1,3] clashes in column 2
        let grid = vec![vec![1, 2, 3], vec![2, 1, 0], vec![0, 0, 0]];
        assert!(!solvable(&grid));
    }
}
