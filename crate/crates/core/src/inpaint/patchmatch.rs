//! Nearest-neighbour field search over disc signatures.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::disc::{disc_distance, disc_distance_bounded, DiscParams, Signature};
use crate::error::{Error, Result};

/// Discs with their adjacency (indices into the same set).
#[derive(Clone, Debug, Default)]
pub struct DiscSet {
    pub signatures: Vec<Signature>,
    pub adjacency: Vec<Vec<usize>>,
}

impl DiscSet {
    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

/// Best source found so far for one target disc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnfEntry {
    pub source: usize,
    /// Matching rotation in angular steps.
    pub shift: usize,
    pub d: f64,
}

impl NnfEntry {
    /// Matching angle in radians.
    pub fn angle(&self, p: &DiscParams) -> f64 {
        std::f64::consts::TAU * self.shift as f64 / p.n as f64
    }
}

/// Random source per target with an infinite distance.
pub fn init_nnf(targets: usize, sources: usize, rng: &mut ChaCha8Rng) -> Result<Vec<NnfEntry>> {
    if sources == 0 {
        return Err(Error::EmptySource);
    }
    Ok((0..targets)
        .map(|_| NnfEntry {
            source: rng.gen_range(0..sources),
            shift: 0,
            d: f64::INFINITY,
        })
        .collect())
}

pub fn total_energy(nnf: &[NnfEntry]) -> f64 {
    nnf.iter().map(|e| e.d).sum()
}

/// Recomputes every distance (and best shift) after the signatures
/// changed.
pub fn refresh(targets: &DiscSet, sources: &DiscSet, nnf: &mut [NnfEntry], p: &DiscParams) {
    for (t, e) in nnf.iter_mut().enumerate() {
        let (d, shift) = disc_distance(&sources.signatures[e.source], &targets.signatures[t], p);
        e.d = d;
        e.shift = shift;
    }
}

/// One propagation and random-search pass in breadth-first order from a
/// random target. Candidates are the current match, the matches of
/// already visited neighbours and their source neighbours, and one random
/// source. Entries only change on strict improvement, so the total energy
/// never increases. Returns the new total.
pub fn search_pass(
    targets: &DiscSet,
    sources: &DiscSet,
    nnf: &mut [NnfEntry],
    p: &DiscParams,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::EmptySource);
    }
    let n = targets.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut visited = vec![false; n];
    let mut queued = vec![false; n];
    let mut candidates = Vec::new();
    let start = rng.gen_range(0..n);
    let mut next_seed = 0;
    let mut queue = VecDeque::from([start]);
    queued[start] = true;
    loop {
        let Some(t) = queue.pop_front() else {
            while next_seed < n && queued[next_seed] {
                next_seed += 1;
            }
            if next_seed == n {
                break;
            }
            queued[next_seed] = true;
            queue.push_back(next_seed);
            continue;
        };
        candidates.clear();
        for &q in &targets.adjacency[t] {
            if visited[q] {
                let s = nnf[q].source;
                candidates.push(s);
                candidates.extend_from_slice(&sources.adjacency[s]);
            }
            if !queued[q] {
                queued[q] = true;
                queue.push_back(q);
            }
        }
        candidates.push(rng.gen_range(0..sources.len()));
        candidates.sort_unstable();
        candidates.dedup();
        let sig = &targets.signatures[t];
        let mut best = nnf[t];
        if !best.d.is_finite() {
            let (d, shift) = disc_distance(&sources.signatures[best.source], sig, p);
            best.d = d;
            best.shift = shift;
        }
        for &s in &candidates {
            if s == best.source {
                continue;
            }
            let (d, shift) = disc_distance_bounded(&sources.signatures[s], sig, p, best.d);
            if d < best.d {
                best = NnfEntry { source: s, shift, d };
            }
        }
        nnf[t] = best;
        visited[t] = true;
    }
    Ok(total_energy(nnf))
}

/// Exhaustive nearest source of every target.
pub fn brute_force(targets: &DiscSet, sources: &DiscSet, p: &DiscParams) -> Vec<NnfEntry> {
    targets
        .signatures
        .iter()
        .map(|t| {
            let mut best = NnfEntry {
                source: 0,
                shift: 0,
                d: f64::INFINITY,
            };
            for (s, sig) in sources.signatures.iter().enumerate() {
                let (d, shift) = disc_distance(sig, t, p);
                if d < best.d {
                    best = NnfEntry { source: s, shift, d };
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Discs on a line with a smoothly varying signature; targets and
    /// sources interleave so that neighbours have neighbouring matches.
    fn line_instance(count: usize, p: &DiscParams) -> (DiscSet, DiscSet) {
        let sig = |x: f64| {
            let mut s = Signature::constant(p, [0.0; 5]);
            for j in 0..p.n {
                for k in 0..p.m {
                    let a = std::f64::consts::TAU * j as f64 / p.n as f64;
                    let v = &mut s.values[j * p.m + k];
                    v[0] = (50.0 + 30.0 * (x * 0.7 + a).sin() + k as f64 * x.cos()) as f32;
                    v[1] = (10.0 * (x * 0.3).cos()) as f32;
                }
            }
            s
        };
        let chain = |xs: Vec<f64>| DiscSet {
            adjacency: (0..xs.len())
                .map(|i| {
                    let mut a = Vec::new();
                    if i > 0 {
                        a.push(i - 1);
                    }
                    if i + 1 < xs.len() {
                        a.push(i + 1);
                    }
                    a
                })
                .collect(),
            signatures: xs.into_iter().map(sig).collect(),
        };
        let targets = chain((0..count).map(|i| i as f64 * 0.37 + 0.11).collect());
        let sources = chain((0..count).map(|i| i as f64 * 0.37).collect());
        (targets, sources)
    }

    #[test]
    fn passes_never_increase_energy() {
        let p = DiscParams::default();
        let (t, s) = line_instance(40, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nnf = init_nnf(t.len(), s.len(), &mut rng).unwrap();
        refresh(&t, &s, &mut nnf, &p);
        let mut prev = total_energy(&nnf);
        for _ in 0..6 {
            let before = nnf.clone();
            let e = search_pass(&t, &s, &mut nnf, &p, &mut rng).unwrap();
            assert!(e <= prev);
            for (a, b) in before.iter().zip(&nnf) {
                assert!(b.d <= a.d);
            }
            prev = e;
        }
    }

    #[test]
    fn fifty_disc_instance_agrees_with_exhaustive_search() {
        let p = DiscParams::default();
        let (t, s) = line_instance(25, &p);
        let truth = brute_force(&t, &s, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nnf = init_nnf(t.len(), s.len(), &mut rng).unwrap();
        for _ in 0..8 {
            search_pass(&t, &s, &mut nnf, &p, &mut rng).unwrap();
        }
        let agree = nnf.iter().zip(&truth).filter(|(a, b)| a.source == b.source).count();
        assert!(agree as f64 >= 0.8 * t.len() as f64, "{agree}/{}", t.len());
    }

    #[test]
    fn neighbour_match_propagates_in_one_pass() {
        let p = DiscParams::default();
        let (mut t, s) = line_instance(3, &p);
        t.signatures[1] = s.signatures[2].clone();
        t.adjacency = vec![vec![1], vec![0], vec![]];
        let mut nnf = vec![
            NnfEntry {
                source: 2,
                shift: 0,
                d: f64::INFINITY,
            },
            NnfEntry {
                source: 0,
                shift: 0,
                d: f64::INFINITY,
            },
            NnfEntry {
                source: 0,
                shift: 0,
                d: f64::INFINITY,
            },
        ];
        // start at target 0 so that target 1 sees it as visited
        let mut rng = (0..64)
            .map(ChaCha8Rng::seed_from_u64)
            .find(|r| r.clone().gen_range(0..3) == 0)
            .unwrap();
        search_pass(&t, &s, &mut nnf, &p, &mut rng).unwrap();
        assert_eq!(nnf[1].source, 2);
        assert_eq!(nnf[1].d, 0.0);
    }

    #[test]
    fn empty_sources_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(init_nnf(3, 0, &mut rng), Err(Error::EmptySource)));
    }

    #[test]
    fn same_seed_same_field() {
        let p = DiscParams::default();
        let (t, s) = line_instance(20, &p);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut nnf = init_nnf(t.len(), s.len(), &mut rng).unwrap();
            for _ in 0..3 {
                search_pass(&t, &s, &mut nnf, &p, &mut rng).unwrap();
            }
            nnf
        };
        assert_eq!(run(), run());
    }
}
