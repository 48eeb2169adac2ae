//! Bounded FIFO replay memories: per-agent trajectories and global RL
//! transitions. Sampled batches are copies, never aliased storage.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::exchange::ActionMatrix;
use crate::numerics::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum BufferError {
    #[error("entry shape {got:?} does not match buffer shape {want:?}")]
    Shape { want: Vec<usize>, got: Vec<usize> },
    #[error("not enough data: need {need}, have {have}")]
    InsufficientData { need: usize, have: usize },
}

/// One stored step: observation x_t paired with the hidden state h_t the
/// agent held *before* consuming x_t, at split-relative week `week`.
#[derive(Clone, Debug)]
pub struct TrajEntry {
    pub week: usize,
    pub obs: Tensor,
    pub hidden: Tensor,
}

pub struct TrajectoryBuffer {
    capacity: usize,
    entries: VecDeque<TrajEntry>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        TrajectoryBuffer {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, entry: TrajEntry) -> Result<(), BufferError> {
        if let Some(front) = self.entries.front() {
            if front.obs.shape() != entry.obs.shape() {
                return Err(BufferError::Shape {
                    want: front.obs.shape().to_vec(),
                    got: entry.obs.shape().to_vec(),
                });
            }
            if front.hidden.shape() != entry.hidden.shape() {
                return Err(BufferError::Shape {
                    want: front.hidden.shape().to_vec(),
                    got: entry.hidden.shape().to_vec(),
                });
            }
        }
        self.entries.push_back(entry);
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajEntry> {
        self.entries.iter()
    }

    /// Start positions of windows of `window` consecutive weeks whose
    /// 4-week-ahead targets stay within `max_target_week` (exclusive).
    fn valid_starts(&self, window: usize, horizon_max: usize, max_target_week: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if self.entries.len() < window {
            return out;
        }
        'outer: for s in 0..=(self.entries.len() - window) {
            let w0 = self.entries[s].week;
            for i in 1..window {
                if self.entries[s + i].week != w0 + i {
                    continue 'outer; // crosses an episode boundary
                }
            }
            if w0 + window - 1 + horizon_max >= max_target_week {
                continue;
            }
            out.push(s);
        }
        out
    }

    /// `batch` windows of `window` consecutive entries with uniformly chosen
    /// starts; every position's horizon targets must exist in the split.
    pub fn sample_windows(
        &self,
        window: usize,
        batch: usize,
        horizon_max: usize,
        max_target_week: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<TrajEntry>>, BufferError> {
        let starts = self.valid_starts(window, horizon_max, max_target_week);
        if starts.is_empty() {
            return Err(BufferError::InsufficientData {
                need: window + horizon_max,
                have: self.entries.len(),
            });
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let s = starts[rng.gen_range(0..starts.len())];
            out.push((s..s + window).map(|i| self.entries[i].clone()).collect());
        }
        Ok(out)
    }
}

/// One RL transition (h̄, a, h̄', r) over optimizer ticks.
#[derive(Clone, Debug)]
pub struct Transition {
    pub joint_hidden: Tensor,
    pub action: ActionMatrix,
    pub next_joint_hidden: Tensor,
    pub reward: f64,
}

pub struct TransitionBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        TransitionBuffer {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<(), BufferError> {
        t.action
            .validate()
            .expect("invalid action matrix must not enter the buffer");
        if let Some(front) = self.entries.front() {
            if front.joint_hidden.shape() != t.joint_hidden.shape() {
                return Err(BufferError::Shape {
                    want: front.joint_hidden.shape().to_vec(),
                    got: t.joint_hidden.shape().to_vec(),
                });
            }
        }
        self.entries.push_back(t);
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `m` uniform distinct entries (without replacement within a batch).
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<Transition>, BufferError> {
        if self.entries.len() < m {
            return Err(BufferError::InsufficientData {
                need: m,
                have: self.entries.len(),
            });
        }
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.shuffle(rng);
        Ok(idx[..m].iter().map(|i| self.entries[*i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(week: usize) -> TrajEntry {
        TrajEntry {
            week,
            obs: Tensor::full(&[1, 2, 2], week as f64),
            hidden: Tensor::vector(vec![week as f64]),
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = TrajectoryBuffer::new(2);
        for w in 0..3 {
            b.push(entry(w)).unwrap();
        }
        let weeks: Vec<usize> = b.iter().map(|e| e.week).collect();
        assert_eq!(weeks, vec![1, 2]);
    }

    #[test]
    fn many_pushes_keep_last() {
        let mut b = TrajectoryBuffer::new(100);
        for w in 0..10_000 {
            b.push(entry(w)).unwrap();
        }
        assert_eq!(b.len(), 100);
        let weeks: Vec<usize> = b.iter().map(|e| e.week).collect();
        let want: Vec<usize> = (9900..10_000).collect();
        assert_eq!(weeks, want);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut b = TrajectoryBuffer::new(4);
        b.push(entry(0)).unwrap();
        let bad = TrajEntry {
            week: 1,
            obs: Tensor::full(&[1, 3, 3], 0.0),
            hidden: Tensor::vector(vec![0.0]),
        };
        assert!(matches!(b.push(bad), Err(BufferError::Shape { .. })));
    }

    #[test]
    fn single_valid_start_always_returned() {
        let mut b = TrajectoryBuffer::new(64);
        // weeks 0..9 with window 5, horizon 4, split length 9:
        // only start week 0 satisfies 0+5-1+4 < 9
        for w in 0..10 {
            b.push(entry(w)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let wins = b.sample_windows(5, 1, 4, 9, &mut rng).unwrap();
            assert_eq!(wins[0][0].week, 0);
        }
    }

    #[test]
    fn insufficient_data_signalled() {
        let mut b = TrajectoryBuffer::new(64);
        for w in 0..8 {
            b.push(entry(w)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // window 5 + horizon 4 needs week 0..=8 targets; split of 8 weeks is too short
        assert!(matches!(
            b.sample_windows(5, 1, 4, 8, &mut rng),
            Err(BufferError::InsufficientData { .. })
        ));
    }

    #[test]
    fn window_never_crosses_episode_boundary() {
        let mut b = TrajectoryBuffer::new(64);
        for w in 5..10 {
            b.push(entry(w)).unwrap();
        }
        for w in 0..10 {
            b.push(entry(w)).unwrap(); // next episode restarts weeks
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let wins = b.sample_windows(3, 2, 4, 20, &mut rng).unwrap();
            for w in wins {
                for (i, e) in w.iter().enumerate() {
                    assert_eq!(e.week, w[0].week + i);
                }
            }
        }
    }

    #[test]
    fn window_start_sampling_is_roughly_uniform() {
        let mut b = TrajectoryBuffer::new(64);
        for w in 0..20 {
            b.push(entry(w)).unwrap();
        }
        // valid starts: weeks 0..=11 (window 5, horizon 4, split 20)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = vec![0usize; 12];
        let n = 10_000;
        for _ in 0..n {
            let wins = b.sample_windows(5, 1, 4, 20, &mut rng).unwrap();
            counts[wins[0][0].week] += 1;
        }
        // 3-sigma band around the multinomial expectation
        let p = 1.0 / 12.0;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.5 * sigma, "count {c} vs mean {mean}");
        }
    }

    fn transition(v: f64, n: usize) -> Transition {
        Transition {
            joint_hidden: Tensor::full(&[n], v),
            action: ActionMatrix::uniform(3, 0.8),
            next_joint_hidden: Tensor::full(&[n], v + 1.0),
            reward: v,
        }
    }

    #[test]
    fn transition_sampling_distinct_and_uniform() {
        let mut b = TransitionBuffer::new(16);
        for i in 0..10 {
            b.push(transition(i as f64, 4)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // whole-buffer sample returns every entry once
        let all = b.sample(10, &mut rng).unwrap();
        let mut rewards: Vec<i64> = all.iter().map(|t| t.reward as i64).collect();
        rewards.sort_unstable();
        assert_eq!(rewards, (0..10).collect::<Vec<i64>>());
        // empty batch
        assert!(b.sample(0, &mut rng).unwrap().is_empty());
        // inclusion frequency of each entry when sampling 3 of 10
        let mut counts = vec![0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            for t in b.sample(3, &mut rng).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        let p = 0.3;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.5 * sigma);
        }
    }

    #[test]
    fn sample_from_singleton() {
        let mut b = TransitionBuffer::new(4);
        b.push(transition(7.0, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let got = b.sample(1, &mut rng).unwrap();
        assert_eq!(got[0].reward, 7.0);
        assert!(matches!(
            b.sample(2, &mut rng),
            Err(BufferError::InsufficientData { .. })
        ));
    }
}
