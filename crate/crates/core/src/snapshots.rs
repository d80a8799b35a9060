//! Snapshot ring: `n` deep copies of the model parameters, shifted
//! recursively every `kappa` training steps.
//!
//! The tick runs at the top of step `t` (1-based): when `t mod kappa == 0`
//! the copies shift down (`copy_n <- copy_{n-1}, .., copy_1 <- theta`), so a
//! fresh copy reflects the parameters after step `t - 1`'s update. Until the
//! first shift every copy still holds the initialization.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, ParamSet};

/// Magic bytes at the start of a serialized ring checkpoint.
pub const RING_MAGIC: [u8; 4] = *b"MRKR";
/// Current ring checkpoint format version.
pub const RING_VERSION: u32 = 1;

// Cap on the declared copy count when reading untrusted ring files.
const MAX_RING_COPIES: usize = 4096;

/// Ring geometry. `kappa_epochs` follows the configuration convention of
/// expressing the copy interval in epochs; `steps_per_epoch` converts it to
/// steps with round-to-nearest and a floor of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotConfig {
    pub kappa_epochs: f64,
    pub n: usize,
    pub steps_per_epoch: usize,
}

impl SnapshotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("snapshot count n must be >= 1".into()));
        }
        if !self.kappa_epochs.is_finite() || self.kappa_epochs <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kappa_epochs must be a positive finite value, got {}",
                self.kappa_epochs
            )));
        }
        if self.steps_per_epoch < 1 {
            return Err(Error::InvalidConfig("steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    /// Copy interval in steps: `max(1, round(kappa_epochs * steps_per_epoch))`.
    pub fn kappa_steps(&self) -> u64 {
        ((self.kappa_epochs * self.steps_per_epoch as f64).round() as u64).max(1)
    }
}

/// The ring itself: `copies[0]` is the most recent snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRing {
    copies: Vec<ParamSet>,
    kappa_steps: u64,
    step_counter: u64,
}

impl SnapshotRing {
    /// Fills the ring with `n` independent deep copies of `theta`.
    pub fn init(theta: &ParamSet, cfg: &SnapshotConfig) -> Result<Self> {
        cfg.validate()?;
        theta.validate()?;
        Ok(Self {
            copies: vec![theta.clone(); cfg.n],
            kappa_steps: cfg.kappa_steps(),
            step_counter: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.copies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.copies.is_empty()
    }

    pub fn kappa_steps(&self) -> u64 {
        self.kappa_steps
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn copies(&self) -> &[ParamSet] {
        &self.copies
    }

    /// Advances the step counter and shifts the ring when the new step index
    /// is a multiple of `kappa_steps`. Call once per training step, before
    /// the gradient update for that step. Returns whether a shift happened.
    pub fn tick(&mut self, theta: &ParamSet) -> bool {
        self.step_counter += 1;
        if !self.step_counter.is_multiple_of(self.kappa_steps) {
            return false;
        }
        for i in (1..self.copies.len()).rev() {
            self.copies[i] = self.copies[i - 1].clone();
        }
        self.copies[0] = theta.clone();
        true
    }

    /// Forward passes of `inputs` through every copy, oldest-first order
    /// matching `copies`. Copies are immutable here, so callers may fan the
    /// passes out across threads.
    pub fn teacher_logits(&self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        self.copies
            .iter()
            .map(|params| nn::forward(params, inputs).map(|(logits, _)| logits))
            .collect()
    }

    /// Ring checkpoint: `MRKR` magic, version, `n`, `kappa_steps`,
    /// `step_counter`, then each copy in the parameter binary format.
    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&RING_MAGIC)?;
        w.write_all(&RING_VERSION.to_le_bytes())?;
        w.write_all(&(self.copies.len() as u32).to_le_bytes())?;
        w.write_all(&self.kappa_steps.to_le_bytes())?;
        w.write_all(&self.step_counter.to_le_bytes())?;
        for copy in &self.copies {
            copy.to_writer(w)?;
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("ring file truncated before magic".into()))?;
        if magic != RING_MAGIC {
            return Err(Error::Format(format!(
                "bad ring magic {magic:?}, expected {RING_MAGIC:?}"
            )));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::Format("ring file truncated".into()))?;
        let version = u32::from_le_bytes(u32buf);
        if version != RING_VERSION {
            return Err(Error::Format(format!(
                "unsupported ring format version {version}"
            )));
        }
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::Format("ring file truncated".into()))?;
        let n = u32::from_le_bytes(u32buf) as usize;
        if n == 0 {
            return Err(Error::Format("ring file declares zero copies".into()));
        }
        if n > MAX_RING_COPIES {
            return Err(Error::Format(format!(
                "ring file declares {n} copies, limit is {MAX_RING_COPIES}"
            )));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::Format("ring file truncated".into()))?;
        let kappa_steps = u64::from_le_bytes(u64buf);
        if kappa_steps == 0 {
            return Err(Error::Format("ring kappa_steps must be >= 1".into()));
        }
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::Format("ring file truncated".into()))?;
        let step_counter = u64::from_le_bytes(u64buf);
        let mut copies = Vec::with_capacity(n);
        for _ in 0..n {
            copies.push(ParamSet::from_reader(r)?);
        }
        Ok(Self {
            copies,
            kappa_steps,
            step_counter,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = std::io::Cursor::new(&bytes);
        let ring = Self::from_reader(&mut cursor)?;
        if cursor.position() != bytes.len() as u64 {
            return Err(Error::Format("trailing bytes after ring data".into()));
        }
        Ok(ring)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::forward;

    fn theta_with_marker(marker: f64) -> ParamSet {
        let mut p = ParamSet::init(&[2, 3, 2], 555).unwrap();
        p.layers_mut()[0].bias[0] = marker;
        p
    }

    fn cfg(kappa_epochs: f64, n: usize, steps_per_epoch: usize) -> SnapshotConfig {
        SnapshotConfig {
            kappa_epochs,
            n,
            steps_per_epoch,
        }
    }

    #[test]
    fn init_fills_ring_with_independent_copies() {
        let theta = theta_with_marker(0.0);
        let ring = SnapshotRing::init(&theta, &cfg(1.0, 3, 1)).unwrap();
        assert_eq!(ring.len(), 3);
        for copy in ring.copies() {
            assert_eq!(copy, &theta);
        }
    }

    #[test]
    fn mutating_live_theta_leaves_copies_untouched() {
        let mut theta = theta_with_marker(0.0);
        let ring = SnapshotRing::init(&theta, &cfg(1.0, 2, 1)).unwrap();
        let before = theta.clone();
        theta.layers_mut()[0].bias[0] = 99.0;
        for copy in ring.copies() {
            assert_eq!(copy, &before);
        }
    }

    #[test]
    fn kappa_conversion_from_epochs() {
        assert_eq!(cfg(25.0, 1, 391).kappa_steps(), 9775);
        assert_eq!(cfg(10.0 / 391.0, 1, 391).kappa_steps(), 10);
        // sub-step intervals clamp to one step
        assert_eq!(cfg(0.0001, 1, 391).kappa_steps(), 1);
    }

    #[test]
    fn init_rejects_bad_config() {
        let theta = theta_with_marker(0.0);
        assert!(SnapshotRing::init(&theta, &cfg(1.0, 0, 1)).is_err());
        assert!(SnapshotRing::init(&theta, &cfg(0.0, 1, 1)).is_err());
        assert!(SnapshotRing::init(&theta, &cfg(1.0, 1, 0)).is_err());
    }

    #[test]
    fn kappa_one_shifts_every_step() {
        let mut ring = SnapshotRing::init(&theta_with_marker(0.0), &cfg(1.0, 2, 1)).unwrap();
        for t in 1..=5u64 {
            let theta = theta_with_marker(t as f64);
            assert!(ring.tick(&theta));
            assert_eq!(ring.copies()[0].layers()[0].bias[0], t as f64);
        }
        assert_eq!(ring.copies()[1].layers()[0].bias[0], 4.0);
    }

    #[test]
    fn kappa_beyond_horizon_never_shifts() {
        let init = theta_with_marker(-1.0);
        // 200 epochs of interval with a 1-step epoch and a 50-step run
        let mut ring = SnapshotRing::init(&init, &cfg(200.0, 3, 1)).unwrap();
        let mut shifted_any = false;
        for t in 1..=50u64 {
            shifted_any |= ring.tick(&theta_with_marker(t as f64));
        }
        assert!(!shifted_any);
        for copy in ring.copies() {
            assert_eq!(copy, &init);
        }
    }

    #[test]
    fn ring_matches_full_history_oracle() {
        // brute force: keep theta at the top of every step and replay the
        // shift rule literally
        let n = 3;
        let kappa = 5u64;
        let steps = 17u64;
        let init = theta_with_marker(0.0);
        let mut ring = SnapshotRing::init(&init, &cfg(kappa as f64, n, 1)).unwrap();

        let mut history = vec![init.clone()]; // history[t] = theta at top of step t
        let mut oracle: Vec<ParamSet> = vec![init.clone(); n];
        for t in 1..=steps {
            let theta = theta_with_marker(t as f64);
            history.push(theta.clone());
            ring.tick(&theta);
            if t % kappa == 0 {
                for i in (1..n).rev() {
                    oracle[i] = oracle[i - 1].clone();
                }
                oracle[0] = history[t as usize].clone();
            }
            assert_eq!(ring.copies(), &oracle[..], "mismatch after step {t}");
        }
        // after 17 steps with kappa 5: copies hold theta from steps 15, 10, 5
        assert_eq!(ring.copies()[0].layers()[0].bias[0], 15.0);
        assert_eq!(ring.copies()[1].layers()[0].bias[0], 10.0);
        assert_eq!(ring.copies()[2].layers()[0].bias[0], 5.0);
    }

    #[test]
    fn shift_count_is_floor_t_over_kappa() {
        for (kappa, steps) in [(3u64, 20u64), (7, 13), (1, 9)] {
            let mut ring =
                SnapshotRing::init(&theta_with_marker(0.0), &cfg(kappa as f64, 2, 1)).unwrap();
            let mut shifts = 0u64;
            for t in 1..=steps {
                if ring.tick(&theta_with_marker(t as f64)) {
                    shifts += 1;
                }
            }
            assert_eq!(shifts, steps / kappa);
        }
    }

    #[test]
    fn teacher_logits_match_independent_forward_of_serialized_copies() {
        let mut ring = SnapshotRing::init(&theta_with_marker(0.0), &cfg(2.0, 2, 1)).unwrap();
        for t in 1..=6u64 {
            ring.tick(&theta_with_marker(t as f64 * 0.25));
        }
        let inputs = Matrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let teachers = ring.teacher_logits(&inputs).unwrap();
        assert_eq!(teachers.len(), 2);
        for (copy, logits) in ring.copies().iter().zip(&teachers) {
            // round trip the copy through bytes, then forward independently
            let mut buf = Vec::new();
            copy.to_writer(&mut buf).unwrap();
            let reloaded = ParamSet::from_reader(&mut std::io::Cursor::new(&buf)).unwrap();
            let (expected, _) = forward(&reloaded, &inputs).unwrap();
            assert_eq!(logits.as_slice(), expected.as_slice());
        }
    }

    #[test]
    fn teacher_logits_before_first_shift_use_initialization() {
        let init = theta_with_marker(1.25);
        let ring = SnapshotRing::init(&init, &cfg(50.0, 1, 1)).unwrap();
        let inputs = Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let teachers = ring.teacher_logits(&inputs).unwrap();
        assert_eq!(teachers.len(), 1);
        let (expected, _) = forward(&init, &inputs).unwrap();
        assert_eq!(teachers[0].as_slice(), expected.as_slice());
    }

    #[test]
    fn copies_do_not_alias_live_parameters() {
        let mut theta = theta_with_marker(3.0);
        let mut ring = SnapshotRing::init(&theta, &cfg(1.0, 2, 1)).unwrap();
        ring.tick(&theta);
        let mut before = Vec::new();
        ring.to_writer(&mut before).unwrap();
        theta.layers_mut()[1].bias[0] = -42.0;
        let mut after = Vec::new();
        ring.to_writer(&mut after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn ring_checkpoint_round_trips() {
        let mut ring = SnapshotRing::init(&theta_with_marker(0.5), &cfg(3.0, 2, 1)).unwrap();
        for t in 1..=7u64 {
            ring.tick(&theta_with_marker(t as f64));
        }
        let mut buf = Vec::new();
        ring.to_writer(&mut buf).unwrap();
        let loaded = SnapshotRing::from_reader(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(ring, loaded);

        let mut bad = buf.clone();
        bad[0] = b'Z';
        assert!(SnapshotRing::from_reader(&mut std::io::Cursor::new(&bad)).is_err());

        // a header declaring billions of copies fails before allocating
        let mut hostile = Vec::new();
        hostile.extend_from_slice(&RING_MAGIC);
        hostile.extend_from_slice(&RING_VERSION.to_le_bytes());
        hostile.extend_from_slice(&u32::MAX.to_le_bytes());
        hostile.extend_from_slice(&1u64.to_le_bytes());
        hostile.extend_from_slice(&0u64.to_le_bytes());
        match SnapshotRing::from_reader(&mut std::io::Cursor::new(&hostile)) {
            Err(Error::Format(msg)) => assert!(msg.contains("copies")),
            other => panic!("expected a format error, got {other:?}"),
        }
    }
}
