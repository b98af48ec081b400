//! Structural controller for the hidden layer.
//!
//! Neurons whose outgoing L1 norm sits strictly below the deletion threshold
//! form a reserve pool. Once per cycle, right after the parameter update,
//! the controller compares the pool size against the target count `k`: too
//! few reserves triggers a probabilistic addition, too many triggers
//! probabilistic deletion of the excess (keeping the lowest-norm members as
//! the reserve). Additions join at an outgoing norm of exactly the deletion
//! threshold, so they barely perturb the network at birth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::network::{OptimizerState, RnnParams, WEIGHT_INIT_STD};
use crate::{Error, Result};

/// The five structural hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    /// Target number of sub-threshold reserve neurons.
    pub k: usize,
    /// Deletion threshold on the outgoing L1 norm.
    pub t_del: f64,
    /// Probability of an addition, per cycle with a depleted reserve.
    pub p_add: f64,
    /// Probability of deleting each excess reserve neuron, per cycle.
    pub p_del: f64,
    /// Strength of the outgoing-weight L1 penalty.
    pub a_l1reg: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            k: 1,
            t_del: 0.05,
            p_add: 0.01,
            p_del: 0.05,
            a_l1reg: 1e-4,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_add) || !(0.0..=1.0).contains(&self.p_del) {
            return Err(Error::InvalidConfig(
                "p-add and p-del must lie in [0, 1]".into(),
            ));
        }
        if self.t_del <= 0.0 {
            return Err(Error::InvalidConfig("t-del must be positive".into()));
        }
        if self.a_l1reg < 0.0 {
            return Err(Error::InvalidConfig("l1 strength must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Added,
    Deleted,
}

/// One structural change, recorded for the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralEvent {
    pub cycle: u64,
    pub kind: EventKind,
    /// Neuron index at event time (pre-deletion numbering for deletions).
    pub index: usize,
    /// Outgoing L1 norm at event time.
    pub outgoing_norm: f64,
}

/// Indices of neurons strictly below the deletion threshold.
pub fn subthreshold_set(params: &RnnParams, t_del: f64) -> Vec<usize> {
    assert!(t_del > 0.0);
    (0..params.n_hidden())
        .filter(|&j| params.outgoing_l1(j) < t_del)
        .collect()
}

fn subthreshold_with_norms(params: &RnnParams, t_del: f64) -> Vec<(usize, f64)> {
    (0..params.n_hidden())
        .map(|j| (j, params.outgoing_l1(j)))
        .filter(|&(_, norm)| norm < t_del)
        .collect()
}

/// Grows the network by one neuron and returns its index.
///
/// Incoming weights (new rows of `w_in` and `w_rec`) are Gaussian with the
/// usual init std. Outgoing weights (new column of `w_rec`, including the
/// self-connection, plus new column of `w_out`) are Gaussian rescaled so
/// their joint L1 norm equals `t_del` exactly. The new bias, hidden-state
/// entry, and optimizer accumulators start at zero.
pub fn add_neuron(
    params: &mut RnnParams,
    opt: &mut OptimizerState,
    hidden: &mut Vec<f64>,
    t_del: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = params.n_hidden();
    let mut gauss = || -> f64 {
        let g: f64 = rng.sample(StandardNormal);
        g * WEIGHT_INIT_STD
    };

    let in_row: Vec<f64> = (0..params.w_in.cols()).map(|_| gauss()).collect();
    let rec_row: Vec<f64> = (0..n).map(|_| gauss()).collect();

    // outgoing: n+1 lateral entries (incl. the self-connection) + 4 output
    // entries, rescaled to an exact joint L1 norm of t_del
    let out_len = n + 1 + params.w_out.rows();
    let outgoing: Vec<f64> = loop {
        let raw: Vec<f64> = (0..out_len).map(|_| gauss()).collect();
        let norm: f64 = raw.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            let scale = t_del / norm;
            break raw.iter().map(|v| v * scale).collect();
        }
    };

    params.w_in.push_row(&in_row);
    params.w_rec.push_row(&rec_row);
    params.w_rec.push_col(&outgoing[..n + 1]);
    params.w_out.push_col(&outgoing[n + 1..]);
    params.b_hid.push(0.0);

    let kappa: f64 = std::env::var("GROWRNN_KAPPA").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let mean = |data: &[f64]| data.iter().sum::<f64>() / data.len() as f64 / kappa;
    let acc_in = mean(opt.w_in.data());
    let acc_rec = mean(opt.w_rec.data());
    let acc_out = mean(opt.w_out.data());
    let acc_b = mean(&opt.b_hid);
    opt.w_in.push_row(&vec![acc_in; opt.w_in.cols()]);
    opt.w_rec.push_row(&vec![acc_rec; n]);
    opt.w_rec.push_col(&vec![acc_rec; n + 1]);
    opt.w_out.push_col(&vec![acc_out; opt.w_out.rows()]);
    opt.b_hid.push(acc_b);

    hidden.push(0.0);
    n
}

/// Removes neuron `j` from every coupled array. Refuses to empty the layer.
pub fn delete_neuron(
    params: &mut RnnParams,
    opt: &mut OptimizerState,
    hidden: &mut Vec<f64>,
    j: usize,
) -> Result<()> {
    let n = params.n_hidden();
    assert!(j < n, "neuron {j} out of range ({n} hidden)");
    if n == 1 {
        return Err(Error::LastNeuron);
    }
    params.w_in.remove_row(j);
    params.w_rec.remove_row(j);
    params.w_rec.remove_col(j);
    params.w_out.remove_col(j);
    params.b_hid.remove(j);

    opt.w_in.remove_row(j);
    opt.w_rec.remove_row(j);
    opt.w_rec.remove_col(j);
    opt.w_out.remove_col(j);
    opt.b_hid.remove(j);

    hidden.remove(j);
    Ok(())
}

/// One controller step, to run immediately after each parameter update.
///
/// With fewer than `k` sub-threshold neurons, adds one with probability
/// `p_add`. With more than `k`, keeps the `k` lowest-norm members as the
/// reserve and independently deletes each remaining member with probability
/// `p_del` (never dropping below one neuron). With exactly `k`, does
/// nothing.
pub fn structural_step(
    params: &mut RnnParams,
    opt: &mut OptimizerState,
    hidden: &mut Vec<f64>,
    config: &StructureConfig,
    rng: &mut ChaCha8Rng,
    cycle: u64,
) -> Vec<StructuralEvent> {
    let mut sub = subthreshold_with_norms(params, config.t_del);
    let mut events = Vec::new();

    if sub.len() < config.k {
        if rng.random::<f64>() < config.p_add {
            let index = add_neuron(params, opt, hidden, config.t_del, rng);
            events.push(StructuralEvent {
                cycle,
                kind: EventKind::Added,
                index,
                outgoing_norm: params.outgoing_l1(index),
            });
        }
    } else if sub.len() > config.k {
        // ascending norm, ties broken by index; the first k stay as reserve
        sub.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let mut doomed: Vec<(usize, f64)> = sub[config.k..]
            .iter()
            .filter(|_| rng.random::<f64>() < config.p_del)
            .copied()
            .collect();
        // delete from the highest index down so survivors keep their index
        doomed.sort_by(|a, b| b.0.cmp(&a.0));
        for (index, outgoing_norm) in doomed {
            if params.n_hidden() == 1 {
                break;
            }
            delete_neuron(params, opt, hidden, index)
                .expect("guarded deletion cannot fail");
            events.push(StructuralEvent {
                cycle,
                kind: EventKind::Deleted,
                index,
                outgoing_norm,
            });
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Mat;
    use crate::network::{forward, RnnParams};
    use crate::tasks::VOCAB;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Network whose neuron j has outgoing norm norms[j], concentrated on a
    /// single recurrent entry.
    fn net_with_col_norms(norms: &[f64]) -> (RnnParams, OptimizerState, Vec<f64>) {
        let n = norms.len();
        let mut params = RnnParams {
            w_in: Mat::zeros(n, VOCAB),
            w_rec: Mat::zeros(n, n),
            w_out: Mat::zeros(VOCAB, n),
            b_hid: vec![0.0; n],
            b_out: vec![0.0; VOCAB],
        };
        for (j, &norm) in norms.iter().enumerate() {
            params.w_rec[(0, j)] = norm;
        }
        let opt = OptimizerState::zeros_like(&params);
        let hidden = vec![0.0; n];
        (params, opt, hidden)
    }

    fn shapes_agree(params: &RnnParams, opt: &OptimizerState, hidden: &[f64]) -> bool {
        let n = params.n_hidden();
        params.shape_consistent()
            && opt.w_in.rows() == n
            && opt.w_in.cols() == VOCAB
            && opt.w_rec.rows() == n
            && opt.w_rec.cols() == n
            && opt.w_out.rows() == VOCAB
            && opt.w_out.cols() == n
            && opt.b_hid.len() == n
            && hidden.len() == n
    }

    #[test]
    fn default_config_matches_nominal_values() {
        let c = StructureConfig::default();
        assert_eq!(c.k, 1);
        assert_eq!(c.t_del, 0.05);
        assert_eq!(c.p_add, 0.01);
        assert_eq!(c.p_del, 0.05);
        assert_eq!(c.a_l1reg, 1e-4);
        assert!(c.validate().is_ok());
        assert!(StructureConfig {
            p_add: 1.5,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn subthreshold_uses_strict_inequality() {
        let (params, _, _) = net_with_col_norms(&[0.05, 0.0499999, 1.0]);
        let sub = subthreshold_set(&params, 0.05);
        // a neuron sitting exactly at the threshold is not sub-threshold
        assert_eq!(sub, vec![1]);
    }

    #[test]
    fn all_above_threshold_gives_empty_set() {
        let (params, _, _) = net_with_col_norms(&[1.0, 1.0, 1.0]);
        assert!(subthreshold_set(&params, 0.05).is_empty());
    }

    #[test]
    fn fresh_one_neuron_net_is_usually_subthreshold() {
        // 5 outgoing entries with std 0.01 have expected L1 norm ~0.04;
        // Monte Carlo puts the sub-threshold fraction near 0.78, well above
        // a majority but not near-certain
        let mut r = rng(40);
        let trials = 10_000;
        let mut below = 0;
        for _ in 0..trials {
            let p = RnnParams::init(1, &mut r).unwrap();
            if p.outgoing_l1(0) < 0.05 {
                below += 1;
            }
        }
        let frac = below as f64 / trials as f64;
        assert!(
            (0.72..=0.84).contains(&frac),
            "sub-threshold fraction {frac} outside Monte Carlo band [0.72, 0.84]"
        );
    }

    #[test]
    fn added_neuron_norm_equals_threshold_exactly() {
        let mut r = rng(41);
        for trial in 0..100 {
            let n0 = 1 + (trial % 5);
            let mut params = RnnParams::init(n0, &mut r).unwrap();
            let mut opt = OptimizerState::zeros_like(&params);
            let mut hidden = vec![0.0; n0];
            let idx = add_neuron(&mut params, &mut opt, &mut hidden, 0.05, &mut r);
            assert_eq!(idx, n0);
            assert_eq!(params.n_hidden(), n0 + 1);
            assert!(
                (params.outgoing_l1(idx) - 0.05).abs() < 1e-12,
                "outgoing norm {} != threshold",
                params.outgoing_l1(idx)
            );
            assert!(shapes_agree(&params, &opt, &hidden));
            assert_eq!(params.b_hid[idx], 0.0);
            assert_eq!(hidden[idx], 0.0);
            // fresh accumulator entries are zero
            assert_eq!(opt.w_rec.col_l1(idx), 0.0);
            assert_eq!(opt.w_rec.row(idx).iter().sum::<f64>(), 0.0);
            assert_eq!(opt.w_out.col_l1(idx), 0.0);
        }
    }

    #[test]
    fn added_neuron_perturbs_first_step_logits_within_threshold() {
        let t_del = 0.05;
        let mut r = rng(42);
        let mut params = RnnParams::init(3, &mut r).unwrap();
        for v in params.w_out.data_mut() {
            *v += 0.3; // give the output layer some weight to expose changes
        }
        let h0 = vec![0.2, -0.1, 0.4];

        let logits_of = |p: &RnnParams, h_start: &[f64], x: usize| -> [f64; VOCAB] {
            let n = p.n_hidden();
            let mut h = vec![0.0; n];
            for i in 0..n {
                let mut pre = p.w_in[(i, x)] + p.b_hid[i];
                for j in 0..n {
                    pre += p.w_rec[(i, j)] * h_start[j];
                }
                h[i] = pre.tanh();
            }
            let mut logits = [0.0; VOCAB];
            for o in 0..VOCAB {
                logits[o] = p.b_out[o];
                for j in 0..n {
                    logits[o] += p.w_out[(o, j)] * h[j];
                }
            }
            logits
        };

        let before = logits_of(&params, &h0, 2);
        let mut opt = OptimizerState::zeros_like(&params);
        let mut hidden = h0.clone();
        add_neuron(&mut params, &mut opt, &mut hidden, t_del, &mut r);
        let after = logits_of(&params, &hidden, 2);
        for o in 0..VOCAB {
            assert!(
                (after[o] - before[o]).abs() <= t_del,
                "first-step logit moved by more than the threshold"
            );
        }
    }

    #[test]
    fn deleting_zero_outgoing_neuron_leaves_outputs_bit_identical() {
        let mut r = rng(43);
        let mut params = RnnParams::init(3, &mut r).unwrap();
        for v in params.w_rec.data_mut() {
            *v *= 50.0; // make activity non-trivial
        }
        let kill = 1;
        for i in 0..3 {
            params.w_rec[(i, kill)] = 0.0;
        }
        for o in 0..VOCAB {
            params.w_out[(o, kill)] = 0.0;
        }
        let mut opt = OptimizerState::zeros_like(&params);
        let mut hidden = vec![0.3, -0.6, 0.25];

        let inputs: Vec<usize> = (0..40).map(|t| t % 4).collect();
        let targets: Vec<usize> = (0..40).map(|t| (t + 3) % 4).collect();
        let before = forward(&params, &hidden, &inputs, &targets).unwrap();

        delete_neuron(&mut params, &mut opt, &mut hidden, kill).unwrap();
        let after = forward(&params, &hidden, &inputs, &targets).unwrap();

        assert_eq!(before.loss, after.loss);
        for (pb, pa) in before.probs.iter().zip(&after.probs) {
            assert_eq!(pb, pa);
        }
    }

    #[test]
    fn delete_keeps_exactly_the_surviving_rows_and_cols() {
        let n = 3;
        let mut params = RnnParams {
            w_in: Mat::from_fn(n, VOCAB, |r, c| (100 * r + c) as f64),
            w_rec: Mat::from_fn(n, n, |r, c| (200 * r + c) as f64 + 0.5),
            w_out: Mat::from_fn(VOCAB, n, |r, c| (300 * r + c) as f64 + 0.25),
            b_hid: vec![1.0, 2.0, 3.0],
            b_out: vec![0.0; VOCAB],
        };
        let mut opt = OptimizerState::zeros_like(&params);
        opt.w_rec = Mat::from_fn(n, n, |r, c| (400 * r + c) as f64);
        let mut hidden = vec![10.0, 20.0, 30.0];

        delete_neuron(&mut params, &mut opt, &mut hidden, 1).unwrap();

        let keep = [0usize, 2];
        for (ri, &r) in keep.iter().enumerate() {
            for c in 0..VOCAB {
                assert_eq!(params.w_in[(ri, c)], (100 * r + c) as f64);
            }
            for (ci, &c) in keep.iter().enumerate() {
                assert_eq!(params.w_rec[(ri, ci)], (200 * r + c) as f64 + 0.5);
                assert_eq!(opt.w_rec[(ri, ci)], (400 * r + c) as f64);
            }
        }
        for o in 0..VOCAB {
            for (ci, &c) in keep.iter().enumerate() {
                assert_eq!(params.w_out[(o, ci)], (300 * o + c) as f64 + 0.25);
            }
        }
        assert_eq!(params.b_hid, vec![1.0, 3.0]);
        assert_eq!(hidden, vec![10.0, 30.0]);
    }

    #[test]
    fn delete_refuses_last_neuron() {
        let (mut params, mut opt, mut hidden) = net_with_col_norms(&[0.01]);
        let err = delete_neuron(&mut params, &mut opt, &mut hidden, 0).unwrap_err();
        assert!(matches!(err, Error::LastNeuron));
        assert_eq!(params.n_hidden(), 1);
    }

    #[test]
    fn empty_reserve_adds_at_p_add_rate() {
        let config = StructureConfig::default();
        let mut r = rng(44);
        let trials = 100_000;
        let mut adds = 0;
        for _ in 0..trials {
            let (mut params, mut opt, mut hidden) = net_with_col_norms(&[1.0, 1.0]);
            let events =
                structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, 0);
            assert!(events.len() <= 1, "at most one addition per cycle");
            if !events.is_empty() {
                assert_eq!(events[0].kind, EventKind::Added);
                assert_eq!(params.n_hidden(), 3);
                adds += 1;
            }
        }
        let rate = adds as f64 / trials as f64;
        assert!(
            (0.009..=0.011).contains(&rate),
            "empirical add rate {rate} outside [0.009, 0.011]"
        );
    }

    #[test]
    fn reserve_at_target_never_changes() {
        let config = StructureConfig::default();
        let mut r = rng(45);
        for _ in 0..1000 {
            let (mut params, mut opt, mut hidden) = net_with_col_norms(&[1.0, 0.01]);
            let events =
                structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, 0);
            assert!(events.is_empty());
            assert_eq!(params.n_hidden(), 2);
        }
    }

    #[test]
    fn excess_reserve_deletes_candidates_at_p_del_rate() {
        // three sub-threshold of five; the lowest-norm one is the reserve,
        // the other two are candidates deleted independently at p_del
        let config = StructureConfig::default();
        let mut r = rng(46);
        let trials = 100_000;
        let mut deletions = 0u64;
        for _ in 0..trials {
            let (mut params, mut opt, mut hidden) =
                net_with_col_norms(&[1.0, 0.03, 0.01, 0.02, 1.0]);
            let events =
                structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, 7);
            assert!(events.len() <= 2, "at most |S| - k deletions");
            for e in &events {
                assert_eq!(e.kind, EventKind::Deleted);
                assert_eq!(e.cycle, 7);
                // candidates are the two higher-norm sub-threshold neurons
                assert!(e.index == 1 || e.index == 3, "deleted index {}", e.index);
            }
            deletions += events.len() as u64;
            assert_eq!(params.n_hidden(), 5 - events.len());
            assert!(shapes_agree(&params, &opt, &hidden));
        }
        let mean = deletions as f64 / trials as f64;
        assert!(
            (0.09..=0.11).contains(&mean),
            "mean deletions per step {mean} outside [0.09, 0.11]"
        );
    }

    #[test]
    fn deletion_events_reference_pre_deletion_indices() {
        // force both candidates deleted: p_del = 1
        let config = StructureConfig {
            p_del: 1.0,
            ..StructureConfig::default()
        };
        let mut r = rng(47);
        let (mut params, mut opt, mut hidden) =
            net_with_col_norms(&[1.0, 0.03, 0.01, 0.02, 1.0]);
        let events = structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, 0);
        let mut indices: Vec<usize> = events.iter().map(|e| e.index).collect();
        indices.sort();
        assert_eq!(indices, vec![1, 3]);
        assert_eq!(params.n_hidden(), 3);
        // the reserve neuron (norm 0.01, originally index 2) survived
        let sub = subthreshold_set(&params, config.t_del);
        assert_eq!(sub, vec![1]);
        assert_eq!(params.w_rec[(0, 1)], 0.01);
    }

    #[test]
    fn zero_probabilities_freeze_the_size() {
        let config = StructureConfig {
            p_add: 0.0,
            p_del: 0.0,
            ..StructureConfig::default()
        };
        let mut r = rng(48);
        // both branches: depleted reserve and excess reserve
        let (mut params, mut opt, mut hidden) = net_with_col_norms(&[1.0, 1.0]);
        for cycle in 0..200 {
            let ev = structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, cycle);
            assert!(ev.is_empty());
        }
        assert_eq!(params.n_hidden(), 2);
        let (mut params, mut opt, mut hidden) = net_with_col_norms(&[0.01, 0.02, 0.03]);
        for cycle in 0..200 {
            let ev = structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, cycle);
            assert!(ev.is_empty());
        }
        assert_eq!(params.n_hidden(), 3);
    }

    #[test]
    fn never_deletes_below_one_neuron() {
        let config = StructureConfig {
            k: 0,
            p_del: 1.0,
            ..StructureConfig::default()
        };
        let mut r = rng(49);
        let (mut params, mut opt, mut hidden) = net_with_col_norms(&[0.01, 0.02]);
        structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, 0);
        assert_eq!(params.n_hidden(), 1);
    }

    #[test]
    fn event_totals_track_size_change() {
        let config = StructureConfig {
            p_add: 0.3,
            p_del: 0.3,
            ..StructureConfig::default()
        };
        let mut r = rng(50);
        let mut params = RnnParams::init(4, &mut r).unwrap();
        let mut opt = OptimizerState::zeros_like(&params);
        let mut hidden = vec![0.0; 4];
        let n0 = params.n_hidden();
        let mut added = 0i64;
        let mut deleted = 0i64;
        for cycle in 0..600 {
            for e in structural_step(&mut params, &mut opt, &mut hidden, &config, &mut r, cycle)
            {
                match e.kind {
                    EventKind::Added => added += 1,
                    EventKind::Deleted => deleted += 1,
                }
            }
            assert!(shapes_agree(&params, &opt, &hidden));
        }
        assert_eq!(
            params.n_hidden() as i64 - n0 as i64,
            added - deleted,
            "event totals must match the size change"
        );
        assert!(params.n_hidden() >= 1);
    }
}
