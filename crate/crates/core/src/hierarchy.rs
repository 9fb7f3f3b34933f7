//! Two-stage classification: confusable classes are merged into one group
//! label for stage 1, and a dedicated stage-2 network per group separates
//! the members.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::TrainReport;
use crate::nn::{argmax, DenseNetwork, NetworkSpec};
use crate::train::{fit, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub name: String,
    pub members: Vec<String>,
}

impl MergeGroup {
    pub fn new(name: impl Into<String>, members: &[&str]) -> Self {
        Self {
            name: name.into(),
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// Where a base class lands in stage 1, and inside its group if merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Route {
    stage1: usize,
    group: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchySpec {
    base_classes: Vec<String>,
    merges: Vec<MergeGroup>,
    stage1_classes: Vec<String>,
    routes: Vec<Route>,
    /// Group index of each stage-1 class, if it is a group label.
    stage1_group: Vec<Option<usize>>,
}

impl HierarchySpec {
    /// Stage-1 classes follow the base order; a group takes the place of its
    /// first member.
    pub fn new(base_classes: Vec<String>, merges: Vec<MergeGroup>) -> Result<Self> {
        if base_classes.len() < 2 {
            return Err(Error::validation("a hierarchy needs at least 2 base classes"));
        }
        for (i, c) in base_classes.iter().enumerate() {
            if base_classes[..i].contains(c) {
                return Err(Error::validation(format!("duplicate base class {c:?}")));
            }
        }
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; base_classes.len()];
        for (g, group) in merges.iter().enumerate() {
            if group.members.len() < 2 {
                return Err(Error::validation(format!(
                    "merge group {:?} needs at least 2 members",
                    group.name
                )));
            }
            if merges[..g].iter().any(|o| o.name == group.name) {
                return Err(Error::validation(format!("duplicate group {:?}", group.name)));
            }
            if base_classes.contains(&group.name) {
                return Err(Error::validation(format!(
                    "group name {:?} collides with a base class",
                    group.name
                )));
            }
            for (m, member) in group.members.iter().enumerate() {
                let Some(b) = base_classes.iter().position(|c| c == member) else {
                    return Err(Error::validation(format!(
                        "group {:?} member {member:?} is not a base class",
                        group.name
                    )));
                };
                if owner[b].is_some() {
                    return Err(Error::validation(format!(
                        "class {member:?} is merged more than once"
                    )));
                }
                owner[b] = Some((g, m));
            }
        }

        let mut stage1_classes = Vec::new();
        let mut stage1_group = Vec::new();
        let mut group_slot: Vec<Option<usize>> = vec![None; merges.len()];
        let mut routes = Vec::with_capacity(base_classes.len());
        for (b, class) in base_classes.iter().enumerate() {
            let stage1 = match owner[b] {
                None => {
                    stage1_classes.push(class.clone());
                    stage1_group.push(None);
                    stage1_classes.len() - 1
                }
                Some((g, _)) => *group_slot[g].get_or_insert_with(|| {
                    stage1_classes.push(merges[g].name.clone());
                    stage1_group.push(Some(g));
                    stage1_classes.len() - 1
                }),
            };
            routes.push(Route {
                stage1,
                group: owner[b],
            });
        }
        Ok(Self {
            base_classes,
            merges,
            stage1_classes,
            routes,
            stage1_group,
        })
    }

    pub fn flat(base_classes: Vec<String>) -> Result<Self> {
        Self::new(base_classes, Vec::new())
    }

    pub fn base_classes(&self) -> &[String] {
        &self.base_classes
    }

    pub fn merges(&self) -> &[MergeGroup] {
        &self.merges
    }

    pub fn stage1_classes(&self) -> &[String] {
        &self.stage1_classes
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.merges.iter().position(|g| g.name == name)
    }

    /// Base class index of member `member` of group `group`.
    pub fn member_class(&self, group: usize, member: usize) -> usize {
        let name = &self.merges[group].members[member];
        self.base_classes.iter().position(|c| c == name).expect("validated")
    }

    fn base_index(&self, label: &str) -> Result<usize> {
        self.base_classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::validation(format!("unknown class label {label:?}")))
    }

    /// Stage-1 class index of each base label name.
    pub fn relabel_stage1<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| Ok(self.routes[self.base_index(l.as_ref())?].stage1))
            .collect()
    }

    pub fn relabel_indices(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| {
                self.routes.get(l).map(|r| r.stage1).ok_or_else(|| {
                    Error::validation(format!("label {l} out of range for the hierarchy"))
                })
            })
            .collect()
    }

    fn check_dataset(&self, ds: &LabeledDataset) -> Result<()> {
        if ds.class_names() != self.base_classes.as_slice() {
            return Err(Error::validation(format!(
                "dataset classes {:?} differ from hierarchy base classes {:?}",
                ds.class_names(),
                self.base_classes
            )));
        }
        Ok(())
    }

    pub fn stage1_dataset(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        self.check_dataset(ds)?;
        ds.relabel(self.stage1_classes.clone(), |l| Some(self.routes[l].stage1))
    }

    /// Samples of the group's members, labeled by member position.
    pub fn filter_group(&self, ds: &LabeledDataset, group: &str) -> Result<LabeledDataset> {
        self.check_dataset(ds)?;
        let g = self
            .group_index(group)
            .ok_or_else(|| Error::validation(format!("unknown merge group {group:?}")))?;
        ds.relabel(self.merges[g].members.clone(), |l| match self.routes[l].group {
            Some((gg, m)) if gg == g => Some(m),
            _ => None,
        })
    }
}

/// Outcome of routing one sample through the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    /// Base class index.
    pub class: usize,
    pub stage1: usize,
    pub stage1_probs: Vec<f64>,
    /// Group index and within-group distribution when stage 2 ran.
    pub stage2: Option<(usize, Vec<f64>)>,
}

#[derive(Debug)]
pub struct HierarchicalModel {
    spec: HierarchySpec,
    stage1: DenseNetwork,
    stage2: Vec<DenseNetwork>,
    stage2_calls: Vec<AtomicU64>,
}

impl Clone for HierarchicalModel {
    fn clone(&self) -> Self {
        Self::new(self.spec.clone(), self.stage1.clone(), self.stage2.clone())
            .expect("already validated")
    }
}

impl HierarchicalModel {
    /// `stage2` holds one network per merge group, in declaration order.
    pub fn new(spec: HierarchySpec, stage1: DenseNetwork, stage2: Vec<DenseNetwork>) -> Result<Self> {
        if stage1.num_classes() != spec.stage1_classes.len() {
            return Err(Error::validation(format!(
                "stage-1 network outputs {} classes, hierarchy has {}",
                stage1.num_classes(),
                spec.stage1_classes.len()
            )));
        }
        if stage2.len() != spec.merges.len() {
            return Err(Error::validation(format!(
                "{} stage-2 networks for {} groups",
                stage2.len(),
                spec.merges.len()
            )));
        }
        for (net, group) in stage2.iter().zip(&spec.merges) {
            if net.num_classes() != group.members.len() {
                return Err(Error::validation(format!(
                    "stage-2 network for {:?} outputs {} classes, group has {}",
                    group.name,
                    net.num_classes(),
                    group.members.len()
                )));
            }
            if net.input_dim() != stage1.input_dim() {
                return Err(Error::validation(format!(
                    "stage-2 network for {:?} takes {} features, stage 1 takes {}",
                    group.name,
                    net.input_dim(),
                    stage1.input_dim()
                )));
            }
        }
        let calls = stage2.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(Self {
            spec,
            stage1,
            stage2,
            stage2_calls: calls,
        })
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    pub fn stage1(&self) -> &DenseNetwork {
        &self.stage1
    }

    pub fn stage2(&self, group: &str) -> Option<&DenseNetwork> {
        self.spec.group_index(group).map(|g| &self.stage2[g])
    }

    pub fn stage2_networks(&self) -> &[DenseNetwork] {
        &self.stage2
    }

    pub fn input_dim(&self) -> usize {
        self.stage1.input_dim()
    }

    /// Number of stage-2 evaluations per group since construction.
    pub fn stage2_invocations(&self) -> Vec<u64> {
        self.stage2_calls.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.input_dim() {
            return Err(Error::validation(format!(
                "features have dimension {n}, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn route(&self, stage1: usize, stage1_probs: Vec<f64>, stage2: impl FnOnce(usize) -> Result<Vec<f64>>) -> Result<Routed> {
        if let Some(g) = self.spec.stage1_group[stage1] {
            self.stage2_calls[g].fetch_add(1, Ordering::Relaxed);
            let probs = stage2(g)?;
            Ok(Routed {
                class: self.spec.member_class(g, argmax(&probs)),
                stage1,
                stage1_probs,
                stage2: Some((g, probs)),
            })
        } else {
            let class = self
                .spec
                .base_classes
                .iter()
                .position(|c| *c == self.spec.stage1_classes[stage1])
                .expect("non-group stage-1 class is a base class");
            Ok(Routed {
                class,
                stage1,
                stage1_probs,
                stage2: None,
            })
        }
    }

    pub fn infer_traced(&self, features: &[f64]) -> Result<Routed> {
        self.check_dim(features.len())?;
        let probs = self.stage1.predict_proba(features)?;
        let stage1 = argmax(&probs);
        self.route(stage1, probs, |g| self.stage2[g].predict_proba(features))
    }

    /// Base class index: stage 1 decides, and a group label is handed to that
    /// group's stage-2 network.
    pub fn infer(&self, features: &[f64]) -> Result<usize> {
        Ok(self.infer_traced(features)?.class)
    }

    /// Routes every sample of `ds`, batching each stage.
    pub fn infer_dataset(&self, ds: &LabeledDataset) -> Result<Vec<Routed>> {
        self.check_dim(ds.feature_dim())?;
        let idx: Vec<usize> = (0..ds.len()).collect();
        let mut out = Vec::with_capacity(ds.len());
        for chunk in idx.chunks(512) {
            let batch = ds.batch(chunk);
            let trace = self.stage1.forward(&batch)?;
            let probs = trace.probabilities();
            let mut routed_rows: Vec<Vec<usize>> = vec![Vec::new(); self.stage2.len()];
            let mut stage1_of = Vec::with_capacity(chunk.len());
            for (r, row) in probs.iter_rows().enumerate() {
                let s1 = argmax(row);
                if let Some(g) = self.spec.stage1_group[s1] {
                    routed_rows[g].push(r);
                }
                stage1_of.push(s1);
            }
            let mut stage2_probs: Vec<Option<Vec<f64>>> = vec![None; chunk.len()];
            for (g, rows) in routed_rows.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let mut data = Vec::with_capacity(rows.len() * ds.feature_dim());
                for &r in rows {
                    data.extend_from_slice(batch.row(r));
                }
                let sub = Matrix::from_vec(rows.len(), ds.feature_dim(), data)?;
                let trace2 = self.stage2[g].forward(&sub)?;
                for (&r, p) in rows.iter().zip(trace2.probabilities().iter_rows()) {
                    stage2_probs[r] = Some(p.to_vec());
                }
            }
            for (r, s1) in stage1_of.into_iter().enumerate() {
                let p1 = probs.row(r).to_vec();
                let p2 = stage2_probs[r].take();
                out.push(self.route(s1, p1, |_| Ok(p2.expect("routed row has stage-2 output")))?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub stage1: TrainReport,
    /// `(group name, report)` in declaration order.
    pub stage2: Vec<(String, TrainReport)>,
}

/// Trains stage 1 on merged labels and each group's network on its members.
/// Stage 1 uses `cfg.seed`, so a spec without merges reproduces the flat
/// model exactly; stage-2 seeds are derived from it per group. Stage-2
/// networks train in parallel.
pub fn train_hierarchy(
    train_set: &LabeledDataset,
    spec: &HierarchySpec,
    template: &NetworkSpec,
    cfg: &TrainConfig,
    test_set: Option<&LabeledDataset>,
) -> Result<(HierarchicalModel, HierarchyReport)> {
    let stage1_train = spec.stage1_dataset(train_set)?;
    let stage1_test = test_set.map(|t| spec.stage1_dataset(t)).transpose()?;
    let mut group_sets = Vec::with_capacity(spec.merges.len());
    for (g, group) in spec.merges.iter().enumerate() {
        let train_g = spec.filter_group(train_set, &group.name)?;
        if train_g.is_empty() {
            return Err(Error::validation(format!(
                "merge group {:?} has no training samples",
                group.name
            )));
        }
        let test_g = test_set
            .map(|t| spec.filter_group(t, &group.name))
            .transpose()?
            .filter(|t| !t.is_empty());
        let cfg_g = TrainConfig {
            seed: derive_seed(cfg.seed, g as u64 + 1),
            ..*cfg
        };
        group_sets.push((train_g, test_g, cfg_g));
    }

    let (stage1, stage2) = rayon::join(
        || fit(template, &stage1_train, stage1_test.as_ref(), cfg),
        || {
            group_sets
                .par_iter()
                .map(|(train_g, test_g, cfg_g)| fit(template, train_g, test_g.as_ref(), cfg_g))
                .collect::<Result<Vec<_>>>()
        },
    );
    let (stage1, stage1_report) = stage1?;
    let (nets, reports): (Vec<_>, Vec<_>) = stage2?.into_iter().unzip();
    let report = HierarchyReport {
        stage1: stage1_report,
        stage2: spec
            .merges
            .iter()
            .map(|g| g.name.clone())
            .zip(reports)
            .collect(),
    };
    Ok((HierarchicalModel::new(spec.clone(), stage1, nets)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn global() -> HierarchySpec {
        HierarchySpec::new(
            names(&["Arborio", "Basmati", "Ipsala", "Jasmine", "Karacadag"]),
            vec![MergeGroup::new("AK", &["Arborio", "Karacadag"])],
        )
        .unwrap()
    }

    #[test]
    fn stage1_classes_replace_merged_members() {
        let spec = global();
        assert_eq!(spec.stage1_classes(), names(&["AK", "Basmati", "Ipsala", "Jasmine"]));
        let got = spec.relabel_stage1(&["Arborio", "Basmati", "Karacadag"]).unwrap();
        let ak = 0;
        assert_eq!(got, vec![ak, 1, ak]);
        assert!(spec.relabel_stage1(&["Wild"]).is_err());
    }

    #[test]
    fn stage1_count_formula() {
        let base = names(&["a", "b", "c", "d", "e", "f", "g"]);
        let spec = HierarchySpec::new(
            base.clone(),
            vec![MergeGroup::new("X", &["b", "e", "g"]), MergeGroup::new("Y", &["a", "c"])],
        )
        .unwrap();
        assert_eq!(spec.stage1_classes().len(), 7 - 2 - 1);
        assert_eq!(spec.stage1_classes(), names(&["Y", "X", "d", "f"]));
    }

    #[test]
    fn no_merges_is_identity() {
        let spec = HierarchySpec::flat(names(&["a", "b", "c"])).unwrap();
        assert_eq!(spec.stage1_classes(), spec.base_classes());
        assert_eq!(spec.relabel_indices(&[2, 0, 1]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = names(&["a", "b", "c"]);
        let bad = [
            vec![MergeGroup::new("G", &["a"])],
            vec![MergeGroup::new("G", &["a", "zz"])],
            vec![MergeGroup::new("G", &["a", "b"]), MergeGroup::new("H", &["b", "c"])],
            vec![MergeGroup::new("c", &["a", "b"])],
            vec![MergeGroup::new("G", &["a", "b"]), MergeGroup::new("G", &["c", "c"])],
        ];
        for merges in bad {
            assert!(HierarchySpec::new(base.clone(), merges).is_err());
        }
        assert!(HierarchySpec::flat(names(&["a", "a"])).is_err());
    }

    fn toy_dataset(spec: &HierarchySpec, per_class: usize) -> LabeledDataset {
        let c = spec.base_classes().len();
        let mut ds = LabeledDataset::new(spec.base_classes().to_vec(), c);
        for i in 0..per_class * c {
            let mut f = vec![0.0; c];
            f[i % c] = 1.0;
            ds.push(&f, i % c).unwrap();
        }
        ds
    }

    #[test]
    fn filter_group_keeps_members_in_declared_order() {
        let spec = HierarchySpec::new(
            names(&["Arborio", "Basmati", "Ipsala", "Jasmine", "Karacadag"]),
            vec![MergeGroup::new("AK", &["Karacadag", "Arborio"])],
        )
        .unwrap();
        let ds = toy_dataset(&spec, 3);
        let ak = spec.filter_group(&ds, "AK").unwrap();
        assert_eq!(ak.len(), 6);
        assert_eq!(ak.class_names(), names(&["Karacadag", "Arborio"]));
        for (f, l) in ak.iter() {
            // one-hot position 4 is Karacadag, 0 is Arborio
            assert_eq!(l, if f[4] == 1.0 { 0 } else { 1 });
        }
        assert!(spec.filter_group(&ds, "nope").is_err());
    }

    #[test]
    fn group_without_samples_is_empty_and_fails_training() {
        let spec = global();
        let ds = toy_dataset(&spec, 2);
        let no_ak = ds.subset(&(0..ds.len()).filter(|&i| ![0, 4].contains(&ds.label(i))).collect::<Vec<_>>());
        assert!(spec.filter_group(&no_ak, "AK").unwrap().is_empty());
        let template = NetworkSpec::new(5, vec![4], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match train_hierarchy(&no_ak, &spec, &template, &cfg, None) {
            Err(Error::Validation(msg)) => assert!(msg.contains("AK")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn scripted_model(spec: HierarchySpec, stage1_out: usize, stage2_out: usize) -> HierarchicalModel {
        // single-layer nets whose bias decides the argmax
        use crate::matrix::Matrix;
        use crate::nn::{Activation, Layer};
        let net = |classes: usize, winner: usize| {
            let mut bias = vec![0.0; classes];
            bias[winner] = 5.0;
            DenseNetwork::from_layers(vec![Layer {
                weights: Matrix::zeros(classes, 5),
                bias,
                activation: Activation::Softmax,
            }])
            .unwrap()
        };
        let s1 = net(spec.stage1_classes().len(), stage1_out);
        let s2 = spec.merges().iter().map(|g| net(g.members.len(), stage2_out)).collect();
        HierarchicalModel::new(spec, s1, s2).unwrap()
    }

    #[test]
    fn direct_classes_skip_stage_two() {
        let model = scripted_model(global(), 1, 0);
        let r = model.infer_traced(&[0.0; 5]).unwrap();
        assert_eq!(model.spec().base_classes()[r.class], "Basmati");
        assert!(r.stage2.is_none());
        assert_eq!(model.stage2_invocations(), vec![0]);
    }

    #[test]
    fn group_label_routes_to_stage_two() {
        let model = scripted_model(global(), 0, 1);
        let r = model.infer_traced(&[0.0; 5]).unwrap();
        assert_eq!(model.spec().base_classes()[r.class], "Karacadag");
        let (g, probs) = r.stage2.unwrap();
        assert_eq!(g, 0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(model.stage2_invocations(), vec![1]);
        assert!(model.infer(&[0.0; 4]).is_err());
    }

    #[test]
    fn batched_inference_matches_single() {
        let spec = global();
        let ds = toy_dataset(&spec, 4);
        let template = NetworkSpec::new(5, vec![6], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let (model, report) = train_hierarchy(&ds, &spec, &template, &cfg, Some(&ds)).unwrap();
        assert_eq!(model.stage1().num_classes(), 4);
        assert_eq!(model.stage2("AK").unwrap().num_classes(), 2);
        assert_eq!(report.stage2.len(), 1);
        let batched = model.infer_dataset(&ds).unwrap();
        let calls_after_batch = model.stage2_invocations()[0];
        let routed_to_ak = batched.iter().filter(|r| r.stage1 == 0).count() as u64;
        assert_eq!(calls_after_batch, routed_to_ak);
        for (i, r) in batched.iter().enumerate() {
            let single = model.infer_traced(ds.features(i)).unwrap();
            assert_eq!(single.class, r.class);
            assert_eq!(single.stage2.is_some(), r.stage2.is_some());
            assert!(ds.class_names().len() > r.class);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = global();
        let ds = toy_dataset(&spec, 4);
        let template = NetworkSpec::new(5, vec![6], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 8,
            ..TrainConfig::default()
        };
        let (a, _) = train_hierarchy(&ds, &spec, &template, &cfg, None).unwrap();
        let (b, _) = train_hierarchy(&ds, &spec, &template, &cfg, None).unwrap();
        assert_eq!(a.stage1(), b.stage1());
        assert_eq!(a.stage2_networks(), b.stage2_networks());
    }
}
