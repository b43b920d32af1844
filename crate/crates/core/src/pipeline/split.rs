use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

/// Assignment of whole calendar years to training, validation and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<i32>,
    pub validation: Vec<i32>,
    pub test: Vec<i32>,
}

impl Default for DatasetSplit {
    fn default() -> Self {
        Self {
            train: (2001..=2017).chain(2022..=2024).collect(),
            validation: vec![2018, 2019],
            test: vec![2020, 2021],
        }
    }
}

impl DatasetSplit {
    pub fn new(train: Vec<i32>, validation: Vec<i32>, test: Vec<i32>) -> Result<Self> {
        let s = Self { train, validation, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("split: no training years".into()));
        }
        let all = self.all_years();
        let mut uniq = all.clone();
        uniq.dedup();
        if uniq.len() != all.len() {
            return Err(Error::Config("split: a year is assigned more than once".into()));
        }
        Ok(())
    }

    /// Every assigned year, sorted.
    pub fn all_years(&self) -> Vec<i32> {
        let mut v: Vec<i32> = self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn subset_of(&self, year: i32) -> Option<Subset> {
        if self.train.contains(&year) {
            Some(Subset::Train)
        } else if self.validation.contains(&year) {
            Some(Subset::Validation)
        } else if self.test.contains(&year) {
            Some(Subset::Test)
        } else {
            None
        }
    }

    pub fn years(&self, subset: Subset) -> &[i32] {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Test => &self.test,
        }
    }
}
