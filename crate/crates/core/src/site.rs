use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point of the integer lattice Z^d.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(Vec<i64>);

impl Site {
    pub fn new(coords: Vec<i64>) -> Self {
        Site(coords)
    }

    pub fn origin(dimension: usize) -> Self {
        Site(vec![0; dimension])
    }

    /// The unit vector along `axis`.
    pub fn unit(dimension: usize, axis: usize) -> Self {
        let mut v = vec![0; dimension];
        v[axis] = 1;
        Site(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn max_abs(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.0.iter().zip(theta).map(|(&c, &t)| c as f64 * t).sum()
    }

    /// Representative of the pair {z, -z}: the one whose first nonzero
    /// coordinate is positive.
    pub fn canonical(&self) -> Site {
        match self.0.iter().find(|&&c| c != 0) {
            Some(&c) if c < 0 => -self,
            _ => self.clone(),
        }
    }
}

impl From<Vec<i64>> for Site {
    fn from(v: Vec<i64>) -> Self {
        Site(v)
    }
}

impl From<i64> for Site {
    fn from(v: i64) -> Self {
        Site(vec![v])
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Neg for &Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.iter().map(|c| -c).collect())
    }
}

impl Sub for &Site {
    type Output = Site;
    fn sub(self, rhs: &Site) -> Site {
        Site(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Add for &Site {
    type Output = Site;
    fn add(self, rhs: &Site) -> Site {
        Site(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}
