use crate::error::{Error, Result};

/// Body regions used to localize synthetic anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Head,
    Torso,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Head,
        Region::Torso,
        Region::LeftArm,
        Region::RightArm,
        Region::LeftLeg,
        Region::RightLeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::Torso => "torso",
            Region::LeftArm => "left_arm",
            Region::RightArm => "right_arm",
            Region::LeftLeg => "left_leg",
            Region::RightLeg => "right_leg",
        }
    }

    /// Accepts `left arm`, `left_arm`, `Left-Arm`, ...
    pub fn parse(name: &str) -> Result<Region> {
        let key: String = name
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        Region::ALL
            .into_iter()
            .find(|r| r.name() == key)
            .ok_or_else(|| Error::config(format!("unknown body region `{name}`")))
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Joint layout: bones, region membership, and a rest pose in body units
/// (x right, y down, height about 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub regions: Vec<Region>,
    pub rest: Vec<[f64; 2]>,
}

impl Skeleton {
    /// The 17-keypoint COCO layout.
    pub fn coco17() -> Self {
        use Region::*;
        let regions = vec![
            Head, Head, Head, Head, Head, Torso, Torso, LeftArm, RightArm, LeftArm, RightArm,
            Torso, Torso, LeftLeg, RightLeg, LeftLeg, RightLeg,
        ];
        let rest = vec![
            [0.0, -0.45],
            [-0.03, -0.47],
            [0.03, -0.47],
            [-0.06, -0.45],
            [0.06, -0.45],
            [-0.12, -0.30],
            [0.12, -0.30],
            [-0.15, -0.12],
            [0.15, -0.12],
            [-0.16, 0.05],
            [0.16, 0.05],
            [-0.08, 0.05],
            [0.08, 0.05],
            [-0.09, 0.28],
            [0.09, 0.28],
            [-0.10, 0.50],
            [0.10, 0.50],
        ];
        let edges = vec![
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (3, 5),
            (4, 6),
            (5, 6),
            (5, 7),
            (7, 9),
            (6, 8),
            (8, 10),
            (5, 11),
            (6, 12),
            (11, 12),
            (11, 13),
            (13, 15),
            (12, 14),
            (14, 16),
        ];
        Skeleton {
            joints: 17,
            edges,
            regions,
            rest,
        }
    }

    /// COCO for 17 joints; otherwise a vertical chain whose joints are split
    /// into contiguous region blocks.
    pub fn for_joints(joints: usize) -> Self {
        if joints == 17 {
            return Self::coco17();
        }
        let regions = (0..joints)
            .map(|j| Region::ALL[j * Region::ALL.len() / joints.max(1)])
            .collect();
        let rest = (0..joints)
            .map(|j| {
                let y = -0.5 + j as f64 / (joints.max(2) - 1) as f64;
                let x = if j % 2 == 0 { -0.05 } else { 0.05 };
                [x, y]
            })
            .collect();
        let edges = (1..joints).map(|j| (j - 1, j)).collect();
        Skeleton {
            joints,
            edges,
            regions,
            rest,
        }
    }

    /// Joint indices of `region`; errors when the region is empty.
    pub fn region_joints(&self, region: Region) -> Result<Vec<usize>> {
        let joints: Vec<usize> = (0..self.joints)
            .filter(|&j| self.regions[j] == region)
            .collect();
        if joints.is_empty() {
            return Err(Error::config(format!(
                "region `{region}` has no joints in a {}-joint skeleton",
                self.joints
            )));
        }
        Ok(joints)
    }

    /// Symmetric adjacency with self loops, row-normalized.
    pub fn normalized_adjacency(&self) -> Vec<Vec<f64>> {
        let n = self.joints;
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j) in &self.edges {
            a[i][j] = 1.0;
            a[j][i] = 1.0;
        }
        for row in &mut a {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        a
    }
}
