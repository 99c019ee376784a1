use serde::Serialize;

/// Bytes per texel: four 4-byte scalars.
pub const TEXEL_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CacheConfig {
    pub capacity_bytes: usize,
    pub assoc: usize,
    /// Horizontally adjacent texels filled per miss.
    pub line_texels: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            capacity_bytes: 16 * 1024,
            assoc: 4,
            line_texels: 4,
        }
    }
}

impl CacheConfig {
    pub fn line_bytes(&self) -> usize {
        self.line_texels * TEXEL_BYTES
    }

    pub fn sets(&self) -> usize {
        self.capacity_bytes / (self.line_bytes() * self.assoc)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.assoc == 0 || self.line_texels == 0 {
            return Err("associativity and line size must be positive".into());
        }
        let way_bytes = self.line_bytes() * self.assoc;
        if self.capacity_bytes == 0 || self.capacity_bytes % way_bytes != 0 {
            return Err(format!(
                "capacity {} is not a multiple of line size x associativity ({way_bytes})",
                self.capacity_bytes
            ));
        }
        Ok(())
    }
}

/// Set-associative LRU cache over global line numbers.
#[derive(Clone, Debug)]
pub struct CacheModel {
    config: CacheConfig,
    /// Each set holds line tags, most recently used first.
    sets: Vec<Vec<u64>>,
}

impl CacheModel {
    pub fn new(config: CacheConfig) -> Result<Self, String> {
        config.check()?;
        Ok(CacheModel {
            config,
            sets: vec![Vec::with_capacity(config.assoc); config.sets()],
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// Looks up `line`, filling it on a miss. Returns true on a hit.
    pub fn access(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(pos) = set.iter().position(|&t| t == line) {
            let t = set.remove(pos);
            set.insert(0, t);
            return true;
        }
        if set.len() == self.config.assoc {
            set.pop();
        }
        set.insert(0, line);
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let c = CacheConfig::default();
        assert_eq!(c.line_bytes(), 64);
        assert_eq!(c.sets(), 64);
        assert!(CacheConfig {
            capacity_bytes: 1000,
            ..c
        }
        .check()
        .is_err());
    }

    #[test]
    fn lru_evicts_oldest_in_set() {
        let cfg = CacheConfig {
            capacity_bytes: 2 * 64,
            assoc: 2,
            line_texels: 4,
        };
        let mut c = CacheModel::new(cfg).unwrap();
        assert!(!c.access(1));
        assert!(!c.access(2));
        assert!(c.access(1));
        assert!(!c.access(3)); // evicts 2
        assert!(c.access(1));
        assert!(!c.access(2));
    }
}
