use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageDtype {
    Int8,
    Binary,
    Float32,
}

impl std::str::FromStr for StorageDtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(StorageDtype::Int8),
            "binary" | "bin" => Ok(StorageDtype::Binary),
            "float32" | "f32" => Ok(StorageDtype::Float32),
            other => Err(Error::InvalidArgument(format!("unknown storage dtype {other:?}"))),
        }
    }
}

/// Document embeddings per megabyte (10^6 bytes), rounded down.
pub fn storage_efficiency(dim: usize, dtype: StorageDtype) -> Result<u64> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let dim = dim as u64;
    // bits per vector, so binary needs no fractional bytes
    let bits = match dtype {
        StorageDtype::Int8 => 8 * dim,
        StorageDtype::Binary => dim,
        StorageDtype::Float32 => 32 * dim,
    };
    Ok(8_000_000 / bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        use StorageDtype::*;
        assert_eq!(storage_efficiency(2560, Int8).unwrap(), 390);
        assert_eq!(storage_efficiency(2560, Binary).unwrap(), 3125);
        assert_eq!(storage_efficiency(1024, Int8).unwrap(), 976);
        assert_eq!(storage_efficiency(1024, Binary).unwrap(), 7812);
        assert_eq!(storage_efficiency(2560, Float32).unwrap(), 97);
        assert!(storage_efficiency(0, Int8).is_err());
    }
}
