use sha2::{Digest, Sha256};

/// Derives a sub-seed from the run seed, an instance id, a purpose tag and
/// an index. Independent of evaluation order, so parallel workers draw the
/// same values as a sequential run.
pub fn derive_seed(run_seed: u64, instance_id: &str, purpose: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update((instance_id.len() as u64).to_le_bytes());
    h.update(instance_id.as_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
