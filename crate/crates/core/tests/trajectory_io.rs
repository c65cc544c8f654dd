//! Trajectory file round trips and rejection of malformed files.

use std::fs;

use pdy_core::datasets::{load_trajectory, save_trajectory, Trajectory, TRAJECTORY_MAGIC};
use pdy_core::grid::{BoundaryCondition, GridSpec};
use pdy_core::Error;
use proptest::prelude::*;

fn sample() -> Trajectory {
    let spec = GridSpec::new(vec![3, 2], vec![1.0, 0.5], BoundaryCondition::Neumann).unwrap();
    let frames = (0..4).map(|t| (0..12).map(|k| (t * 12 + k) as f64 * 0.25 - 3.0).collect()).collect();
    Trajectory::new(spec, 2, 0.01, frames).unwrap()
}

fn assert_format_error(bytes: &[u8], needle: &str) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pdyt");
    fs::write(&path, bytes).unwrap();
    match load_trajectory(&path) {
        Err(Error::Format { reason, .. }) => assert!(reason.contains(needle), "{reason}"),
        other => panic!("expected a format error containing `{needle}`, got {other:?}"),
    }
}

fn saved_bytes(t: &Trajectory) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pdyt");
    save_trajectory(t, &path).unwrap();
    fs::read(&path).unwrap()
}

#[test]
fn file_starts_with_magic_and_round_trips() {
    let t = sample();
    let bytes = saved_bytes(&t);
    assert!(bytes.starts_with(TRAJECTORY_MAGIC.as_bytes()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pdyt");
    fs::write(&path, &bytes).unwrap();
    assert_eq!(load_trajectory(&path).unwrap(), t);
}

#[test]
fn empty_file_is_rejected() {
    assert_format_error(b"", "empty file");
}

#[test]
fn truncated_payload_is_rejected() {
    let bytes = saved_bytes(&sample());
    assert_format_error(&bytes[..bytes.len() - 5], "payload has");
}

#[test]
fn header_frame_count_mismatch_is_rejected() {
    let bytes = saved_bytes(&sample());
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("frames=4").unwrap();
    let mut edited = bytes.clone();
    edited[at + "frames=".len()] = b'5';
    assert_format_error(&edited, "header declares 5 frames");
}

#[test]
fn bad_magic_and_unterminated_header_are_rejected() {
    let mut bytes = saved_bytes(&sample());
    bytes[0] = b'X';
    assert_format_error(&bytes, "bad magic");
    assert_format_error(b"PDYTRAJ1\ndims=3\n", "not terminated");
}

#[test]
fn nonfinite_payload_is_rejected() {
    let mut bytes = saved_bytes(&sample());
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert_format_error(&bytes, "non-finite");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_trajectory(&dir.path().join("absent.pdyt")), Err(Error::Io { .. })));
}

fn trajectory_strategy() -> impl Strategy<Value = Trajectory> {
    (
        prop::collection::vec(3usize..6, 1..=2),
        1usize..3,
        2usize..6,
        prop::sample::select(BoundaryCondition::ALL.to_vec()),
        1e-4f64..1.0,
        any::<u64>(),
    )
        .prop_map(|(dims, channels, n_frames, bc, dt, seed)| {
            let extent = dims.iter().map(|&n| 0.5 + n as f64).collect();
            let spec = GridSpec::new(dims, extent, bc).unwrap();
            let d = channels * spec.len();
            let mut state = seed | 1;
            let frames = (0..n_frames)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            state ^= state << 13;
                            state ^= state >> 7;
                            state ^= state << 17;
                            f64::from_bits(state % 0x7fe0_0000_0000_0000) * if state & 1 == 0 { 1.0 } else { -1.0 }
                        })
                        .collect()
                })
                .collect();
            Trajectory::new(spec, channels, dt, frames).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact(t in trajectory_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pdyt");
        save_trajectory(&t, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        prop_assert_eq!(&back.spec, &t.spec);
        prop_assert_eq!(back.dt.to_bits(), t.dt.to_bits());
        for (a, b) in back.frames.iter().flatten().zip(t.frames.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
