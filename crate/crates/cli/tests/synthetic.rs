//! Synthetic-data contracts: determinism, label structure, and the
//! nearest-prototype separability oracle.

use ave_cli::synth::{generate, prototypes, SyntheticSpec};
use ave_core::model::SequencePair;
use std::sync::OnceLock;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 5,
        sequences_per_class: 64,
        segments: 10,
        background_rate: 0.2,
        noise_sigma: 0.1,
        seed: 7,
    }
}

fn shared_dataset() -> &'static [SequencePair] {
    static DATASET: OnceLock<Vec<SequencePair>> = OnceLock::new();
    DATASET.get_or_init(|| generate(&spec()).unwrap())
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let small = SyntheticSpec {
        sequences_per_class: 2,
        ..spec()
    };
    let a = generate(&small).unwrap();
    let b = generate(&small).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.labels, y.labels);
        assert!(x
            .audio
            .iter()
            .zip(y.audio.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        for (gx, gy) in x.visual.iter().zip(&y.visual) {
            assert!(gx
                .iter()
                .zip(gy.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    let different = SyntheticSpec {
        seed: 8,
        sequences_per_class: 2,
        ..spec()
    };
    let c = generate(&different).unwrap();
    assert!(a[0]
        .audio
        .iter()
        .zip(c[0].audio.iter())
        .any(|(p, q)| p != q));
}

#[test]
fn zero_noise_zero_background_makes_same_class_sequences_identical() {
    let clean = SyntheticSpec {
        background_rate: 0.0,
        noise_sigma: 0.0,
        sequences_per_class: 3,
        ..spec()
    };
    let sequences = generate(&clean).unwrap();
    for class in 0..clean.classes {
        let base = &sequences[class * 3];
        for s in 1..3 {
            let other = &sequences[class * 3 + s];
            assert_eq!(base.labels, other.labels);
            assert_eq!(base.audio, other.audio);
            assert_eq!(base.visual, other.visual);
        }
    }
}

#[test]
fn sequence_and_segment_counts_follow_the_spec() {
    let sequences = shared_dataset();
    assert_eq!(sequences.len(), 5 * 64);
    let segments: usize = sequences.iter().map(|s| s.labels.len()).sum();
    assert_eq!(segments, 3200);
    for seq in sequences {
        for &label in &seq.labels {
            assert!(label <= 5);
        }
    }
}

#[test]
fn background_fraction_concentrates_near_the_rate() {
    let sequences = shared_dataset();
    let segments: usize = sequences.iter().map(|s| s.labels.len()).sum();
    let background: usize = sequences
        .iter()
        .flat_map(|s| s.labels.iter())
        .filter(|&&l| l == 5)
        .count();
    let fraction = background as f64 / segments as f64;
    assert!(segments >= 3000);
    assert!(
        (fraction - 0.2).abs() <= 0.03,
        "background fraction {fraction}"
    );
}

#[test]
fn nearest_audio_prototype_classifies_event_segments() {
    // Independent oracle: euclidean nearest prototype on the audio feature
    // alone must recover the class of essentially every event segment.
    let spec = spec();
    let protos = prototypes(&spec).unwrap();
    let sequences = shared_dataset();

    let mut correct = 0usize;
    let mut events = 0usize;
    for (i, seq) in sequences.iter().enumerate() {
        let true_class = i / spec.sequences_per_class;
        for (t, &label) in seq.labels.iter().enumerate() {
            if label == spec.background_label() {
                continue;
            }
            events += 1;
            let row = &seq.audio.data()[t * 128..(t + 1) * 128];
            let nearest = protos
                .audio
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = row.iter().zip(*a).map(|(x, y)| (x - y) * (x - y)).sum();
                    let db: f64 = row.iter().zip(*b).map(|(x, y)| (x - y) * (x - y)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(c, _)| c)
                .unwrap();
            if nearest == true_class {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / events as f64;
    assert!(accuracy > 0.99, "nearest-prototype accuracy {accuracy}");
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate(&SyntheticSpec {
        classes: 0,
        ..spec()
    })
    .is_err());
    assert!(generate(&SyntheticSpec {
        background_rate: 1.0,
        ..spec()
    })
    .is_err());
    assert!(generate(&SyntheticSpec {
        noise_sigma: -0.1,
        ..spec()
    })
    .is_err());
    assert!(generate(&SyntheticSpec {
        classes: 255,
        ..spec()
    })
    .is_err());
}
