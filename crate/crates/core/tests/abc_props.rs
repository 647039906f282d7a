use bytecomposer_core::abc::{
    parse_abc, serialize_abc, AbcScore, Dynamics, Event, Headers, Key, Measure, Meter, Pitch, Rational, Step,
    Tempo, Voice,
};
use proptest::prelude::*;

const DENOMS: [i64; 5] = [1, 2, 3, 4, 8];

fn duration() -> impl Strategy<Value = Rational> {
    (1i64..=12, 0..DENOMS.len()).prop_map(|(n, d)| Rational::new(n, DENOMS[d]))
}

fn pitch() -> impl Strategy<Value = Pitch> {
    (0usize..7, -1i8..=1, 1i8..=7).prop_map(|(s, a, o)| Pitch::new(Step::ALL[s], a, o))
}

fn event() -> impl Strategy<Value = Event> {
    (
        0u8..3,
        prop::collection::vec(pitch(), 2..4),
        duration(),
        any::<bool>(),
        prop::option::of(0..Dynamics::ALL.len()),
    )
        .prop_map(|(kind, mut pitches, d, tied, dyn_idx)| {
            let first = pitches[0];
            pitches.sort();
            pitches.dedup();
            (kind, first, pitches, d, tied, dyn_idx)
        })
        .prop_map(|(kind, first, pitches, d, tied, dyn_idx)| match kind {
            0 => Event::rest(d),
            1 => {
                let mut e = Event::note(first, d);
                e.tied = tied;
                e.dynamics = dyn_idx.map(|i| Dynamics::ALL[i]);
                e
            }
            _ => {
                let mut e = Event::chord(pitches, d);
                e.dynamics = dyn_idx.map(|i| Dynamics::ALL[i]);
                e
            }
        })
}

fn measure() -> impl Strategy<Value = Measure> {
    prop::collection::vec(event(), 1..8).prop_map(|events| Measure { events, index: 0 })
}

fn headers() -> impl Strategy<Value = Headers> {
    (
        prop::option::of(1u32..100),
        prop::option::of("[A-Z][a-z0-9]{0,10}"),
        prop::option::of(prop::sample::select(vec![(2u32, 4u32), (3, 4), (4, 4), (6, 8), (2, 2)])),
        prop::option::of(prop::sample::select(vec![8i64, 16, 4])),
        prop::option::of(20u32..=400),
        prop::option::of(prop::sample::select(vec!["C", "G", "Bb", "F#m", "Ebm", "Am"])),
        prop::option::of(0u8..128),
        prop::option::of(0..Dynamics::ALL.len()),
    )
        .prop_map(|(x, t, m, l, q, k, p, v)| Headers {
            reference_number: x,
            title: t,
            composer: None,
            meter: m.map(|(a, b)| Meter::new(a, b).unwrap()),
            unit_note_length: l.map(|d| Rational::new(1, d)),
            tempo: q.map(|bpm| Tempo {
                beat: Rational::new(1, 4),
                bpm,
            }),
            key: k.map(|k| k.parse::<Key>().unwrap()),
            midi_program: p,
            velocity: v.map(|i| Dynamics::ALL[i]),
        })
}

fn score() -> impl Strategy<Value = AbcScore> {
    (headers(), 1usize..=3, 1usize..=6)
        .prop_flat_map(|(h, voices, measures)| {
            (
                Just(h),
                prop::collection::vec(prop::collection::vec(measure(), measures..=measures), voices..=voices),
            )
        })
        .prop_map(|(headers, voices)| {
            let many = voices.len() > 1;
            let mut score = AbcScore {
                headers,
                voices: voices
                    .into_iter()
                    .enumerate()
                    .map(|(i, measures)| {
                        let mut v = Voice::new(measures);
                        if many {
                            v.id = format!("{}", i + 1);
                        }
                        v
                    })
                    .collect(),
                source_text: None,
            };
            score.reindex();
            score
        })
}

/// Sum on a fixed common denominator, independent of the rational type.
fn integer_sum(m: &Measure) -> (i64, i64) {
    const COMMON: i64 = 24;
    let total: i64 = m
        .events
        .iter()
        .map(|e| e.duration.numer() * (COMMON / e.duration.denom()))
        .sum();
    (total, COMMON)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn beat_sums_are_exact(m in measure()) {
        let (n, d) = integer_sum(&m);
        prop_assert_eq!(m.beats(), Rational::new(n, d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn serialize_then_parse_is_a_fixed_point(s in score()) {
        let text = serialize_abc(&s);
        let parsed = parse_abc(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &s, "{}", text);
        prop_assert_eq!(serialize_abc(&parsed), text);
    }
}
