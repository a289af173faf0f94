use overrow_core::crsf::*;
use proptest::prelude::*;

fn channels() -> impl Strategy<Value = [u16; NUM_CHANNELS]> {
    proptest::array::uniform16(CHANNEL_MIN..=CHANNEL_MAX)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn garbage_between_frames_never_corrupts(
        frames in proptest::collection::vec((channels(), proptest::collection::vec(any::<u8>(), 0..40)), 1..30),
        chunk in 1usize..64,
    ) {
        let mut stream = Vec::new();
        let mut sent = Vec::new();
        for (ch, garbage) in &frames {
            stream.extend_from_slice(garbage);
            stream.extend(encode_rc_channels(ch).unwrap());
            sent.push(*ch);
        }
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        let mut accidental = 0;
        for piece in stream.chunks(chunk) {
            dec.push(piece);
            while let Some(f) = dec.next_frame() {
                match f.rc_channels() {
                    Some(ch) if f.payload.len() == RC_PAYLOAD_LEN => got.push(ch),
                    _ => accidental += 1,
                }
            }
        }
        while let Some(f) = dec.next_frame_at_end() {
            match f.rc_channels() {
                Some(ch) if f.payload.len() == RC_PAYLOAD_LEN => got.push(ch),
                _ => accidental += 1,
            }
        }
        // every decoded channel set was sent, in order
        let mut it = sent.iter();
        for g in &got {
            prop_assert!(it.any(|s| s == g));
        }
        // a garbage frame that happens to pass its CRC can swallow at most two real ones
        prop_assert!(sent.len() - got.len() <= 2 * accidental);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let mut link = LinkState::new(DEFAULT_FAILSAFE_MS);
        link.ingest(&bytes, 0);
        let s = link.snapshot(0);
        prop_assert!(s.channels.iter().all(|&c| (CHANNEL_MIN..=CHANNEL_MAX).contains(&c)));
        let _ = parse_frame(&bytes);
    }

    #[test]
    fn valid_frame_round_trips(ch in channels()) {
        let bytes = encode_rc_channels(&ch).unwrap();
        prop_assert_eq!(bytes.len(), 26);
        let (frame, used) = parse_frame(&bytes).unwrap();
        prop_assert_eq!(used, 26);
        prop_assert_eq!(frame.rc_channels(), Some(ch));
    }
}
