use super::{Channel, CorpusError, Ipu, IpuKind, VadSegment};

pub const DEFAULT_MERGE_GAP_MS: u64 = 160;

/// Merges each channel's segments into inter-pausal units. Overlapping
/// segments and segments separated by less than `merge_gap_ms` become one
/// unit. Output is sorted by start, then channel.
pub fn extract_ipus(segments: &[VadSegment], merge_gap_ms: u64) -> Result<Vec<Ipu>, CorpusError> {
    if let Some(bad) = segments.iter().find(|s| s.start_ms >= s.end_ms) {
        return Err(CorpusError::InvalidSegment { channel: bad.channel, start_ms: bad.start_ms, end_ms: bad.end_ms });
    }
    let mut out = Vec::new();
    for channel in [Channel::A, Channel::B] {
        let mut segs: Vec<&VadSegment> = segments.iter().filter(|s| s.channel == channel).collect();
        segs.sort_by_key(|s| (s.start_ms, s.end_ms));

        let mut texts: Vec<String> = Vec::new();
        let mut current: Option<Ipu> = None;
        for s in segs {
            match current.as_mut() {
                Some(ipu) if s.start_ms <= ipu.end_ms || s.start_ms - ipu.end_ms < merge_gap_ms => {
                    ipu.end_ms = ipu.end_ms.max(s.end_ms);
                    if ipu.source.is_none() {
                        ipu.source = s.source.clone();
                    }
                }
                _ => {
                    if let Some(mut done) = current.take() {
                        done.text = join(&mut texts);
                        out.push(done);
                    }
                    current = Some(Ipu {
                        channel,
                        start_ms: s.start_ms,
                        end_ms: s.end_ms,
                        text: None,
                        kind: IpuKind::TurnPart,
                        source: s.source.clone(),
                    });
                }
            }
            if let Some(t) = s.text.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
                texts.push(t.to_string());
            }
        }
        if let Some(mut done) = current {
            done.text = join(&mut texts);
            out.push(done);
        }
    }
    out.sort_by_key(|i| (i.start_ms, i.channel));
    Ok(out)
}

fn join(texts: &mut Vec<String>) -> Option<String> {
    let joined = texts.join(" ");
    texts.clear();
    (!joined.is_empty()).then_some(joined)
}

/// Union of half-open intervals, merging touching ones.
fn union(mut spans: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    spans.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Marks as backchannel every IPU lying entirely within the union of the
/// other channel's IPUs. Everything else becomes a turn part.
pub fn classify_backchannels(ipus: &[Ipu]) -> Vec<Ipu> {
    let cover = |ch: Channel| union(ipus.iter().filter(|i| i.channel == ch).map(|i| (i.start_ms, i.end_ms)).collect());
    let covers = [cover(Channel::A), cover(Channel::B)];
    ipus.iter()
        .map(|ipu| {
            let other = &covers[match ipu.channel.other() {
                Channel::A => 0,
                Channel::B => 1,
            }];
            let contained = other.iter().any(|&(s, e)| s <= ipu.start_ms && ipu.end_ms <= e);
            Ipu { kind: if contained { IpuKind::Backchannel } else { IpuKind::TurnPart }, ..ipu.clone() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(ch: Channel, s: u64, e: u64) -> VadSegment {
        VadSegment::new(ch, s, e)
    }

    fn spans(ipus: &[Ipu], ch: Channel) -> Vec<(u64, u64)> {
        ipus.iter().filter(|i| i.channel == ch).map(|i| (i.start_ms, i.end_ms)).collect()
    }

    #[test]
    fn merge_below_gap() {
        let ipus = extract_ipus(&[seg(Channel::A, 0, 1000), seg(Channel::A, 1100, 2000)], 160).unwrap();
        assert_eq!(spans(&ipus, Channel::A), vec![(0, 2000)]);
    }

    #[test]
    fn gap_of_exactly_160_splits() {
        let ipus = extract_ipus(&[seg(Channel::A, 0, 1000), seg(Channel::A, 1160, 2000)], 160).unwrap();
        assert_eq!(spans(&ipus, Channel::A), vec![(0, 1000), (1160, 2000)]);
    }

    #[test]
    fn invalid_segment() {
        assert!(matches!(extract_ipus(&[seg(Channel::B, 5, 5)], 160), Err(CorpusError::InvalidSegment { .. })));
    }

    #[test]
    fn texts_are_joined() {
        let mut a = seg(Channel::A, 0, 100);
        a.text = Some("hello".into());
        let mut b = seg(Channel::A, 150, 300);
        b.text = Some("there".into());
        let ipus = extract_ipus(&[b, a], 160).unwrap();
        assert_eq!(ipus[0].text.as_deref(), Some("hello there"));
    }

    #[test]
    fn contained_ipu_is_backchannel() {
        let ipus = extract_ipus(&[seg(Channel::A, 5000, 5400), seg(Channel::B, 4000, 8000)], 160).unwrap();
        let kinds = classify_backchannels(&ipus);
        let a = kinds.iter().find(|i| i.channel == Channel::A).unwrap();
        assert_eq!(a.kind, IpuKind::Backchannel);
        let b = kinds.iter().find(|i| i.channel == Channel::B).unwrap();
        assert_eq!(b.kind, IpuKind::TurnPart);
    }

    #[test]
    fn partial_overlap_is_turn_part() {
        let ipus = extract_ipus(&[seg(Channel::A, 5000, 9000), seg(Channel::B, 4000, 8000)], 160).unwrap();
        assert!(classify_backchannels(&ipus).iter().all(|i| i.kind == IpuKind::TurnPart));
    }

    fn layout() -> impl Strategy<Value = Vec<VadSegment>> {
        prop::collection::vec((any::<bool>(), 0u64..3000, 1u64..400), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(b, s, len)| seg(if b { Channel::B } else { Channel::A }, s, s + len))
                .collect()
        })
    }

    /// Per-millisecond occupancy, then runs separated by short gaps joined.
    fn brute_force_ipus(segs: &[VadSegment], ch: Channel, gap: u64) -> Vec<(u64, u64)> {
        let mut on = vec![false; 4000];
        for s in segs.iter().filter(|s| s.channel == ch) {
            for ms in s.start_ms..s.end_ms {
                on[ms as usize] = true;
            }
        }
        let mut runs: Vec<(u64, u64)> = Vec::new();
        let mut ms = 0;
        while ms < on.len() {
            if on[ms] {
                let start = ms;
                while ms < on.len() && on[ms] {
                    ms += 1;
                }
                runs.push((start as u64, ms as u64));
            } else {
                ms += 1;
            }
        }
        let mut merged: Vec<(u64, u64)> = Vec::new();
        for r in runs {
            match merged.last_mut() {
                Some(last) if r.0 - last.1 < gap => last.1 = r.1,
                _ => merged.push(r),
            }
        }
        merged
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_brute_force_union(segs in layout(), gap in 0u64..300) {
            let ipus = extract_ipus(&segs, gap).unwrap();
            for ch in [Channel::A, Channel::B] {
                prop_assert_eq!(spans(&ipus, ch), brute_force_ipus(&segs, ch, gap));
            }
        }

        #[test]
        fn extraction_is_idempotent(segs in layout()) {
            let once = extract_ipus(&segs, 160).unwrap();
            let again: Vec<VadSegment> = once.iter().map(VadSegment::from).collect();
            prop_assert_eq!(extract_ipus(&again, 160).unwrap(), once);
        }

        #[test]
        fn backchannels_match_containment_oracle(segs in layout()) {
            let ipus = extract_ipus(&segs, 160).unwrap();
            let classified = classify_backchannels(&ipus);
            for ipu in &classified {
                let mut covered = vec![false; 4000];
                for o in ipus.iter().filter(|o| o.channel != ipu.channel) {
                    for ms in o.start_ms..o.end_ms {
                        covered[ms as usize] = true;
                    }
                }
                let inside = (ipu.start_ms..ipu.end_ms).all(|ms| covered[ms as usize]);
                prop_assert_eq!(ipu.kind == IpuKind::Backchannel, inside);
            }
        }

        #[test]
        fn classification_is_symmetric_under_relabeling(segs in layout()) {
            let swapped: Vec<VadSegment> = segs.iter().map(|s| VadSegment { channel: s.channel.other(), ..s.clone() }).collect();
            let a = classify_backchannels(&extract_ipus(&segs, 160).unwrap());
            let b = classify_backchannels(&extract_ipus(&swapped, 160).unwrap());
            let key = |v: &[Ipu], flip: bool| {
                let mut k: Vec<_> = v
                    .iter()
                    .map(|i| (if flip { i.channel.other() } else { i.channel }, i.start_ms, i.end_ms, i.kind == IpuKind::Backchannel))
                    .collect();
                k.sort();
                k
            };
            prop_assert_eq!(key(&a, false), key(&b, true));
        }
    }
}
