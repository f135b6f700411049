import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emonoise.audio import AudioClip, AudioError, measure
from emonoise.synth.alignment import Alignment, AlignmentError, Phone, Word, excise, load_alignment, save_alignment
from emonoise.synth.transforms import (
    EventBank,
    EventBankError,
    SegmentTooLongError,
    SynthContext,
    SynthError,
    SynthSpec,
    append_event,
    apply_synth,
    drop_letters,
    drop_words,
    fade,
    insert_filler,
    match_drop_letters,
    reverberate,
    speed_segment,
    speed_utterance,
    synthetic_rir,
)
from emonoise.synth.tsm import pitch_shift, wsola

from conftest import SR, noise_clip, tone


def dominant_freq(x, sr=SR):
    """Peak of a zero-padded, Hann-windowed spectrum with parabolic refinement."""
    n = 8 * len(x)
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1 : k + 2])
    k = k + 0.5 * (a - c) / (a - 2 * b + c)
    return k * sr / n


# ------------------------------------------------------------ time-scale


@pytest.mark.parametrize("rate", [1.25, 0.75, 1.1, 0.9])
def test_wsola_length_and_pitch(rate):
    x = tone(440.0, 2.0).samples
    y = wsola(x, rate, SR)
    assert len(y) == round(len(x) / rate)
    assert dominant_freq(y) == pytest.approx(440.0, rel=0.01)


def test_wsola_identity_at_rate_one():
    x = noise_clip(dur=0.3).samples
    np.testing.assert_array_equal(wsola(x, 1.0, SR), x)


@pytest.mark.parametrize("ratio,expected", [(1.25, 550.0), (0.75, 330.0)])
def test_pitch_shift_moves_sine(ratio, expected):
    clip = tone(440.0, 1.0)
    out = pitch_shift(clip, ratio)
    assert len(out) == len(clip)
    assert dominant_freq(out.samples) == pytest.approx(expected, rel=0.02)


# ------------------------------------------------------------ speed


@pytest.mark.parametrize("rate", [1.25, 0.75])
def test_speed_utterance_duration(rate):
    clip = tone(200.0, 3.0)
    out = speed_utterance(clip, rate)
    assert out.duration == pytest.approx(clip.duration / rate, abs=0.010)


@settings(max_examples=15, deadline=None)
@given(dur=st.floats(0.5, 4.0), fraction=st.floats(0.05, 0.25), seed=st.integers(0, 1000))
def test_speed_segment_duration(dur, fraction, seed):
    clip = noise_clip(seed=seed, dur=dur)
    out = speed_segment(clip, 1.25, fraction, seed)
    seg = fraction * clip.duration
    assert out.duration == pytest.approx(clip.duration - seg + seg / 1.25, abs=0.010)


def test_speed_segment_limits():
    clip = noise_clip(dur=2.0)
    with pytest.raises(SegmentTooLongError, match="25%"):
        speed_segment(clip, 1.25, 0.3)
    with pytest.raises(SegmentTooLongError):
        SynthSpec("SpeedSeg", {"fraction": 0.26})
    with pytest.raises(AudioError):
        speed_segment(noise_clip(dur=0.3), 1.25, 0.2)


def test_speed_segment_seeded():
    clip = noise_clip(dur=1.5)
    a, b = speed_segment(clip, seed=3), speed_segment(clip, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)


# ------------------------------------------------------------ fades


@pytest.mark.parametrize("t", [0.0, 1.0, 2.5, 4.0, 4.99])
def test_fade_out_profile(t):
    clip = AudioClip(np.full(5 * SR, 0.5), SR)
    out = fade(clip, "out")
    i = int(t * SR)
    assert out.samples[i] / 0.5 == pytest.approx(1 - 0.02 * i / SR, abs=1e-3)


@pytest.mark.parametrize("t", [0.0, 2.0, 4.99])
def test_fade_in_profile(t):
    clip = AudioClip(np.full(5 * SR, 0.5), SR)
    out = fade(clip, "in")
    i = int(t * SR)
    assert out.samples[i] / 0.5 == pytest.approx(1 - 0.02 * (5.0 - i / SR), abs=1e-3)


def test_fade_floors_at_zero():
    clip = AudioClip(np.ones(60 * SR) * 0.1, SR)
    assert fade(clip, "out").samples[-1] == 0.0


# ------------------------------------------------------------ reverb


def test_reverb_unit_impulse_is_identity():
    clip = noise_clip(dur=0.5)
    rir = AudioClip(np.array([1.0]), SR)
    np.testing.assert_allclose(reverberate(clip, rir=rir).samples, clip.samples, atol=1e-12)


def test_reverb_two_tap_echo():
    clip = noise_clip(dur=0.5, amp=0.05)
    d = 800
    h = np.zeros(d + 1)
    h[0], h[d] = 1.0, 0.5
    out = reverberate(clip, rir=AudioClip(h, SR)).samples
    x = clip.samples
    expected = x.copy()
    expected[d:] += 0.5 * x[:-d]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_synthetic_rir_decay():
    rir = synthetic_rir(SR, 0.5, seed=1)
    assert rir.samples[0] == 1.0
    tail = rir.samples[1:]
    early = np.mean(tail[: SR // 20] ** 2)
    late = np.mean(tail[int(0.45 * SR) : int(0.5 * SR)] ** 2)
    # 60 dB per rt60, about 54 dB over 0.45 s
    assert 10 * np.log10(early / late) == pytest.approx(54, abs=6)


def test_reverb_keeps_length_and_rejects_bad_rt60():
    clip = noise_clip(dur=0.4)
    assert len(reverberate(clip, 0.3)) == len(clip)
    with pytest.raises(SynthError):
        reverberate(clip, 0.0)


# ------------------------------------------------------------ events & fillers


def _alignment():
    words = (Word("so", 0.10, 0.30), Word("i", 0.35, 0.45), Word("went", 0.50, 0.80), Word("the", 0.85, 1.00),
             Word("store", 1.05, 1.40))
    return Alignment(words)


def test_append_event_level_matched():
    clip = tone(dur=1.0, amp=0.1)
    laugh = noise_clip(seed=2, dur=0.5, amp=0.3)
    out = append_event(clip, EventBank(laughs=(laugh,)), "Laugh", seed=0)
    xf = int(0.010 * SR)
    assert len(out) == len(clip) + len(laugh) - xf
    tail = out.samples[len(clip) :]
    assert measure(tail).rms == pytest.approx(measure(clip).rms, rel=0.1)
    with pytest.raises(EventBankError):
        append_event(clip, EventBank(), "Cry")


@pytest.mark.parametrize("mode,extra", [("S", 0.0), ("L", 1.0)])
def test_insert_filler_shifts_alignment(mode, extra):
    clip = noise_clip(dur=1.5)
    filler = noise_clip(seed=7, dur=0.3)
    bank = EventBank(fillers={"spk": (filler,)})
    out, al = insert_filler(clip, _alignment(), bank, "spk", mode, seed=1)
    added = 0.3 + extra
    assert out.duration == pytest.approx(clip.duration + added, abs=1e-3)
    assert len(al.words) == 5
    moved = [b.start - a.start for a, b in zip(_alignment().words, al.words)]
    assert moved[0] == 0.0 and moved[-1] == pytest.approx(added, abs=1e-3)
    al.validate(out.duration)


def test_insert_filler_needs_same_speaker():
    bank = EventBank(fillers={"other": (noise_clip(dur=0.2),)})
    with pytest.raises(EventBankError, match="spk"):
        insert_filler(noise_clip(dur=1.5), _alignment(), bank, "spk")


def test_drop_words_removes_listed_words():
    clip = noise_clip(dur=1.5)
    out, al = drop_words(clip, _alignment())
    assert [w.token for w in al.words] == ["i", "went", "store"]
    removed = (0.30 - 0.10) + (1.00 - 0.85)
    assert out.duration == pytest.approx(clip.duration - removed, abs=2 / SR)
    al.validate(out.duration)


def _phone_alignment():
    # "hand grip" / "eating"
    words = (Word("hand", 0.0, 0.4), Word("grip", 0.4, 0.7), Word("eating", 0.7, 1.2))
    labels = [("HH", 0), ("AE1", 0), ("N", 0), ("D", 0), ("G", 1), ("R", 1), ("IH1", 1), ("P", 1),
              ("IY1", 2), ("T", 2), ("IH0", 2), ("NG", 2)]
    t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.55, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2]
    phones = tuple(Phone(p, t[i], t[i + 1] if i + 1 < len(labels) else 1.2, w) for i, (p, w) in enumerate(labels))
    phones = phones[:-1] + (Phone("NG", 1.0, 1.2, 2),)
    return Alignment(words, phones)


def test_drop_letter_rules():
    al = _phone_alignment()
    hits = match_drop_letters(al)
    assert hits == {0: "h+vowel", 3: "vowel+nd+consonant", 11: "ihng"}
    out, new_al, report = drop_letters(noise_clip(dur=1.2), al)
    assert report.total == 3
    assert len(new_al.phones) == len(al.phones) - 3
    assert out.duration < 1.2


def test_drop_letters_needs_phones():
    with pytest.raises(AlignmentError):
        drop_letters(noise_clip(dur=1.5), _alignment())


# ------------------------------------------------------------ alignment


def test_alignment_roundtrip(tmp_path):
    al = _phone_alignment()
    save_alignment(al, tmp_path / "a.json")
    assert load_alignment(tmp_path / "a.json") == al


def test_alignment_validation():
    bad = Alignment((Word("a", 0.5, 0.4),))
    with pytest.raises(AlignmentError):
        bad.validate()
    with pytest.raises(AlignmentError):
        Alignment((Word("a", 0.0, 2.0),)).validate(duration=1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.9), st.floats(0.001, 0.1)), min_size=1, max_size=4))
def test_excise_removes_exact_sample_count(cuts):
    clip = noise_clip(dur=1.0)
    intervals = [(a, min(1.0, a + w)) for a, w in cuts]
    out, tmap = excise(clip, intervals)
    removed = sum(b - a for a, b in tmap.cuts)
    assert len(out) == len(clip) - removed
    assert tmap(1.0) == pytest.approx(len(out) / SR)


# ------------------------------------------------------------ spec & dispatch


def test_spec_variants_and_guards():
    assert SynthSpec("SpeedUtt", {"rate": 0.75}).variant == "SpeedUtt(0.75x)"
    with pytest.raises(SynthError):
        SynthSpec("SpeedUtt", {"rate": 1.1})
    assert SynthSpec("SpeedUtt", {"rate": 1.1}, override=True).param("rate") == 1.1
    with pytest.raises(SynthError):
        SynthSpec("Wobble")


def test_apply_synth_dispatch_needs_context():
    clip = noise_clip(dur=1.0)
    with pytest.raises(AlignmentError):
        apply_synth(clip, SynthSpec("DropW"))
    with pytest.raises(EventBankError):
        apply_synth(clip, SynthSpec("Laugh"))
    out = apply_synth(clip, SynthSpec("DropW"), SynthContext(alignment=Alignment((Word("the", 0.1, 0.3),))))
    assert out.duration == pytest.approx(0.8, abs=2 / SR)
