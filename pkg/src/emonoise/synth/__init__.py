from .alignment import Alignment, AlignmentError, Phone, TimeMap, Word, excise, load_alignment, save_alignment
from .transforms import (
    SYNTH_KINDS,
    EventBank,
    EventBankError,
    SegmentTooLongError,
    SynthContext,
    SynthError,
    SynthSpec,
    apply_synth,
    load_event_bank,
)
from .tsm import pitch_shift, time_stretch, wsola

__all__ = [
    "SYNTH_KINDS",
    "Alignment",
    "AlignmentError",
    "EventBank",
    "EventBankError",
    "Phone",
    "SegmentTooLongError",
    "SynthContext",
    "SynthError",
    "SynthSpec",
    "TimeMap",
    "Word",
    "apply_synth",
    "excise",
    "load_alignment",
    "load_event_bank",
    "pitch_shift",
    "save_alignment",
    "time_stretch",
    "wsola",
]
