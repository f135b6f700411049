"""
Black-box classifier handles.

Every handle counts its ``classify`` calls in ``query_counter``; the count
is taken before the call is attempted, so timeouts and transport failures
still spend a query.

Wire protocols:

* command: the handle starts the command once and writes one JSON object
  per line to its stdin, ``{"id": <int>, "wav_path": <str>}``; the process
  answers each with one line ``{"id": <int>, "activation": <bin>,
  "valence": <bin>}``.
* http: ``POST <url>/classify`` with the WAV bytes as the body
  (``Content-Type: audio/wav``); the JSON response is
  ``{"activation": <bin>, "valence": <bin>}``.

Bins are ``"low"``, ``"mid"`` or ``"high"``.
"""

from __future__ import annotations

import io
import json
import os
import queue
import socket
import subprocess
import tempfile
import threading
import urllib.error
import urllib.request
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.io import wavfile

from ..audio import AudioClip, encode_pcm16, write_wav
from ..features import SpeakerStats, apply_znorm, extract_mfb, pooled_stats
from .labels import AXES, EmotionLabel, LabelError
from .model import ReferenceModel, pool_features


class ClassifierError(RuntimeError):
    """Transport-level failure; distinct from any classification output."""


class ClassifierTimeout(ClassifierError):
    pass


class ClassifierProtocolError(ClassifierError):
    pass


class ClassifierHandle:
    kind = "abstract"

    def __init__(self, target_axis: str = "activation", timeout: float = 30.0):
        if target_axis not in AXES:
            raise ValueError(f"target_axis must be one of {AXES}")
        self.target_axis = target_axis
        self.timeout = timeout
        self._count = 0
        self._count_lock = threading.Lock()

    @property
    def query_counter(self) -> int:
        return self._count

    def classify(self, clip: AudioClip, speaker: str | None = None) -> EmotionLabel:
        with self._count_lock:
            self._count += 1
        return self._classify(clip, speaker)

    def decision(self, clip: AudioClip, speaker: str | None = None) -> str:
        """The label on ``target_axis``."""
        return self.classify(clip, speaker).axis(self.target_axis)

    def _classify(self, clip: AudioClip, speaker: str | None) -> EmotionLabel:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def featurize(clip: AudioClip, stats: SpeakerStats) -> np.ndarray:
    return pool_features(apply_znorm(extract_mfb(clip), stats))


class ReferenceHandle(ClassifierHandle):
    """In-process :class:`ReferenceModel` with per-speaker normalization.

    Clips from speakers without statistics are normalized with the average
    of the known speakers' statistics.
    """

    kind = "reference"

    def __init__(
        self,
        model: ReferenceModel,
        stats: Mapping[str, SpeakerStats],
        target_axis: str = "activation",
        timeout: float = 30.0,
    ):
        super().__init__(target_axis, timeout)
        self.model = model
        self.stats = dict(stats)
        self._fallback = pooled_stats(self.stats)

    def _classify(self, clip, speaker):
        st = self.stats.get(speaker, self._fallback) if speaker is not None else self._fallback
        return self.model.predict_labels(featurize(clip, st)[None, :])[0]


class CallableHandle(ClassifierHandle):
    """Wraps ``fn(clip) -> EmotionLabel``; used for oracle models in tests and experiments."""

    kind = "callable"

    def __init__(self, fn: Callable[[AudioClip], EmotionLabel], target_axis: str = "activation", timeout: float = 30.0):
        super().__init__(target_axis, timeout)
        self.fn = fn

    def _classify(self, clip, speaker):
        return self.fn(clip)


def parse_response(payload: object, expect_id: int | None = None) -> EmotionLabel:
    if not isinstance(payload, dict):
        raise ClassifierProtocolError(f"response is not a JSON object: {payload!r}")
    if expect_id is not None and payload.get("id") != expect_id:
        raise ClassifierProtocolError(f"response id {payload.get('id')!r} does not match request {expect_id}")
    try:
        return EmotionLabel(payload["activation"], payload["valence"])
    except KeyError as exc:
        raise ClassifierProtocolError(f"response missing field {exc.args[0]!r}") from None
    except LabelError as exc:
        raise ClassifierProtocolError(str(exc)) from None


def wav_bytes(clip: AudioClip) -> bytes:
    buf = io.BytesIO()
    wavfile.write(buf, clip.sample_rate, encode_pcm16(clip.samples))
    return buf.getvalue()


class CommandHandle(ClassifierHandle):
    """Long-running subprocess speaking newline-delimited JSON on stdio."""

    kind = "command"

    def __init__(
        self,
        command: Sequence[str],
        target_axis: str = "activation",
        timeout: float = 30.0,
        workdir: str | None = None,
    ):
        super().__init__(target_axis, timeout)
        if not command:
            raise ValueError("command handle needs a non-empty command line")
        self.command = list(command)
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._io_lock = threading.Lock()
        self._next_id = 0
        self._tmpdir = tempfile.TemporaryDirectory(prefix="emonoise-cmd-", dir=workdir)

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        lines: queue.Queue = queue.Queue()
        self._lines = lines
        proc = self._proc

        def pump():
            for line in proc.stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def _classify(self, clip, speaker):
        with self._io_lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            self._next_id += 1
            req_id = self._next_id
            path = os.path.join(self._tmpdir.name, f"q{req_id}.wav")
            write_wav(clip, path)
            try:
                self._proc.stdin.write(json.dumps({"id": req_id, "wav_path": path}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._kill()
                raise ClassifierError(f"classifier process is not accepting input: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self._kill()
                raise ClassifierTimeout(f"no response within {self.timeout}s") from None
            finally:
                os.unlink(path)
            if line is None:
                self._kill()
                raise ClassifierError("classifier process exited")
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ClassifierProtocolError(f"malformed response line {line!r}") from exc
            return parse_response(payload, req_id)

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                pass
            self._kill()
        self._tmpdir.cleanup()


class HttpHandle(ClassifierHandle):
    kind = "http"

    def __init__(self, url: str, target_axis: str = "activation", timeout: float = 30.0):
        super().__init__(target_axis, timeout)
        if not url:
            raise ValueError("http handle needs a URL")
        url = url.rstrip("/")
        self.url = url if url.endswith("/classify") else url + "/classify"

    def _classify(self, clip, speaker):
        req = urllib.request.Request(
            self.url, data=wav_bytes(clip), headers={"Content-Type": "audio/wav"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise ClassifierTimeout(f"no response from {self.url} within {self.timeout}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise ClassifierTimeout(f"no response from {self.url} within {self.timeout}s") from exc
            raise ClassifierError(f"request to {self.url} failed: {exc}") from exc
        try:
            payload = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ClassifierProtocolError(f"malformed response body {body[:200]!r}") from exc
        return parse_response(payload)


def serve_stdio(fn: Callable[[AudioClip], EmotionLabel], stdin=None, stdout=None) -> None:
    """Answer command-protocol requests with ``fn`` until stdin closes."""
    import sys

    from ..audio import read_wav

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        label = fn(read_wav(req["wav_path"]))
        stdout.write(json.dumps({"id": req["id"], "activation": label.activation, "valence": label.valence}) + "\n")
        stdout.flush()
