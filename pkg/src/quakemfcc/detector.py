"""Real-time detection: ring buffer, windowed classification, alarm latency
accounting, the telemetry packet codec and a timed replay source."""
from __future__ import annotations

import json
import logging
import math
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional

import numpy as np

from .features import FeatureConfig, build_filterbank, extract_features, prepare_window
from .nn.model import Model
from .waveform import PCM_SCALE, Waveform, quantize

log = logging.getLogger(__name__)

LABEL_NAMES = ("non_earthquake", "earthquake")

# ---------------------------------------------------------------------------
# wire protocol

PACKET_MAGIC = b"QUKE"
PACKET_VERSION = 1
_HEADER = struct.Struct("<4sBIIH")
_CRC = struct.Struct("<I")
MAX_PACKET_SAMPLES = 256


class PacketError(ValueError):
    pass


class BadMagicError(PacketError):
    pass


class CrcMismatchError(PacketError):
    pass


class TruncatedPacketError(PacketError):
    pass


class UnsupportedVersionError(PacketError):
    pass


class StreamIntegrityError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TelemetryPacket:
    seq: int
    sample_rate: int
    samples: np.ndarray  # int16
    version: int = PACKET_VERSION

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.int16).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, TelemetryPacket):
            return NotImplemented
        return (self.seq, self.sample_rate, self.version) == (other.seq, other.sample_rate, other.version) \
            and np.array_equal(self.samples, other.samples)


def encode_packet(p: TelemetryPacket) -> bytes:
    n = p.samples.size
    if n < 1:
        raise PacketError("packet must carry at least one sample")
    if n > 0xFFFF:
        raise PacketError("too many samples for one packet")
    if not 0 <= p.seq <= 0xFFFFFFFF or not 0 < p.sample_rate <= 0xFFFFFFFF:
        raise PacketError("seq or sample_rate out of range for 32 bits")
    body = _HEADER.pack(PACKET_MAGIC, p.version, p.seq, p.sample_rate, n) + p.samples.astype("<i2").tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode_packet(data: bytes) -> TelemetryPacket:
    data = bytes(data)
    if len(data) < _HEADER.size + 2 + _CRC.size:
        raise TruncatedPacketError(f"packet of {len(data)} bytes is shorter than the minimum")
    magic, version, seq, rate, count = _HEADER.unpack_from(data)
    if magic != PACKET_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    expected = _HEADER.size + 2 * count + _CRC.size
    if len(data) < expected:
        raise TruncatedPacketError(f"packet declares {count} samples but holds {len(data)} bytes")
    if len(data) > expected:
        raise CrcMismatchError(f"{len(data) - expected} unexpected trailing bytes")
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(data[:expected - _CRC.size]) != crc:
        raise CrcMismatchError("CRC-32 mismatch")
    if version != PACKET_VERSION:
        raise UnsupportedVersionError(f"unsupported packet version {version}")
    if count < 1:
        raise PacketError("packet carries no samples")
    samples = np.frombuffer(data, "<i2", count=count, offset=_HEADER.size).astype(np.int16)
    return TelemetryPacket(seq, rate, samples, version)


def packetize(w: Waveform, packet_size: int = MAX_PACKET_SAMPLES, first_seq: int = 0) -> list[TelemetryPacket]:
    if len(w) == 0:
        raise ValueError("cannot packetize an empty waveform")
    if not 1 <= packet_size <= MAX_PACKET_SAMPLES:
        raise ValueError(f"packet_size must be in 1..{MAX_PACKET_SAMPLES}")
    pcm = quantize(w.samples)
    return [
        TelemetryPacket(first_seq + k, w.sample_rate, pcm[i:i + packet_size])
        for k, i in enumerate(range(0, pcm.size, packet_size))
    ]


def replay_source(w: Waveform, speed: float = 1.0, packet_size: int = MAX_PACKET_SAMPLES,
                  clock=time.perf_counter, sleep=time.sleep) -> Iterator[TelemetryPacket]:
    """Yield packets paced so that stream time tracks waveform time / speed.

    Each packet is released when its last sample would have been acquired.
    ``speed=math.inf`` replays as fast as possible.
    """
    if not speed > 0:
        raise ValueError("speed must be positive")
    packets = packetize(w, packet_size)
    t0 = clock()
    end = 0
    for p in packets:
        end += p.samples.size
        if math.isfinite(speed):
            delay = t0 + end / w.sample_rate / speed - clock()
            if delay > 0:
                sleep(delay)
        yield p


# ---------------------------------------------------------------------------
# streaming detector

@dataclass(frozen=True)
class AlarmEvent:
    label: str
    probability: float
    trigger_sample_index: int
    gather_ms: float
    process_ms: float
    predict_ms: float
    total_ms: float
    timestamp: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class Evaluation:
    end_index: int  # exclusive end of the analysis window
    label: int
    probability: float


class StreamBuffer:
    """Fixed-capacity ring of the most recent samples and their acquisition times."""

    def __init__(self, capacity: int, sample_rate: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.sample_rate = sample_rate
        self._data = np.zeros(capacity)
        self._times = np.zeros(capacity)
        self.total = 0

    def append(self, samples: np.ndarray, times: np.ndarray) -> None:
        n = samples.size
        if n > self.capacity:
            samples, times = samples[-self.capacity:], times[-self.capacity:]
        idx = (self.total + np.arange(n - samples.size, n)) % self.capacity
        self._data[idx] = samples
        self._times[idx] = times
        self.total += n

    def last(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if n > min(self.total, self.capacity):
            raise ValueError(f"only {min(self.total, self.capacity)} samples buffered, need {n}")
        idx = (self.total - n + np.arange(n)) % self.capacity
        return self._data[idx], self._times[idx]


class StreamingDetector:
    """Classify each completed analysis window of a sample stream.

    Windows are non-overlapping by default (``hop_s = window_s``). No window is
    evaluated before ``min_buffer_s`` of signal has been gathered. An alarm is
    raised when the model says earthquake with probability >= ``alarm_threshold``.
    """

    def __init__(self, model: Model, feature_config: FeatureConfig, window_s: float = 0.2,
                 min_buffer_s: float = 1.28, hop_s: Optional[float] = None,
                 alarm_threshold: float = 0.5, kind: str = "mfcc", clock=time.perf_counter):
        self.model = model
        self.config = feature_config
        self.rate = feature_config.sample_rate
        self.window = int(round(window_s * self.rate))
        self.hop = int(round((hop_s or window_s) * self.rate))
        if self.window < feature_config.frame_length or self.hop < 1:
            raise ValueError("window shorter than one frame or hop shorter than one sample")
        self.warmup = int(round(min_buffer_s * self.rate))
        self.alarm_threshold = alarm_threshold
        self.kind = kind
        self.clock = clock
        self.buffer = StreamBuffer(self.window, self.rate)
        self.filterbank = build_filterbank(feature_config)
        self.next_end = self.window
        self.evaluations: list[Evaluation] = []

    @classmethod
    def from_model(cls, model: Model, **kw) -> "StreamingDetector":
        meta = model.meta
        if "feature_config" not in meta:
            raise ValueError("model file carries no feature configuration")
        kw.setdefault("window_s", meta.get("window_s", 0.2))
        kw.setdefault("kind", meta.get("feature_kind", "mfcc"))
        return cls(model, FeatureConfig.from_dict(meta["feature_config"]), **kw)

    def push_samples(self, samples, sample_rate: Optional[int] = None,
                     arrival_time: Optional[float] = None) -> list[AlarmEvent]:
        if sample_rate is not None and sample_rate != self.rate:
            raise ValueError(f"samples at {sample_rate} Hz fed to a {self.rate} Hz detector")
        x = np.asarray(samples, dtype=np.float64).reshape(-1)
        if arrival_time is None:
            arrival_time = self.clock()
        # the chunk's last sample is taken to be acquired on arrival
        times = arrival_time - (x.size - 1 - np.arange(x.size)) / self.rate
        events = []
        pos = 0
        while pos < x.size:
            take = min(x.size - pos, self.next_end - self.buffer.total)
            self.buffer.append(x[pos:pos + take], times[pos:pos + take])
            pos += take
            if self.buffer.total == self.next_end:
                if self.next_end >= self.warmup:
                    ev = self._evaluate()
                    if ev is not None:
                        events.append(ev)
                self.next_end += self.hop
        return events

    def _evaluate(self) -> Optional[AlarmEvent]:
        samples, times = self.buffer.last(self.window)
        t_start = self.clock()
        w = prepare_window(Waveform(samples, self.rate))
        feats = extract_features(w, self.config, self.kind, self.filterbank).values
        t_feat = self.clock()
        probs = self.model.predict_proba(feats)
        t_pred = self.clock()
        label = int(np.argmax(probs))
        prob = float(probs[label])
        self.evaluations.append(Evaluation(self.buffer.total, label, prob))
        if label != 1 or prob < self.alarm_threshold:
            return None
        gather = (t_start - times[0]) * 1000.0
        process = (t_feat - t_start) * 1000.0
        predict = (t_pred - t_feat) * 1000.0
        return AlarmEvent(
            LABEL_NAMES[label], prob, self.buffer.total - 1,
            gather, process, predict, gather + process + predict,
            datetime.now(timezone.utc).isoformat(timespec="milliseconds"),
        )


def batch_classify(model: Model, w: Waveform, feature_config: FeatureConfig, window_s: float = 0.2,
                   min_buffer_s: float = 1.28, hop_s: Optional[float] = None,
                   kind: str = "mfcc") -> list[Evaluation]:
    """Classify the same windows a StreamingDetector would, in one pass."""
    rate = feature_config.sample_rate
    if w.sample_rate != rate:
        raise ValueError("waveform rate does not match the feature config")
    n = int(round(window_s * rate))
    hop = int(round((hop_s or window_s) * rate))
    warmup = int(round(min_buffer_s * rate))
    fb = build_filterbank(feature_config)
    ends = [e for e in range(n, len(w) + 1, hop) if e >= warmup]
    if not ends:
        return []
    feats = np.stack([
        extract_features(prepare_window(Waveform(w.samples[e - n:e], rate)), feature_config, kind, fb).values
        for e in ends
    ])
    probs = model.predict_proba(feats)
    return [Evaluation(e, int(np.argmax(p)), float(p.max())) for e, p in zip(ends, probs)]


# ---------------------------------------------------------------------------
# receive side

@dataclass
class ReceiveStats:
    packets: int = 0
    samples: int = 0
    duplicates: int = 0
    out_of_order: int = 0
    gaps: int = 0
    missing_packets: int = 0
    corrupt: int = 0
    alarms: int = 0

    @property
    def dropped(self) -> int:
        return self.duplicates + self.out_of_order


def receive_loop(stream: Iterable, detector: StreamingDetector, stats: Optional[ReceiveStats] = None,
                 max_corrupt: int = 10) -> Iterator[AlarmEvent]:
    """Feed packets (decoded or raw bytes) to ``detector`` and yield its alarms.

    Duplicate and out-of-order packets are dropped and counted; gaps are logged.
    ``max_corrupt`` consecutive undecodable packets raise StreamIntegrityError.
    """
    stats = stats if stats is not None else ReceiveStats()
    last_seq = None
    corrupt_run = 0
    for item in stream:
        if isinstance(item, (bytes, bytearray, memoryview)):
            try:
                packet = decode_packet(item)
            except PacketError as exc:
                stats.corrupt += 1
                corrupt_run += 1
                log.warning("dropping corrupt packet: %s", exc)
                if corrupt_run >= max_corrupt:
                    raise StreamIntegrityError(
                        f"{corrupt_run} consecutive corrupt packets ({stats.corrupt} total)") from exc
                continue
        else:
            packet = item
        corrupt_run = 0
        if last_seq is not None and packet.seq <= last_seq:
            if packet.seq == last_seq:
                stats.duplicates += 1
            else:
                stats.out_of_order += 1
            continue
        if last_seq is not None and packet.seq > last_seq + 1:
            stats.gaps += 1
            stats.missing_packets += packet.seq - last_seq - 1
            log.warning("gap of %d packets before seq %d", packet.seq - last_seq - 1, packet.seq)
        last_seq = packet.seq
        stats.packets += 1
        stats.samples += packet.samples.size
        for ev in detector.push_samples(packet.samples / PCM_SCALE, packet.sample_rate):
            stats.alarms += 1
            yield ev


def udp_datagrams(sock: socket.socket, idle_timeout: float = 2.0,
                  stop: Optional[threading.Event] = None) -> Iterator[bytes]:
    """Yield datagrams received by a reader thread until the link goes idle.

    The reader thread only moves bytes into a queue, so slow evaluation never
    stalls the socket.
    """
    q: "queue.Queue[Optional[bytes]]" = queue.Queue()
    stop = stop or threading.Event()

    def reader():
        sock.settimeout(0.05)
        last = time.monotonic()
        try:
            while not stop.is_set():
                try:
                    data = sock.recv(65535)
                except socket.timeout:
                    if time.monotonic() - last > idle_timeout:
                        break
                    continue
                last = time.monotonic()
                q.put(data)
        finally:
            q.put(None)

    thread = threading.Thread(target=reader, name="udp-reader", daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is None:
                return
            yield item
    finally:
        stop.set()
        thread.join()


def send_udp(packets: Iterable[TelemetryPacket], dest: tuple[str, int]) -> int:
    n = 0
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        for p in packets:
            sock.sendto(encode_packet(p), dest)
            n += 1
    return n


@dataclass
class AlarmLog:
    """Newline-delimited JSON alarm records, flushed per event."""

    fh: object
    count: int = field(default=0)

    def write(self, ev: AlarmEvent) -> None:
        self.fh.write(ev.to_json() + "\n")
        self.fh.flush()
        self.count += 1


class ReplayClock:
    """Clock for offline replay.

    Reads as the stream time of the most recent arrival plus the real time
    spent since, so gather time follows the signal while process and predict
    times stay measured.
    """

    def __init__(self, real=time.perf_counter):
        self._real = real
        self._base = 0.0
        self._anchor = real()

    def arrive(self, stream_time: float) -> float:
        self._base = stream_time
        self._anchor = self._real()
        return stream_time

    def __call__(self) -> float:
        return self._base + (self._real() - self._anchor)


def simulate_realtime(detector: StreamingDetector, w: Waveform,
                      packet_size: int = MAX_PACKET_SAMPLES) -> list[AlarmEvent]:
    """Push ``w`` packet by packet as if it arrived live, without sleeping.

    ``detector`` must have been built with a ReplayClock.
    """
    clock = detector.clock
    if not isinstance(clock, ReplayClock):
        raise TypeError("simulate_realtime needs a detector driven by a ReplayClock")
    events = []
    end = 0
    for p in packetize(w, packet_size):
        end += p.samples.size
        arrival = clock.arrive(end / w.sample_rate)
        events.extend(detector.push_samples(p.samples / PCM_SCALE, p.sample_rate, arrival))
    return events
