"""Power-state machines: idle detectors, ready bits, setpm overrides, SRAM segments.

Timeline of one gate/wake round trip for a unit with wake-up delay ``d``::

    gate at g      OFF from g+d        wake request w        ready at max(w, g+d)+d
    |--ON power--|-------gated-------|----ON power (waking)---|

Gating and waking both take ``d`` cycles at ON power.  A request that
arrives while the unit is still powering down waits for the power-down to
finish and then for the full wake.  Transition energy is charged once per
gate event.

The per-cycle order used by the reference stepper (and reproduced in closed
form) is: complete a pending transition, gate if the idle counter reached
the threshold and nothing is waiting for the unit, then count activity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .chip import ceil_div

POLICIES = ("auto", "on", "off", "sleep")


class PolicyViolation(RuntimeError):
    """Work was issued to a unit that software turned off."""


@dataclass(frozen=True)
class GateEvent:
    cycle: int
    component: str
    from_mode: str
    to_mode: str
    cause: str  # idle | setpm | access


class UnitController:
    """One gateable unit (a VU, an SA as a whole, the HBM or ICI controller)."""

    def __init__(self, name: str, delay: int, threshold: int | None, policy: str = "auto",
                 gated_mode: str = "OFF"):
        self.name = name
        self.delay = delay
        self.threshold = threshold  # None disables idle detection
        self.policy = policy
        self.gated_mode = gated_mode
        self.busy_end = 0
        self.last_ready = 0
        self.gate_at: int | None = None
        self.wake_at: int | None = None
        self.regate = False  # gate again once the current wake completes
        self.acc_t = 0
        self.on_cycles = 0
        self.off_cycles = 0
        self.gates = 0
        self.events: list[GateEvent] = []

    # -- timeline helpers
    @property
    def off_start(self) -> int:
        return self.gate_at + self.delay

    @property
    def off_end(self) -> float:
        if self.wake_at is None:
            return float("inf")
        return max(self.off_start, self.wake_at)

    @property
    def ready_at(self) -> float:
        return self.off_end + self.delay if self.gate_at is not None else self.last_ready

    def _settle(self, t: int) -> None:
        if t <= self.acc_t:
            return
        a = self.acc_t
        if self.gate_at is None:
            self.on_cycles += t - a
        else:
            lo, hi = max(a, self.off_start), min(t, self.off_end)
            off = max(0, hi - lo)
            self.off_cycles += off
            self.on_cycles += (t - a) - off
        self.acc_t = t

    def _gate(self, g: int, cause: str) -> None:
        # no settle: cycles before g + delay count ON under the new gate too
        self.gate_at, self.wake_at = g, None
        self.gates += 1
        self.events.append(GateEvent(g, self.name, "ON", self.gated_mode, cause))

    def _wake(self, t: int, cause: str) -> None:
        self.wake_at = t
        self.events.append(GateEvent(t, self.name, self.gated_mode, "ON", cause))

    def advance_to(self, t: int) -> None:
        """Apply every autonomous transition that happens before cycle ``t``.

        An idle gate due exactly at ``t`` is left for later: whatever arrives
        at ``t`` (a request or a setpm) takes precedence over the detector.
        """
        if self.gate_at is not None and self.wake_at is not None and self.ready_at <= t:
            r = int(self.ready_at)
            self._settle(r)
            self.gate_at = self.wake_at = None
            self.last_ready = r
        if self.regate and self.gate_at is None and self.last_ready < t:
            self.regate = False
            self._gate(self.last_ready, "setpm")
        if self.gate_at is None and self.policy == "auto" and self.threshold is not None:
            g = max(self.busy_end + self.threshold, self.last_ready)
            if g < t:
                self._gate(g, "idle")
        self._settle(t)

    @property
    def gated(self) -> bool:
        return self.gate_at is not None and self.wake_at is None

    def request(self, t: int) -> int:
        """Ask for the unit at cycle ``t``; returns the cycle it is ready."""
        self.advance_to(t)
        if self.policy == "off":
            raise PolicyViolation(f"{self.name}: work issued at cycle {t} while software-off")
        if self.gated:
            self._wake(t, "access")
        if self.gate_at is not None:
            return int(self.ready_at)
        return t

    def occupy(self, start: int, end: int) -> None:
        """Mark the unit busy over [start, end)."""
        self.busy_end = max(self.busy_end, end)

    def access(self, t: int, duration: int) -> int:
        start = max(t, self.request(t))
        self.occupy(start, start + duration)
        return start

    def setpm(self, t: int, mode: str) -> None:
        self.advance_to(t)
        if mode == "sleep":
            raise ValueError(f"{self.name}: sleep is valid only for SRAM")
        if mode == "off":
            self.policy = "off"
            if self.gate_at is None:
                self.regate = False
                self._gate(t, "setpm")
            elif self.wake_at is not None:  # finish the wake, then power straight back down
                self.regate = True
        elif mode in ("on", "auto"):
            self.policy = mode
            self.regate = False
            if self.gated:
                self._wake(t, "setpm")
            if mode == "auto":
                self.busy_end = max(self.busy_end, t)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def finish(self, t: int) -> None:
        self.advance_to(t)
        self._settle(t)


def reconstruct_from_log(events: list[GateEvent], delay: int, run_cycles: int) -> tuple[int, int, int]:
    """(on, gated, gate count) rebuilt from a unit's event log alone."""
    off, gates = 0, 0
    g = None
    for e in events:
        if e.from_mode == "ON":
            g = e.cycle
            gates += 1
        else:
            off += max(0, min(e.cycle, run_cycles) - (g + delay)) if g + delay < e.cycle else 0
            g = None
    if g is not None:
        off += max(0, run_cycles - (g + delay))
    return run_cycles - off, off, gates


class TickUnit:
    """Per-cycle reference stepper with the same semantics as UnitController."""

    def __init__(self, delay: int, threshold: int | None, policy: str = "auto"):
        self.delay = delay
        self.threshold = threshold
        self.policy = policy
        self.mode = "ON"  # ON | GATING | OFF | WAKING
        self.until = 0  # end of pending transition
        self.wake_requested = False
        self.regate = False
        self.idle = 0
        self.busy_until = 0
        self.on_cycles = 0
        self.off_cycles = 0
        self.events: list[tuple[int, str]] = []

    def tick(self, c: int, pending: bool, setpm: str | None = None) -> bool:
        """Advance one cycle; returns True if a pending request is served at ``c``."""
        if self.mode == "GATING" and c >= self.until:
            if self.wake_requested:
                self.mode, self.until = "WAKING", c + self.delay
            else:
                self.mode = "OFF"
        if self.mode == "WAKING" and c >= self.until:
            self.mode = "ON"
            self.wake_requested = False
        if setpm is not None:
            if setpm == "off":
                self.policy = "off"
                if self.mode == "ON":
                    self._start_gate(c, "setpm")
                elif self.mode == "WAKING" or self.wake_requested:
                    self.regate = True
            else:
                self.policy = setpm
                self.regate = False
                if self.mode == "OFF":
                    self._start_wake(c, "setpm")
                elif self.mode == "GATING" and not self.wake_requested:
                    self.wake_requested = True
                    self.events.append((c, "wake", "setpm"))
                if setpm == "auto":
                    self.idle = 0
        if self.regate and self.mode == "ON":
            self._start_gate(c, "setpm")
        if (self.mode == "ON" and self.policy == "auto" and self.threshold is not None
                and not pending and c >= self.busy_until and self.idle >= self.threshold):
            self._start_gate(c, "idle")
        served = False
        if pending and (c >= self.busy_until or self.mode != "ON"):
            if self.mode == "OFF":
                self._start_wake(c, "access")
            elif self.mode == "GATING" and not self.wake_requested:
                self.wake_requested = True
                self.events.append((c, "wake", "access"))
            if self.mode == "ON" and c >= self.busy_until:
                served = True
        if self.mode == "OFF":
            self.off_cycles += 1
        else:
            self.on_cycles += 1
        return served

    def count_activity(self, c: int) -> None:
        if c < self.busy_until:
            self.idle = 0
        else:
            self.idle += 1

    def _start_gate(self, c, cause):
        self.regate = False
        self.mode, self.until = ("GATING", c + self.delay) if self.delay else ("OFF", c)
        self.events.append((c, "gate", cause))

    def _start_wake(self, c, cause):
        self.mode, self.until = ("WAKING", c + self.delay) if self.delay else ("ON", c)
        self.events.append((c, "wake", cause))


def tick_reference(delay: int, threshold: int | None, requests, setpms=(), horizon: int = 0):
    """Drive TickUnit with sequential requests [(cycle, duration)] and setpms [(cycle, mode)].

    Returns (service start cycles, on cycles, off cycles, events).
    """
    u = TickUnit(delay, threshold)
    reqs = sorted(requests, key=lambda r: r[0])  # stable: same-cycle requests keep issue order
    sp = dict(setpms)
    starts = []
    i = 0
    end = max([horizon] + [r[0] for r in reqs] + list(sp)) + 1
    c = 0
    while c < end or i < len(reqs):
        pending = i < len(reqs) and reqs[i][0] <= c
        if u.tick(c, pending, sp.get(c)):
            starts.append(c)
            u.busy_until = c + reqs[i][1]
            i += 1
            end = max(end, u.busy_until + 1)
        u.count_activity(c)
        c += 1
        if c > 10 ** 7:
            raise RuntimeError("reference did not terminate")
    return starts, u, c


# -- SRAM segments ---------------------------------------------------------

_ON, _SLEEP, _OFF = 0, 1, 2
_MODE_NAMES = ("ON", "SLEEP", "OFF")
_POL = {p: i for i, p in enumerate(POLICIES)}


class SRAMSegments:
    """Vectorised per-segment state machines with a periodic sleep sweep.

    At every multiple of ``period`` the sweep puts auto segments that have
    been idle for at least ``threshold`` cycles to sleep.  Segments settle
    lazily: state is only brought up to date when a range is touched.
    """

    def __init__(self, n: int, delay_sleep: int, delay_off: int, period: int,
                 threshold: int | None = None, sweep: bool = True):
        self.n = n
        self.delay = (0, delay_sleep, delay_off)
        self.period = period
        self.threshold = period if threshold is None else threshold
        self.sweep = sweep
        self.policy = np.zeros(n, np.int8)
        self.last_end = np.zeros(n, np.int64)
        self.last_ready = np.zeros(n, np.int64)
        self.gate_at = np.full(n, -1, np.int64)
        self.kind = np.zeros(n, np.int8)
        self.wake_at = np.full(n, -1, np.int64)
        self.regate = np.zeros(n, np.int8)  # kind to gate to once a wake completes
        self.hold = np.zeros(n, np.int64)  # cycle the latest access is served
        self.acc_t = np.zeros(n, np.int64)
        self.cycles = np.zeros((3, n), np.int64)
        self.gate_counts = [0, 0, 0]
        self.events: list[GateEvent] = []
        self._dly = np.array(self.delay, np.int64)

    # per-segment timeline arrays for a slice
    def _bounds(self, sl):
        g = self.gate_at[sl]
        d = self._dly[self.kind[sl]]
        off_start = g + d
        w = self.wake_at[sl]
        big = np.iinfo(np.int64).max // 4
        off_end = np.where(w >= 0, np.maximum(off_start, w), big)
        return off_start, off_end, off_end + d

    def _settle(self, sl, t) -> None:
        t = np.broadcast_to(np.asarray(t, np.int64), self.acc_t[sl].shape)
        a = self.acc_t[sl]
        span = np.maximum(0, t - a)
        if not span.any():
            return
        gated = self.gate_at[sl] >= 0
        off_start, off_end, _ = self._bounds(sl)
        lo = np.maximum(a, off_start)
        hi = np.minimum(t, off_end)
        g = np.where(gated, np.maximum(0, hi - lo), 0)
        g = np.minimum(g, span)
        k = self.kind[sl]
        self.cycles[_ON, sl] += span - g
        self.cycles[_SLEEP, sl] += np.where(k == _SLEEP, g, 0)
        self.cycles[_OFF, sl] += np.where(k == _OFF, g, 0)
        self.acc_t[sl] = np.maximum(a, t)

    def _log(self, sl: slice, mask: np.ndarray, cycles: np.ndarray, frm, to, cause: str) -> None:
        """One event per contiguous run of segments sharing a cycle and modes."""
        idx = np.flatnonzero(mask)
        if not len(idx):
            return
        base = sl.start
        frm = np.broadcast_to(np.asarray(frm), mask.shape)
        to = np.broadcast_to(np.asarray(to), mask.shape)
        run_start = idx[0]
        for j in range(1, len(idx) + 1):
            if (j == len(idx) or idx[j] != idx[j - 1] + 1 or cycles[idx[j]] != cycles[run_start]
                    or frm[idx[j]] != frm[run_start] or to[idx[j]] != to[run_start]):
                a, b = base + run_start, base + idx[j - 1] + 1
                self.events.append(GateEvent(int(cycles[run_start]), f"sram[{a}:{b}]",
                                             _MODE_NAMES[frm[run_start]], _MODE_NAMES[to[run_start]], cause))
                if j < len(idx):
                    run_start = idx[j]

    def _start_gate(self, sl, mask, g, kind, cause) -> None:
        if not mask.any():
            return
        g = np.broadcast_to(np.asarray(g, np.int64), mask.shape)
        # callers have settled up to now; anything between now and g + delay is ON
        ga = self.gate_at[sl]
        ga[mask] = g[mask]
        self.gate_at[sl] = ga
        kd = self.kind[sl]
        kd[mask] = kind
        self.kind[sl] = kd
        wa = self.wake_at[sl]
        wa[mask] = -1
        self.wake_at[sl] = wa
        rg = self.regate[sl]
        rg[mask] = 0
        self.regate[sl] = rg
        self.gate_counts[kind] += int(mask.sum())
        self._log(sl, mask, g, _ON, kind, cause)

    def advance(self, sl: slice, t: int) -> None:
        _, _, ready = self._bounds(sl)
        done = (self.gate_at[sl] >= 0) & (self.wake_at[sl] >= 0) & (ready <= t)
        if done.any():
            self._settle(sl, np.where(done, ready, self.acc_t[sl]))
            for arr, val in ((self.gate_at, -1), (self.wake_at, -1)):
                v = arr[sl]
                v[done] = val
                arr[sl] = v
            lr = self.last_ready[sl]
            lr[done] = ready[done]
            self.last_ready[sl] = lr
        # deferred setpm gates fire once the wake has completed; an access served
        # on the ready cycle itself goes first
        rg = self.regate[sl]
        at = np.maximum(self.last_ready[sl], self.hold[sl])
        due = (rg > 0) & (self.gate_at[sl] < 0) & (at < t)
        for k in (_SLEEP, _OFF):
            self._start_gate(sl, due & (rg == k), at, k, "setpm")
        if self.sweep:
            cand = (self.gate_at[sl] < 0) & (self.policy[sl] == _POL["auto"])
            if cand.any():
                earliest = np.maximum(self.last_end[sl] + self.threshold, self.last_ready[sl])
                g = -(-earliest // self.period) * self.period
                hit = cand & (g < t)
                self._start_gate(sl, hit, g, _SLEEP, "idle")
        self._settle(sl, t)

    def request(self, a: int, b: int, t: int) -> int:
        """Segments [a, b) are needed at cycle t; returns the cycle they are all ready."""
        if a >= b:
            return t
        sl = slice(a, b)
        self.advance(sl, t)
        if (self.policy[sl] == _POL["off"]).any():
            raise PolicyViolation(f"sram[{a}:{b}]: access at cycle {t} to software-off segments")
        gated = (self.gate_at[sl] >= 0) & (self.wake_at[sl] < 0)
        if gated.any():
            wa = self.wake_at[sl]
            wa[gated] = t
            self.wake_at[sl] = wa
            self._log(sl, gated, np.full(b - a, t), self.kind[sl], _ON, "access")
        waiting = self.gate_at[sl] >= 0
        r = t
        if waiting.any():
            _, _, ready = self._bounds(sl)
            r = max(t, int(ready[waiting].max()))
        self.hold[sl] = np.maximum(self.hold[sl], r)
        return r

    def touch(self, a: int, b: int, end: int) -> None:
        sl = slice(a, b)
        self.last_end[sl] = np.maximum(self.last_end[sl], end)

    def setpm(self, a: int, b: int, t: int, mode: str) -> None:
        if a >= b:
            return
        sl = slice(a, b)
        self.advance(sl, t)
        gated = (self.gate_at[sl] >= 0) & (self.wake_at[sl] < 0)
        waking = (self.gate_at[sl] >= 0) & (self.wake_at[sl] >= 0)
        if mode in ("off", "sleep"):
            kind = _OFF if mode == "off" else _SLEEP
            self.policy[sl] = _POL[mode]
            # waking segments, or ones an earlier stalled access still needs,
            # gate once the wake is done and the access served
            defer = waking | ((self.gate_at[sl] < 0) & (self.hold[sl] > t))
            rg = self.regate[sl]
            rg[defer] = kind
            rg[~defer & (rg > 0)] = 0  # superseded by the gate below
            self.regate[sl] = rg
            on = (self.gate_at[sl] < 0) & ~defer
            self._start_gate(sl, on, t, kind, "setpm")
            regate = gated & (self.kind[sl] != kind)
            if regate.any():
                self._start_gate(sl, regate, t, kind, "setpm")
        elif mode in ("on", "auto"):
            self.policy[sl] = _POL[mode]
            self.regate[sl] = 0
            if gated.any():
                wa = self.wake_at[sl]
                wa[gated] = t
                self.wake_at[sl] = wa
                self._log(sl, gated, np.full(b - a, t), self.kind[sl], _ON, "setpm")
            if mode == "auto":
                self.last_end[sl] = np.maximum(self.last_end[sl], t)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def finish(self, t: int) -> None:
        self.advance(slice(0, self.n), t)

    def mode_cycles(self) -> dict[str, int]:
        return {m: int(self.cycles[i].sum()) for i, m in enumerate(_MODE_NAMES)}


def sram_segment_range(start_addr: int, end_addr: int, segment_bytes: int) -> tuple[int, int]:
    """Segments overlapping the byte range [start_addr, end_addr)."""
    return start_addr // segment_bytes, ceil_div(end_addr, segment_bytes)


# -- per-cycle reference stand-ins -----------------------------------------

class TickController:
    """Reference-mode stand-in for UnitController: steps a TickUnit every cycle.

    Inputs arriving at cycle ``t`` are buffered and applied when the clock
    passes ``t``.  A request's ready cycle is forecast by stepping a copy of
    the unit with the request pending, which is exact because the machine is
    deterministic and no other input reaches it before the forecast ends.
    """

    def __init__(self, name: str, delay: int, threshold: int | None, policy: str = "auto",
                 gated_mode: str = "OFF"):
        self.name = name
        self.delay = delay
        self.threshold = threshold
        self.gated_mode = gated_mode
        self.u = TickUnit(delay, threshold, policy)
        self.cur = 0
        self.pend = (0, -1)
        self.setpms: dict[int, str] = {}
        self.events: list[GateEvent] = []
        self._seen = 0

    @property
    def on_cycles(self) -> int:
        return self.u.on_cycles

    @property
    def off_cycles(self) -> int:
        return self.u.off_cycles

    @property
    def gates(self) -> int:
        return sum(1 for e in self.events if e.from_mode == "ON")

    def _step_to(self, t: int) -> None:
        while self.cur < t:
            c = self.cur
            self.u.tick(c, self.pend[0] <= c <= self.pend[1], self.setpms.pop(c, None))
            self.u.count_activity(c)
            self.cur += 1
        for c, kind, cause in self.u.events[self._seen:]:
            if kind == "gate":
                self.events.append(GateEvent(c, self.name, "ON", self.gated_mode, cause))
            else:
                self.events.append(GateEvent(c, self.name, self.gated_mode, "ON", cause))
        self._seen = len(self.u.events)

    def request(self, t: int) -> int:
        self._step_to(t)
        if self.u.policy == "off":
            raise PolicyViolation(f"{self.name}: work issued at cycle {t} while software-off")
        u = copy.deepcopy(self.u)
        c = t
        while True:
            u.tick(c, True, self.setpms.get(c))
            if u.mode == "ON":
                break
            u.count_activity(c)
            c += 1
        lo = t if self.pend[1] < t else self.pend[0]
        self.pend = (lo, max(self.pend[1], c))
        return c

    def occupy(self, start: int, end: int) -> None:
        # reserved from now on, like UnitController: no idle gate before ``end``
        self.u.busy_until = max(self.u.busy_until, end)

    def setpm(self, t: int, mode: str) -> None:
        if mode not in ("on", "off", "auto"):
            raise ValueError(f"{self.name}: mode {mode!r} is not valid for a functional unit")
        self._step_to(t)
        self.setpms[t] = mode

    def finish(self, t: int) -> None:
        self._step_to(t)


class _SegState:
    __slots__ = ("state", "kind", "until", "wake_req", "regate", "policy", "last_end",
                 "pend_lo", "pend_hi", "cycles")

    def __init__(self, n: int):
        self.state = np.zeros(n, np.int8)  # 0 ON, 1 GATING, 2 GATED, 3 WAKING
        self.kind = np.zeros(n, np.int8)   # gated kind: _SLEEP or _OFF
        self.until = np.zeros(n, np.int64)
        self.wake_req = np.zeros(n, bool)
        self.regate = np.zeros(n, np.int8)  # kind to gate to once a wake completes
        self.policy = np.zeros(n, np.int8)
        self.last_end = np.zeros(n, np.int64)
        self.pend_lo = np.zeros(n, np.int64)
        self.pend_hi = np.full(n, -1, np.int64)
        self.cycles = np.zeros((3, n), np.int64)

    def slice(self, a: int, b: int) -> "_SegState":
        out = _SegState.__new__(_SegState)
        for k in self.__slots__:
            v = getattr(self, k)
            setattr(out, k, (v[:, a:b] if v.ndim == 2 else v[a:b]).copy())
        return out


class TickSRAM:
    """Reference-mode stand-in for SRAMSegments: every segment stepped every cycle."""

    def __init__(self, n: int, delay_sleep: int, delay_off: int, period: int,
                 threshold: int | None = None, sweep: bool = True):
        self.n = n
        self.d = np.array([0, delay_sleep, delay_off], np.int64)
        self.period = period
        self.threshold = period if threshold is None else threshold
        self.sweep = sweep
        self.s = _SegState(n)
        self.cur = 0
        self.setpms: dict[int, list] = {}
        self.gate_counts = [0, 0, 0]
        self.events: list[GateEvent] = []

    @property
    def cycles(self) -> np.ndarray:
        return self.s.cycles

    def mode_cycles(self) -> dict[str, int]:
        return {m: int(self.s.cycles[i].sum()) for i, m in enumerate(_MODE_NAMES)}

    def _log(self, mask, c, frm, to, cause, base=0):
        idx = np.flatnonzero(mask)
        if not len(idx):
            return
        frm = np.broadcast_to(np.asarray(frm), mask.shape)
        to = np.broadcast_to(np.asarray(to), mask.shape)
        start = idx[0]
        for j in range(1, len(idx) + 1):
            if (j == len(idx) or idx[j] != idx[j - 1] + 1 or frm[idx[j]] != frm[start]
                    or to[idx[j]] != to[start]):
                a, b = base + start, base + idx[j - 1] + 1
                self.events.append(GateEvent(int(c), f"sram[{a}:{b}]", _MODE_NAMES[frm[start]],
                                             _MODE_NAMES[to[start]], cause))
                if j < len(idx):
                    start = idx[j]

    def _gate(self, s, m, c, kind, cause, log, base):
        if not m.any():
            return
        d = self.d[kind]
        s.state[m] = 1 if d else 2
        s.kind[m] = kind
        s.until[m] = c + d
        s.wake_req[m] = False
        s.regate[m] = 0
        if log:
            self.gate_counts[kind] += int(m.sum())
            self._log(m, c, _ON, kind, cause, base)

    def _wake(self, s, m, c, cause, log, base):
        if not m.any():
            return
        if log:
            self._log(m, c, s.kind, _ON, cause, base)
        d = self.d[s.kind]
        s.until[m] = c + d[m]
        s.state[m] = np.where(d[m] > 0, 3, 0)

    def _access_wake(self, s, pend, c, log, base):
        self._wake(s, pend & (s.state == 2), c, "access", log, base)
        gm = pend & (s.state == 1) & ~s.wake_req
        if gm.any():
            if log:
                self._log(gm, c, s.kind, _ON, "access", base)
            s.wake_req[gm] = True

    def _tick(self, s: _SegState, c: int, setpms, log: bool, base: int = 0) -> None:
        st = s.state
        m = (st == 1) & (c >= s.until)
        if m.any():
            w = m & s.wake_req
            s.state[m & ~s.wake_req] = 2
            s.until[w] = c + self.d[s.kind[w]]
            s.state[w] = np.where(self.d[s.kind[w]] > 0, 3, 0)
            s.wake_req[w] = False
        m = (s.state == 3) & (c >= s.until)
        if m.any():
            s.state[m] = 0
        for a0, b0, mode, pre in setpms:
            a, b = max(a0 - base, 0), min(b0 - base, len(st))
            if a >= b:
                continue
            sel = np.zeros(len(st), bool)
            sel[a:b] = True
            held = np.zeros(len(st), bool)
            if pre is not None:  # segments an earlier, still unserved access needs
                held[a:b] = pre[a - (a0 - base):b - (a0 - base)]
            if mode in ("off", "sleep") and held.any():
                s.policy[held] = _POL[mode]
                s.regate[held] = _OFF if mode == "off" else _SLEEP
                sel &= ~held
            s.policy[sel] = _POL[mode]
            if mode in ("off", "sleep"):
                k = _OFF if mode == "off" else _SLEEP
                waking = sel & ((s.state == 3) | ((s.state == 1) & s.wake_req))
                s.regate[waking] = k
                self._gate(s, sel & (s.state == 0), c, k, "setpm", log, base)
                reg = sel & (((s.state == 2) | ((s.state == 1) & ~s.wake_req)) & (s.kind != k))
                self._gate(s, reg, c, k, "setpm", log, base)
            else:
                self._wake(s, sel & (s.state == 2), c, "setpm", log, base)
                gm = sel & (s.state == 1) & ~s.wake_req
                if gm.any():
                    if log:
                        self._log(gm, c, s.kind, _ON, "setpm", base)
                    s.wake_req[gm] = True
                s.regate[sel] = 0
                if mode == "auto":
                    s.last_end[sel] = np.maximum(s.last_end[sel], c)
        pend = (s.pend_lo <= c) & (c <= s.pend_hi)
        if self.sweep and c % self.period == 0:
            m = ((s.state == 0) & (s.policy == _POL["auto"]) & (c >= s.last_end + self.threshold)
                 & ~pend & (s.regate == 0))
            self._gate(s, m, c, _SLEEP, "idle", log, base)
        if pend.any():
            self._access_wake(s, pend, c, log, base)
        # deferred setpm gates start after any access served this cycle
        m = (s.state == 0) & (s.regate > 0) & ~((s.pend_lo <= c) & (c < s.pend_hi))
        if m.any():
            for k in (_SLEEP, _OFF):
                self._gate(s, m & (s.regate == k), c, k, "setpm", log, base)
        gated = s.state == 2
        s.cycles[_ON] += ~gated
        s.cycles[_SLEEP] += gated & (s.kind == _SLEEP)
        s.cycles[_OFF] += gated & (s.kind == _OFF)

    def _step_to(self, t: int) -> None:
        while self.cur < t:
            self._tick(self.s, self.cur, self.setpms.pop(self.cur, ()), True)
            self.cur += 1

    def request(self, a: int, b: int, t: int) -> int:
        if a >= b:
            return t
        self._step_to(t)
        pol = self.s.policy[a:b].copy()
        for sa, sb, m, _ in self.setpms.get(t, ()):  # setpms issued at t land before the access
            pol[max(sa, a) - a:max(min(sb, b) - a, 0)] = _POL[m]
        if (pol == _POL["off"]).any():
            raise PolicyViolation(f"sram[{a}:{b}]: access at cycle {t} to software-off segments")
        f = self.s.slice(a, b)
        f.pend_lo[:] = t
        f.pend_hi[:] = np.iinfo(np.int64).max
        c = t
        while True:
            self._tick(f, c, self.setpms.get(c, ()), False, a)
            # served once ON, or just starting a deferred gate after serving
            if ((f.state == 0) | ((f.state == 1) & ~f.wake_req)).all():
                break
            c += 1
        sl = slice(a, b)
        fresh = self.s.pend_hi[sl] < t
        self.s.pend_lo[sl] = np.where(fresh, t, self.s.pend_lo[sl])
        self.s.pend_hi[sl] = np.maximum(self.s.pend_hi[sl], c)
        return c

    def touch(self, a: int, b: int, end: int) -> None:
        self.s.last_end[a:b] = np.maximum(self.s.last_end[a:b], end)

    def setpm(self, a: int, b: int, t: int, mode: str) -> None:
        if a >= b:
            return
        if mode not in POLICIES:
            raise ValueError(f"unknown mode {mode!r}")
        self._step_to(t)
        # an access already served at t came earlier in program order
        hi = self.s.pend_hi[a:b]
        hi[hi == t] = t - 1
        pre = (self.s.pend_lo[a:b] <= t) & (t <= hi)
        self.setpms.setdefault(t, []).append((a, b, mode, pre if pre.any() else None))

    def finish(self, t: int) -> None:
        self._step_to(t)
