"""Individual-based daily simulation of cattle, badger groups and tile
environments with statutory herd testing.

Every random draw comes from a counter-based generator keyed by
``(process, day, sub-index)``, so two runs that share a seed see the same
random numbers for the same animal slot on the same day even after their
trajectories diverge. This gives common random numbers between scenario arms.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import seeds
from .params import SimParams
from .world import WorldSpec

S, T, I, REMOVED = 0, 1, 2, 3
OTF, SUSPENDED, WITHDRAWN = 0, 1, 2
STATUS_NAMES = ("OTF", "suspended", "withdrawn")
EVENT_SCHEMA = "herdgate.events/1"
EVENT_COLUMNS = ("day", "event", "herd", "animal", "detail")

_PROCESS = {
    "init": 1, "infect": 2, "progress": 3, "badger": 4, "death": 5, "birth": 6,
    "move": 7, "test": 8, "confirm": 9, "premove": 10, "premove_confirm": 11,
}
_MASK64 = (1 << 64) - 1


class ConservationError(RuntimeError):
    pass


def poisson_inv(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Inverse Poisson CDF by sequential search (cheap for small means)."""
    u = np.asarray(u, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), u.shape)
    k = np.zeros(u.shape, dtype=np.int64)
    pk = np.exp(-lam)
    cdf = pk.copy()
    todo = u > cdf
    j = 0
    while todo.any():
        j += 1
        pk = pk * lam / j
        cdf = cdf + pk
        k += todo
        todo &= u > cdf
        if j > 10_000:  # pragma: no cover - guards against u rounding to 1
            break
    return k


def binom_inv(u: np.ndarray, n: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Inverse binomial CDF by sequential search over k = 0..n."""
    u = np.asarray(u, dtype=np.float64)
    n = np.asarray(n, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    k = np.zeros(u.shape, dtype=np.int64)
    q = 1.0 - p
    pk = q ** n
    cdf = pk.copy()
    todo = (u > cdf) & (n > 0)
    j = 0
    ratio = p / np.where(q > 0, q, 1.0)
    while todo.any():
        pk = pk * (n - j) / (j + 1) * ratio
        j += 1
        cdf = cdf + pk
        k += todo
        todo &= (u > cdf) & (k < n)
    return np.where(q > 0, k, n)


class KeyedRandom:
    """Philox generator repositioned to a counter derived from (process, day, sub)."""

    def __init__(self, seed: int):
        key = np.array([seeds.derive(seed, "ibm", "key", 0), seeds.derive(seed, "ibm", "key", 1)], dtype=np.uint64)
        self._bg = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bg)
        self._key = key

    def __call__(self, process: str, day: int, sub: int = 0) -> np.random.Generator:
        counter = np.array([0, day & _MASK64, (_PROCESS[process] << 40) | (sub & 0xFFFFFFFFFF), 0], dtype=np.uint64)
        self._bg.state = {
            "bit_generator": "Philox",
            "state": {"counter": counter, "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


@dataclass(frozen=True)
class TestEvent:
    __test__ = False

    day: int
    herd: int
    kind: str  # routine | follow_up | pre_movement
    severe: bool
    n_tested: int
    n_reactors: int
    n_confirmed: int
    n_infected: int  # T or I animals present at the test
    not_clear: bool


@dataclass
class Breakdown:
    herd: int
    start_day: int
    confirmed: bool = False
    end_day: Optional[int] = None
    n_reactors: int = 0

    @property
    def duration(self) -> Optional[int]:
        return None if self.end_day is None else self.end_day - self.start_day


class World:
    """Mutable simulation state. Create with :func:`init_world`."""

    def __init__(self, spec: WorldSpec, params: SimParams, seed: int, record_events: bool = False,
                 check_conservation: bool = True):
        self.spec = spec
        self.params = params
        self.seed = int(seed)
        self.day = 0
        self.rand = KeyedRandom(seed)
        self.record_events = record_events
        self.check_conservation = check_conservation
        self.events: list = []
        self.tests: list = []
        self.breakdowns: list = []
        self.movements_executed = 0
        self.movements_blocked = 0
        self.cumulative_infections = 0
        self.infected_animal_days = 0
        self.removed = {"reactor": 0, "death": 0}
        self.births = 0

        H = spec.n_herds
        self.herd_ids = [h.id for h in spec.herds]
        self.herd_tile = np.array([h.tile for h in spec.herds], dtype=np.int64)
        self._move_rates = np.array([e.rate for e in spec.movements], dtype=np.float64)
        self._move_p0 = np.exp(-self._move_rates)
        self.herd_area = [h.area for h in spec.herds]
        self.status = np.zeros(H, dtype=np.int8)
        self.clear_streak = np.zeros(H, dtype=np.int64)
        self.open_breakdown = np.full(H, -1, dtype=np.int64)
        self.next_test = np.zeros(H, dtype=np.int64)

        sizes = np.array([h.size for h in spec.herds], dtype=np.int64)
        n0 = int(sizes.sum())
        self._cap = max(16, 2 * n0)
        self.herd_of = np.full(self._cap, -1, dtype=np.int64)
        self.state = np.zeros(self._cap, dtype=np.int8)
        self.n_slots = n0
        self.herd_of[:n0] = np.repeat(np.arange(H), sizes)
        start = 0
        for h in spec.herds:
            self.state[start:start + h.initial_I] = I
            self.state[start + h.initial_I:start + h.initial_I + h.initial_T] = T
            start += h.size
        self.initial_animals = n0
        self._death_days: dict = {}
        self._schedule_deaths(np.arange(n0), "init", 0)

        g = self.rand("init", 0, 0)
        u = g.random(H)
        for k, h in enumerate(spec.herds):
            interval = params.interval_for(h.area)
            self.next_test[k] = h.first_test_day if h.first_test_day is not None else int(u[k] * interval)

        g = self.rand("init", 0, 1)
        x = spec.tile_groups
        counts = np.floor(x).astype(np.int64) + (g.random(spec.n_tiles) < x - np.floor(x))
        self.group_tile = np.repeat(np.arange(spec.n_tiles), counts)
        n_groups = len(self.group_tile)
        self.group_N = np.full(n_groups, spec.badger_group_size, dtype=np.int64)
        g = self.rand("init", 0, 2)
        self.group_I = g.binomial(self.group_N, spec.badger_initial_prevalence) if n_groups else np.zeros(0, np.int64)
        self.group_S = self.group_N - self.group_I
        self.E = np.full(spec.n_tiles, float(spec.initial_environment))

    # ------------------------------------------------------------ helpers

    @property
    def n_herds(self) -> int:
        return len(self.herd_ids)

    @property
    def n_groups(self) -> int:
        return len(self.group_tile)

    def alive_mask(self) -> np.ndarray:
        return self.herd_of[: self.n_slots] >= 0

    def herd_sizes(self) -> np.ndarray:
        h = self.herd_of[: self.n_slots]
        return np.bincount(h[h >= 0], minlength=self.n_herds)

    def herd_counts(self, state: int) -> np.ndarray:
        h = self.herd_of[: self.n_slots]
        m = (h >= 0) & (self.state[: self.n_slots] == state)
        return np.bincount(h[m], minlength=self.n_herds)

    def roster(self, herd: int) -> np.ndarray:
        return np.flatnonzero(self.herd_of[: self.n_slots] == herd)

    def _log(self, event: str, herd: int, animal: int = -1, detail: str = "") -> None:
        if self.record_events:
            self.events.append((self.day, event, self.herd_ids[herd] if herd >= 0 else "", animal, detail))

    def _add_animals(self, herd: int, k: int) -> None:
        need = self.n_slots + k
        if need > self._cap:
            new_cap = max(need, 2 * self._cap)
            self.herd_of = np.concatenate([self.herd_of, np.full(new_cap - self._cap, -1, dtype=np.int64)])
            self.state = np.concatenate([self.state, np.zeros(new_cap - self._cap, dtype=np.int8)])
            self._cap = new_cap
        self.herd_of[self.n_slots:need] = herd
        self.state[self.n_slots:need] = S
        for a in range(self.n_slots, need):
            self._log("birth", herd, a)
        born = np.arange(self.n_slots, need)
        self.n_slots = need
        self.births += k
        self._schedule_deaths(born, "death", herd)

    def _schedule_deaths(self, animals: np.ndarray, stream: str, sub: int) -> None:
        # daily death hazard -> geometric lifetime drawn once per animal
        rate = self.params.death_rate
        if rate <= 0 or not len(animals):
            return
        g = self.rand(stream, self.day, sub) if stream != "init" else self.rand("init", 0, 3)
        when = self.day + g.geometric(-np.expm1(-rate), len(animals)) - 1
        for dday, a in zip(when.tolist(), animals.tolist()):
            self._death_days.setdefault(dday, []).append(a)

    def _remove(self, animals: np.ndarray, reason: str) -> None:
        if len(animals):
            self.herd_of[animals] = -1
            self.state[animals] = REMOVED
            self.removed[reason] += len(animals)

    def world_hash(self) -> str:
        h = hashlib.sha256()
        n = self.n_slots
        for arr in (self.herd_of[:n], self.state[:n], self.status, self.next_test, self.group_S, self.group_I, self.E):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.day).encode())
        return h.hexdigest()

    def assert_conservation(self) -> None:
        alive = int(np.count_nonzero(self.alive_mask()))
        removed = sum(self.removed.values())
        if alive + removed != self.initial_animals + self.births:
            raise ConservationError(
                f"day {self.day}: {alive} alive + {removed} removed != {self.initial_animals} initial + {self.births} born"
            )

    # ------------------------------------------------------------ testing

    def _status_after_test(self, herd: int, not_clear: bool, n_reactors: int, n_confirmed: int) -> None:
        p = self.params
        bd = self.open_breakdown[herd]
        if not_clear:
            if bd < 0:
                self.breakdowns.append(Breakdown(herd=herd, start_day=self.day))
                bd = len(self.breakdowns) - 1
                self.open_breakdown[herd] = bd
                self.status[herd] = SUSPENDED
                self._log("breakdown_start", herd)
            b = self.breakdowns[bd]
            b.n_reactors += n_reactors
            if n_confirmed and not b.confirmed:
                b.confirmed = True
                self.status[herd] = WITHDRAWN
                self._log("breakdown_confirmed", herd)
            self.clear_streak[herd] = 0
            self.next_test[herd] = self.day + p.follow_up_interval
        elif bd >= 0:
            self.clear_streak[herd] += 1
            if self.clear_streak[herd] >= p.clear_tests_to_restore:
                self.breakdowns[bd].end_day = self.day
                self.open_breakdown[herd] = -1
                self.status[herd] = OTF
                self.clear_streak[herd] = 0
                self.next_test[herd] = self.day + p.interval_for(self.herd_area[herd])
                self._log("otf_restored", herd)
            else:
                self.next_test[herd] = self.day + p.follow_up_interval
        else:
            self.next_test[herd] = self.day + p.interval_for(self.herd_area[herd])

    def _test_animals(self, animals: np.ndarray, severe: bool, test_stream: str, confirm_stream: str, sub: int):
        """Return (reactors, confirmed mask) for ``animals`` tested today."""
        probs = np.array(self.params.test.probabilities(severe))
        st = self.state[animals]
        u = self.rand(test_stream, self.day, sub).random(len(animals))
        react = u < probs[st]
        reactors = animals[react]
        conf_p = np.array([0.0, self.params.confirm_T, self.params.confirm_I])
        uc = self.rand(confirm_stream, self.day, sub).random(len(animals))[react]
        confirmed = uc < conf_p[self.state[reactors]]
        return reactors, confirmed

    def run_herd_test(self, herd: int, interpretation: Optional[str] = None, kind: Optional[str] = None) -> TestEvent:
        """Whole-herd test on the current day; reactors are removed to slaughter."""
        if interpretation is None:
            severe = self.status[herd] != OTF
        elif interpretation in ("standard", "severe"):
            severe = interpretation == "severe"
        else:
            raise ValueError("interpretation must be 'standard' or 'severe'")
        if kind is None:
            kind = "follow_up" if self.open_breakdown[herd] >= 0 else "routine"
        animals = self.roster(herd)
        n_infected = int(np.count_nonzero(self.state[animals] != S))
        reactors, confirmed = self._test_animals(animals, severe, "test", "confirm", herd)
        for a, c in zip(reactors, confirmed):
            self._log("reactor", herd, int(a), f"state={'STI'[self.state[a]]};confirmed={int(c)}")
        self._remove(reactors, "reactor")
        ev = TestEvent(
            day=self.day, herd=herd, kind=kind, severe=bool(severe), n_tested=len(animals),
            n_reactors=len(reactors), n_confirmed=int(confirmed.sum()), n_infected=n_infected,
            not_clear=len(reactors) > 0,
        )
        self.tests.append(ev)
        self._log("test", herd, -1,
                  f"kind={kind};severe={int(severe)};tested={ev.n_tested};reactors={ev.n_reactors};"
                  f"confirmed={ev.n_confirmed};infected={n_infected};result={'not_clear' if ev.not_clear else 'clear'}")
        self._status_after_test(herd, ev.not_clear, ev.n_reactors, ev.n_confirmed)
        return ev

    # ------------------------------------------------------------ daily update

    def step(self) -> None:
        p = self.params
        d = self.day
        n = self.n_slots
        H = self.n_herds
        hp1 = self.herd_of[:n] + 1
        st = self.state[:n]

        # start-of-day counts; removed animals fall in row 0
        counts = np.bincount(hp1 * 4 + st, minlength=(H + 1) * 4).reshape(H + 1, 4)[1:]
        N_h = counts[:, :3].sum(axis=1)
        I_h = counts[:, I]
        n_tiles = self.spec.n_tiles
        I_tile = np.bincount(self.herd_tile, weights=I_h, minlength=n_tiles)
        I_b_tile = np.bincount(self.group_tile, weights=self.group_I, minlength=n_tiles)

        # (i) cattle infection S -> T
        new_T = None
        if p.beta_c > 0 or p.beta_e > 0:
            lam = p.beta_c * I_h / np.maximum(N_h, 1) + p.beta_e * self.E[self.herd_tile]
            if np.any((lam > 0) & (counts[:, S] > 0)):
                prob = np.zeros(H + 1)
                prob[1:] = -np.expm1(-lam)
                u = self.rand("infect", d).random(n)
                new_T = np.flatnonzero((st == S) & (u < prob[hp1]))

        # (ii) progression T -> I
        new_I = None
        if p.sigma > 0 and counts[:, T].any():
            u = self.rand("progress", d).random(n)
            new_I = np.flatnonzero((st == T) & (u < -np.expm1(-p.sigma)))

        # (iv) badger groups S -> I
        new_b = None
        if self.n_groups and (p.badger_beta > 0 or p.badger_beta_e > 0):
            lam_g = p.badger_beta * self.group_I / np.maximum(self.group_N, 1) + p.badger_beta_e * self.E[self.group_tile]
            prob_g = -np.expm1(-lam_g)
            m = (self.group_S > 0) & (prob_g > 0)
            if m.any():
                u = self.rand("badger", d).random(self.n_groups)
                new_b = np.zeros(self.n_groups, dtype=np.int64)
                new_b[m] = binom_inv(u[m], self.group_S[m], prob_g[m])

        # (iii) environment
        self.E = self.E * np.exp(-p.delta) + p.eps_cattle * I_tile + p.eps_badger * I_b_tile

        if new_T is not None:
            st[new_T] = T
            self.cumulative_infections += len(new_T)
            if self.record_events:
                for a in new_T:
                    self._log("infection", int(hp1[a] - 1), int(a))
        if new_I is not None:
            st[new_I] = I
            if self.record_events:
                for a in new_I:
                    self._log("infectious", int(hp1[a] - 1), int(a))
        if new_b is not None:
            self.group_S -= new_b
            self.group_I += new_b

        # demography
        due = self._death_days.pop(d, None)
        if due is not None:
            due = np.array(due, dtype=np.int64)
            dead = due[self.herd_of[due] >= 0]
            if self.record_events:
                for a in dead:
                    self._log("death", int(self.herd_of[a]), int(a))
            self._remove(dead, "death")
        if p.birth_rate > 0:
            u = self.rand("birth", d).random(H)
            lam_b = p.birth_rate * N_h
            m = (lam_b > 0) & (u > np.exp(-lam_b))
            if m.any():
                k = poisson_inv(u[m], lam_b[m])
                for h, kk in zip(np.flatnonzero(m), k):
                    self._add_animals(int(h), int(kk))

        # (v) movements
        if self.spec.movements:
            self._movements()

        # (vi) scheduled whole-herd tests
        for h in np.flatnonzero(self.next_test == d):
            if np.any(self.herd_of[: self.n_slots] == h):
                self.run_herd_test(int(h))
            else:
                self.next_test[h] = d + p.interval_for(self.herd_area[h])

        sc = np.bincount(self.state[: self.n_slots], minlength=4)
        self.infected_animal_days += int(sc[T] + sc[I])
        self.day += 1
        if self.check_conservation:
            self.assert_conservation()

    def _movements(self) -> None:
        d = self.day
        edges = self.spec.movements
        u = self.rand("move", d, 0).random(len(edges))
        active = np.flatnonzero(u > self._move_p0)
        if not len(active):
            return
        batches = poisson_inv(u[active], self._move_rates[active])
        for k, e_idx in zip(batches, active):
            e = edges[e_idx]
            if self.status[e.src] != OTF:
                self.movements_blocked += 1
                self._log("movement_blocked", e.src, -1, f"dst={self.herd_ids[e.dst]}")
                continue
            roster = self.roster(e.src)
            if not len(roster):
                continue
            m = min(int(k) * e.batch, len(roster))
            keys = self.rand("move", d, 1 + int(e_idx)).random(len(roster))
            chosen = np.sort(roster[np.argsort(keys, kind="stable")[:m]])
            if self.params.pre_movement_test:
                reactors, confirmed = self._test_animals(chosen, False, "premove", "premove_confirm", int(e_idx))
                n_inf = int(np.count_nonzero(self.state[chosen] != S))
                self._remove(reactors, "reactor")
                ev = TestEvent(day=d, herd=e.src, kind="pre_movement", severe=False, n_tested=len(chosen),
                               n_reactors=len(reactors), n_confirmed=int(confirmed.sum()), n_infected=n_inf,
                               not_clear=len(reactors) > 0)
                self.tests.append(ev)
                self._log("test", e.src, -1,
                          f"kind=pre_movement;severe=0;tested={ev.n_tested};reactors={ev.n_reactors};"
                          f"confirmed={ev.n_confirmed};infected={n_inf};result={'not_clear' if ev.not_clear else 'clear'}")
                if ev.not_clear:
                    self._status_after_test(e.src, True, ev.n_reactors, ev.n_confirmed)
                    continue
            self.herd_of[chosen] = e.dst
            self.movements_executed += 1
            for a in chosen:
                self._log("move", e.src, int(a), f"dst={self.herd_ids[e.dst]}")

    def run(self, days: int) -> "World":
        for _ in range(days):
            self.step()
        return self

    # ------------------------------------------------------------ outputs

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {EVENT_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        w.writerows(self.events)
        return buf.getvalue()

    def write_events(self, path) -> None:
        Path(path).write_text(self.events_csv(), encoding="utf-8")

    def event_hash(self) -> str:
        return hashlib.sha256(self.events_csv().encode("utf-8")).hexdigest()


def init_world(spec: WorldSpec, params: SimParams, seed: int, record_events: bool = False,
               check_conservation: bool = True) -> World:
    return World(spec, params, seed, record_events=record_events, check_conservation=check_conservation)


def step_day(world: World) -> World:
    world.step()
    return world


def run_herd_test(world: World, herd: int, interpretation: Optional[str] = None) -> TestEvent:
    return world.run_herd_test(herd, interpretation)
