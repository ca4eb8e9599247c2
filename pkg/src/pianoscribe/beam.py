"""Search-frontier machinery for high dimensional beam decoding.

`top_k_configs` enumerates binary pitch configurations in non-increasing
log-probability under an independent-Bernoulli product. `HashedBeam` is
the capacity-bounded frontier: a global queue of width w plus one queue
of depth k per hash key; an inserted entry must fit both, and evictions
remove the victim from both structures.

Ordering is total and deterministic: higher score wins, ties go to the
lexicographically smaller bit pattern.
"""

import heapq
import itertools

import numpy as np

PROB_CLAMP = 1e-6


def clamp_probs(probs):
    return np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bernoulli_log_prob(probs, config):
    """log P(config) under independent Bernoulli probabilities."""
    p = clamp_probs(probs)
    c = np.asarray(config, dtype=float)
    return float(np.sum(c * np.log(p) + (1 - c) * np.log1p(-p)))


def top_k_configs(frame_probs):
    """Yield (config, log_prob) pairs in non-increasing log-probability.

    The first item is the per-bit argmax (ties broken towards 0 so the
    lexicographically smaller pattern comes first); subsequent items are
    produced by flipping bit subsets in increasing total cost. Yields all
    2^D distinct configurations before exhausting.
    """
    p = clamp_probs(frame_probs)
    dim = p.size
    log_p = np.log(p)
    log_q = np.log1p(-p)
    base = (p > 0.5).astype(np.uint8)
    base_lp = float(np.where(base, log_p, log_q).sum())
    cost = np.abs(log_p - log_q)          # cost of flipping each bit
    order = np.argsort(cost, kind="stable")

    def pattern(flips):
        cfg = base.copy()
        for j in flips:
            cfg[order[j]] ^= 1
        return tuple(cfg)

    yield base.copy(), base_lp
    if dim == 0:
        return
    # heap of bit-flip subsets over cost-sorted indices; each subset is
    # generated exactly once via the (append last+1 | bump last) expansion.
    # Exact-cost ties are drained as a class and emitted in ascending
    # pattern order: successors never cost less than their parent, so the
    # class is complete once the heap minimum exceeds it.
    heap = [(float(cost[order[0]]), pattern((0,)), (0,))]
    while heap:
        c0 = heap[0][0]
        batch = []
        while heap and heap[0][0] == c0:
            _, pat, flips = heapq.heappop(heap)
            batch.append(pat)
            last = flips[-1]
            if last + 1 < dim:
                grown = flips + (last + 1,)
                heapq.heappush(
                    heap,
                    (c0 + float(cost[order[last + 1]]), pattern(grown), grown))
                bumped = flips[:-1] + (last + 1,)
                heapq.heappush(
                    heap,
                    (c0 - float(cost[order[last]]) + float(cost[order[last + 1]]),
                     pattern(bumped), bumped))
        batch.sort()
        for pat in batch:
            yield np.array(pat, dtype=np.uint8), base_lp - c0


class BeamEntry:
    """One partial solution: cumulative score, emitted frames, model state."""

    __slots__ = ("score", "parent", "frame", "length", "mlm_state", "_flat",
                 "_bytes")

    def __init__(self, score, parent, frame, mlm_state=None):
        self.score = score
        self.parent = parent                 # previous BeamEntry or None
        self.frame = frame                   # tuple of 0/1, or None at root
        self.length = 0 if parent is None else parent.length + 1
        self.mlm_state = mlm_state
        self._flat = None
        self._bytes = None

    def frames(self):
        """Emitted sequence, oldest first."""
        out = []
        node = self
        while node.parent is not None:
            out.append(node.frame)
            node = node.parent
        out.reverse()
        return out

    def flat_pattern(self):
        """Concatenated bit pattern of the whole sequence (tie-break key)."""
        if self._flat is None:
            node = self
            parts = []
            while node.parent is not None:
                parts.append(node.frame)
                node = node.parent
            parts.reverse()
            self._flat = tuple(itertools.chain.from_iterable(parts))
        return self._flat

    def last_frames(self, n):
        """Tuple of the final min(n, length) frames, oldest first."""
        out = []
        node = self
        while node.parent is not None and len(out) < n:
            out.append(node.frame)
            node = node.parent
        out.reverse()
        return tuple(out)

    def seq_bytes(self):
        """Whole emitted sequence as one byte string (one byte per bit).

        An injective encoding of frames(), cached and built incrementally
        from the parent's cache, so full-sequence hash keys stay cheap.
        """
        if self._bytes is None:
            node, parts = self, []
            while node.parent is not None and node._bytes is None:
                parts.append(node.frame)
                node = node.parent
            prefix = node._bytes if node._bytes is not None else b""
            self._bytes = prefix + b"".join(bytes(f) for f in reversed(parts))
        return self._bytes

    def sort_key(self):
        return (-self.score, self.flat_pattern())


def cmp_entries(a, b):
    """-1 if a ranks before b (better), 1 if after, 0 if identical.

    Higher score first; exact score ties go to the lexicographically
    smaller flattened bit pattern. The pattern is only materialized on a
    tie, keeping the common case O(1).
    """
    if a.score > b.score:
        return -1
    if a.score < b.score:
        return 1
    pa, pb = a.flat_pattern(), b.flat_pattern()
    if pa < pb:
        return -1
    if pa > pb:
        return 1
    return 0


def hash_last_n(entry, n):
    """Hash key: the last n emitted frames (n=None means the full sequence).

    Full-sequence keys use the cached byte encoding — same equivalence
    classes as the frame tuples, without re-walking the whole chain.
    """
    if n is None:
        return entry.seq_bytes()
    if n < 1:
        raise ValueError("n must be >= 1")
    return entry.last_frames(n)


class HashedBeam:
    """Beam frontier with per-hash-key pruning."""

    def __init__(self, width, key_depth, key_fn):
        if width < 1 or key_depth < 1:
            raise ValueError("width and key depth must be >= 1")
        self.width = width
        self.key_depth = key_depth
        self.key_fn = key_fn
        self.queue = []                  # sorted by sort_key, best first
        self.hash_queues = {}            # key -> sorted list, best first
        self._keys = {}                  # id(entry) -> key

    def __len__(self):
        return len(self.queue)

    def entries(self):
        return list(self.queue)

    def best(self):
        return self.queue[0]

    @staticmethod
    def _insert_sorted(lst, entry):
        lo, hi = 0, len(lst)
        while lo < hi:
            mid = (lo + hi) // 2
            if cmp_entries(lst[mid], entry) < 0:
                lo = mid + 1
            else:
                hi = mid
        lst.insert(lo, entry)

    def insert(self, entry):
        """Insert iff the entry fits both its hash queue and the global
        queue; restore capacities by evicting minima from both structures."""
        key = self.key_fn(entry)
        hash_q = self.hash_queues.setdefault(key, [])
        fits_queue = (len(self.queue) < self.width
                      or cmp_entries(entry, self.queue[-1]) <= 0)
        fits_hash = (len(hash_q) < self.key_depth
                     or cmp_entries(entry, hash_q[-1]) <= 0)
        if not (fits_queue and fits_hash):
            if not hash_q:
                del self.hash_queues[key]
            return False
        self._keys[id(entry)] = key
        self._insert_sorted(hash_q, entry)
        if len(hash_q) > self.key_depth:
            victim = hash_q.pop()
            self._keys.pop(id(victim), None)
            if victim is entry:
                if not hash_q:
                    del self.hash_queues[key]
                return False
            self._remove_from_queue(victim)
        self._insert_sorted(self.queue, entry)
        if len(self.queue) > self.width:
            victim = self.queue.pop()
            vkey = self._keys.pop(id(victim), None)
            if vkey is not None:
                self._remove_from_hash(victim, vkey)
            if victim is entry:
                return False
        return True

    def _remove_from_queue(self, entry):
        for i, item in enumerate(self.queue):
            if item is entry:
                del self.queue[i]
                return

    def _remove_from_hash(self, entry, key):
        lst = self.hash_queues.get(key)
        if lst is None:
            return
        for i, item in enumerate(lst):
            if item is entry:
                del lst[i]
                break
        if not lst:
            del self.hash_queues[key]

    def audit(self):
        """Check the structural invariants; raises AssertionError on breach."""
        assert len(self.queue) <= self.width
        seen = set()
        for key, lst in self.hash_queues.items():
            assert 1 <= len(lst) <= self.key_depth
            assert lst == sorted(lst, key=lambda e: e.sort_key())
            for item in lst:
                assert self.key_fn(item) == key
                assert any(item is q for q in self.queue), "hash entry missing from queue"
                assert id(item) not in seen
                seen.add(id(item))
        assert self.queue == sorted(self.queue, key=lambda e: e.sort_key())
        for item in self.queue:
            assert id(item) in seen, "queue entry missing from hash queues"
