"""Counter-based random streams keyed by (master seed, tag, index...)."""
import numpy as np

# stream tags; keep distinct so no stream is reused across experiment kinds
TAG_TWO_POINT = 1
TAG_PROFILE = 2
TAG_FIELD_PARTICLE = 3
TAG_SDE_BLOCK = 4
TAG_INITIAL = 5
TAG_MISC = 6


def seed_sequence(master: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))


def derive_seed(master: int, *keys: int) -> int:
    """A 63-bit integer seed for the stream ``(master, *keys)``."""
    state = seed_sequence(master, *keys).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def generator(seed: int | np.random.SeedSequence, *keys: int) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = seed_sequence(seed, *keys)
    return np.random.Generator(np.random.Philox(ss))
