"""Pure-Python PCG64 with SeedSequence seeding, written from the published
algorithm descriptions. Used only as an independent oracle for ``Rng``."""

M32 = 0xFFFFFFFF
M64 = (1 << 64) - 1
M128 = (1 << 128) - 1
PCG_MULT = 0x2360ED051FC65DA44385DF649FCCF645


def seed_sequence_words(entropy, n_words, pool_size=4):
    init_a, mult_a, init_b, mult_b = 0x43B0D7E5, 0x931E8875, 0x8B51F9DD, 0x58F38DED
    mix_l, mix_r = 0xCA01F9DD, 0x4973F715
    hc = [init_a]

    def hashmix(v):
        v ^= hc[0]
        hc[0] = (hc[0] * mult_a) & M32
        v = (v * hc[0]) & M32
        return v ^ (v >> 16)

    def mix(x, y):
        r = (mix_l * x - mix_r * y) & M32
        return r ^ (r >> 16)

    pool = [hashmix(entropy[i] if i < len(entropy) else 0) for i in range(pool_size)]
    for src in range(pool_size):
        for dst in range(pool_size):
            if src != dst:
                pool[dst] = mix(pool[dst], hashmix(pool[src]))
    for src in range(pool_size, len(entropy)):
        for dst in range(pool_size):
            pool[dst] = mix(pool[dst], hashmix(entropy[src]))
    out, h = [], init_b
    for i in range(n_words):
        v = pool[i % pool_size] ^ h
        h = (h * mult_b) & M32
        v = (v * h) & M32
        out.append(v ^ (v >> 16))
    return out


def pcg64_raw(seed, n):
    entropy, x = [], seed
    while True:
        entropy.append(x & M32)
        x >>= 32
        if x == 0:
            break
    w = seed_sequence_words(entropy, 8)
    w64 = [w[2 * i] | (w[2 * i + 1] << 32) for i in range(4)]
    initstate = (w64[0] << 64) | w64[1]
    inc = ((((w64[2] << 64) | w64[3]) << 1) | 1) & M128
    state = (0 * PCG_MULT + inc) & M128
    state = (state + initstate) & M128
    state = (state * PCG_MULT + inc) & M128
    out = []
    for _ in range(n):
        state = (state * PCG_MULT + inc) & M128
        xs = ((state >> 64) ^ state) & M64
        rot = state >> 122
        out.append(((xs >> rot) | (xs << ((64 - rot) & 63))) & M64)
    return out
